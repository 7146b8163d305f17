//! Criterion benchmarks for flownet-core; see `benches/`.
