//! Trace tables and run summaries.

use std::fmt::Write as _;
use std::io::Write;

use flownet_core::{
    mass_residual, FlowNetwork, NetworkPhysics, SimulationTrace, TransferVerdict, Verdict,
};

pub const TRACE_HEADER: [&str; 6] = ["t", "link_id", "rho", "u", "flow", "failed"];

/// Writes one row per (sample, link) in time order. `flow` is the flow
/// actually leaving the link, zero while its head node is blocked.
pub fn write_trace<W: Write>(trace: &SimulationTrace, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for s in &trace.samples {
        for e in 0..s.densities.len() {
            w.write_record([
                s.time.to_string(),
                e.to_string(),
                s.densities[e].to_string(),
                s.speeds[e].to_string(),
                s.outflows[e].to_string(),
                u8::from(s.failed[e]).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Transferring => "transferring",
        Verdict::NonTransferring(_) => "non_transferring",
        Verdict::Undetermined => "undetermined",
    }
}

/// Summary of a run as `key: value` lines. Repeated keys (`failure`, `peak`)
/// carry space-separated `name=value` fields.
pub fn summary(
    network: &FlowNetwork,
    physics: &NetworkPhysics,
    trace: &SimulationTrace,
    verdict: &TransferVerdict,
    window: f64,
    eps_rel: f64,
) -> String {
    let mut s = String::new();
    let residual = mass_residual(trace);
    let _ = writeln!(s, "verdict: {}", verdict_name(verdict.verdict));
    if let Verdict::NonTransferring(node) = verdict.verdict {
        let _ = writeln!(s, "disconnected_origin: {node}");
    }
    let _ = writeln!(s, "throughput: {}", verdict.throughput);
    let _ = writeln!(s, "total_inflow: {}", trace.total_inflow);
    let _ = writeln!(s, "window: {window}");
    let _ = writeln!(s, "eps_rel: {eps_rel}");
    let _ = writeln!(s, "failures: {}", trace.failures.len());
    for f in &trace.failures {
        let link = network.link(f.link);
        let _ = writeln!(
            s,
            "failure: link={} tail={} head={} time={}",
            f.link, link.tail, link.head, f.time
        );
    }
    for (e, p) in physics.links().iter().enumerate() {
        let _ = writeln!(
            s,
            "peak: link={e} rho={} critical={} jam={}",
            trace.peak_densities[e], p.critical_density, p.jam_density
        );
    }
    let _ = writeln!(s, "mass_residual_max: {}", residual.max_abs());
    let _ = writeln!(s, "mass_residual_integrated: {}", residual.integrated_abs());
    let _ = writeln!(s, "dt: {}", trace.dt);
    let _ = writeln!(s, "horizon: {}", trace.horizon);
    s
}

/// Parses `key: value` lines; repeated keys keep every value in order.
pub fn parse_summary(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
