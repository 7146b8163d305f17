//! Seeded random instances for property tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::feasibility::{is_feasible, FeasibilityError};
use crate::network::{FlowNetwork, LinkSpec, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq)]
pub struct RandomNetworkSpec {
    /// Range of non-destination node counts (inclusive).
    pub nodes: (usize, usize),
    pub max_destinations: usize,
    /// Extra links on top of the spanning ones, as a range (inclusive).
    pub extra_links: (usize, usize),
    pub lanes: (f64, f64),
    pub max_speed: (f64, f64),
}

impl Default for RandomNetworkSpec {
    fn default() -> Self {
        Self {
            nodes: (2, 8),
            max_destinations: 2,
            extra_links: (0, 6),
            lanes: (0.5, 4.0),
            max_speed: (0.6, 1.0),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random valid network. Node 1 is always an origin; every non-destination
/// node has a link towards a higher-numbered node, which guarantees a path to
/// a destination. Extra links may close cycles or duplicate existing links.
pub fn random_network<R: Rng>(rng: &mut R, spec: &RandomNetworkSpec) -> FlowNetwork {
    let n = rng.random_range(spec.nodes.0..=spec.nodes.1);
    let d = rng.random_range(1..=spec.max_destinations.max(1));
    let total = (n + d) as u32;
    let lanes = |rng: &mut R| rng.random_range(spec.lanes.0..=spec.lanes.1);
    let mut links = Vec::new();
    let link = |rng: &mut R, t: u32, h: u32| {
        let c = lanes(rng);
        let u = rng.random_range(spec.max_speed.0..=spec.max_speed.1);
        LinkSpec::new(t, h, c, u)
    };
    for v in 1..=n as u32 {
        let h = rng.random_range(v + 1..=total);
        links.push(link(rng, v, h));
    }
    for dest in n as u32 + 1..=total {
        if !links.iter().any(|l| l.head == NodeId(dest)) {
            let t = rng.random_range(1..=n as u32);
            links.push(link(rng, t, dest));
        }
    }
    let extra = rng.random_range(spec.extra_links.0..=spec.extra_links.1);
    for _ in 0..extra {
        let t = rng.random_range(1..=n as u32);
        // Never into node 1, so it stays an origin.
        let h = rng.random_range(2..=total);
        if h != t {
            links.push(link(rng, t, h));
        }
    }
    let nodes: Vec<NodeId> = (1..=total).map(NodeId).collect();
    FlowNetwork::build(&nodes, &links).expect("construction keeps the network valid")
}

/// Random origin inflows scaled to `fraction` of the largest feasible multiple
/// under `capacities`. Returns a per-node-index vector.
pub fn random_feasible_inflow<R: Rng>(
    rng: &mut R,
    network: &FlowNetwork,
    capacities: &[f64],
    fraction: f64,
) -> Result<Vec<f64>, FeasibilityError> {
    let mut base = vec![0.0; network.node_count()];
    for v in 0..network.node_count() {
        if network.kind_at(v) == NodeKind::Origin {
            base[v] = rng.random_range(0.1..1.0);
        }
    }
    // Largest s with s * base feasible: bisection on the max-flow check.
    let (mut lo, mut hi) = (
        0.0,
        capacities.iter().sum::<f64>() / base.iter().sum::<f64>(),
    );
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let scaled: Vec<f64> = base.iter().map(|b| b * mid).collect();
        if is_feasible(network, capacities, &scaled)?.min_slack >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(base.iter().map(|b| b * lo * fraction).collect())
}
