//! Feasibility of external inflows under given link capacities.
//!
//! The inflow vector `lambda` is feasible when every nonempty set `U` of
//! non-destination nodes can push its own inflow out:
//! `sum_{e in E_U^+} cap_e - sum_{v in U} lambda_v >= 0`. The smallest such
//! slack and a set achieving it are found with breadth-first augmenting-path
//! max flow on an auxiliary graph (super source feeding the origins, super
//! sink fed by the destinations).

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::network::{FlowNetwork, NodeId, NodeKind, NodeSet};

/// Residual capacity below which an arc counts as saturated.
pub const SATURATION_TOL: f64 = 1e-12;
/// Largest non-destination node count accepted by [`brute_force_feasible`].
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeasibilityError {
    #[error("{what} at index {index} is negative or not finite")]
    NegativeInput { what: &'static str, index: usize },
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("external inflow declared at non-origin node {0}")]
    InflowAtNonOrigin(NodeId),
    #[error("{nodes} non-destination nodes exceed the enumeration limit of {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("max flow did not converge within {0} augmentations")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// Minimum cut slack over nonempty node sets without destinations.
    pub min_slack: f64,
    /// A set achieving `min_slack`.
    pub witness_cut: NodeSet,
    pub max_flow_value: f64,
}

/// Tolerance for calling a slack nonnegative, relative to the problem scale.
pub fn slack_tolerance(capacities: &[f64], inflow: &[f64]) -> f64 {
    let scale = capacities
        .iter()
        .chain(inflow)
        .fold(1.0f64, |m, x| m.max(x.abs()));
    1e-9 * scale
}

fn validate(
    network: &FlowNetwork,
    capacities: &[f64],
    inflow: &[f64],
) -> Result<(), FeasibilityError> {
    let check = |what, got: usize, expected: usize| {
        if got == expected {
            Ok(())
        } else {
            Err(FeasibilityError::LengthMismatch {
                what,
                expected,
                got,
            })
        }
    };
    check("capacity vector", capacities.len(), network.link_count())?;
    check("inflow vector", inflow.len(), network.node_count())?;
    for (index, c) in capacities.iter().enumerate() {
        if !(c.is_finite() && *c >= 0.0) {
            return Err(FeasibilityError::NegativeInput {
                what: "capacity",
                index,
            });
        }
    }
    for (index, l) in inflow.iter().enumerate() {
        if !(l.is_finite() && *l >= 0.0) {
            return Err(FeasibilityError::NegativeInput {
                what: "inflow",
                index,
            });
        }
        if *l > 0.0 && network.kind_at(index) != NodeKind::Origin {
            return Err(FeasibilityError::InflowAtNonOrigin(network.nodes()[index]));
        }
    }
    Ok(())
}

/// Cut slack of `members` (node indices): outgoing capacity minus own inflow.
fn slack_of(network: &FlowNetwork, capacities: &[f64], inflow: &[f64], members: &[bool]) -> f64 {
    let cut: f64 = network
        .links()
        .iter()
        .filter(|l| members[network.tail_index(l.id)] && !members[network.head_index(l.id)])
        .map(|l| capacities[l.id.0])
        .sum();
    let own: f64 = inflow
        .iter()
        .zip(members)
        .filter(|(_, m)| **m)
        .map(|(l, _)| l)
        .sum();
    cut - own
}

struct ResidualArc {
    to: usize,
    cap: f64,
}

/// Residual graph with paired forward/backward arcs (`i ^ 1` is the reverse).
struct MaxFlow {
    arcs: Vec<ResidualArc>,
    adj: Vec<Vec<usize>>,
}

impl MaxFlow {
    fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64) {
        self.adj[from].push(self.arcs.len());
        self.arcs.push(ResidualArc { to, cap });
        self.adj[to].push(self.arcs.len());
        self.arcs.push(ResidualArc { to: from, cap: 0.0 });
    }

    fn run(&mut self, s: usize, t: usize, max_iter: usize) -> Result<f64, FeasibilityError> {
        let n = self.adj.len();
        let mut total = 0.0;
        let mut pred = vec![usize::MAX; n];
        for _ in 0..max_iter {
            pred.iter_mut().for_each(|p| *p = usize::MAX);
            let mut seen = vec![false; n];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                if v == t {
                    break;
                }
                for &a in &self.adj[v] {
                    let w = self.arcs[a].to;
                    if !seen[w] && self.arcs[a].cap > SATURATION_TOL {
                        seen[w] = true;
                        pred[w] = a;
                        queue.push_back(w);
                    }
                }
            }
            if !seen[t] {
                return Ok(total);
            }
            let mut bottleneck = f64::INFINITY;
            let mut v = t;
            while v != s {
                let a = pred[v];
                bottleneck = bottleneck.min(self.arcs[a].cap);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let a = pred[v];
                self.arcs[a].cap -= bottleneck;
                self.arcs[a ^ 1].cap += bottleneck;
                v = self.arcs[a ^ 1].to;
            }
            total += bottleneck;
        }
        Err(FeasibilityError::IterationLimit(max_iter))
    }

    /// Nodes reachable from `s` through unsaturated residual arcs.
    fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &a in &self.adj[v] {
                let w = self.arcs[a].to;
                if !seen[w] && self.arcs[a].cap > SATURATION_TOL {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }
}

/// Builds the auxiliary graph, optionally forcing `forced` onto the source side.
fn auxiliary(
    network: &FlowNetwork,
    capacities: &[f64],
    inflow: &[f64],
    forced: Option<usize>,
) -> MaxFlow {
    let n = network.node_count();
    let (s, t) = (n, n + 1);
    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for l in network.links() {
        *merged
            .entry((network.tail_index(l.id), network.head_index(l.id)))
            .or_insert(0.0) += capacities[l.id.0];
    }
    let mut g = MaxFlow::new(n + 2);
    for ((a, b), c) in merged {
        g.add(a, b, c);
    }
    for (v, &l) in inflow.iter().enumerate() {
        if Some(v) == forced {
            g.add(s, v, f64::INFINITY);
        } else if l > 0.0 {
            g.add(s, v, l);
        }
        if network.kind_at(v) == NodeKind::Destination {
            g.add(v, t, f64::INFINITY);
        }
    }
    g
}

fn iteration_cap(network: &FlowNetwork) -> usize {
    let v = network.node_count() + 2;
    let e = network.link_count() + 2 * v;
    10 * v * e + 1000
}

/// Exact feasibility check by max flow.
///
/// `capacities` is indexed by link, `inflow` by node index. The minimum slack
/// is taken over nonempty sets: one extra max-flow run per non-destination
/// node forces that node onto the source side.
pub fn is_feasible(
    network: &FlowNetwork,
    capacities: &[f64],
    inflow: &[f64],
) -> Result<FeasibilityResult, FeasibilityError> {
    validate(network, capacities, inflow)?;
    let n = network.node_count();
    let total: f64 = inflow.iter().sum();
    let cap = iteration_cap(network);

    let max_flow_value = auxiliary(network, capacities, inflow, None).run(n, n + 1, cap)?;

    let mut best: Option<(f64, Vec<bool>)> = None;
    for v in 0..n {
        if network.kind_at(v) == NodeKind::Destination {
            continue;
        }
        let mut g = auxiliary(network, capacities, inflow, Some(v));
        let flow = g.run(n, n + 1, cap)?;
        let slack = flow - total;
        if best.as_ref().is_none_or(|(b, _)| slack < *b) {
            let mut side = g.reachable(n);
            side.truncate(n);
            best = Some((slack, side));
        }
    }
    let (_, side) = best.expect("a valid network has a non-destination node");
    // Report the slack of the extracted set itself so witness and value agree exactly.
    let min_slack = slack_of(network, capacities, inflow, &side);
    let witness_cut = NodeSet::from_trusted(
        side.iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| network.nodes()[i]),
    );
    let tol = slack_tolerance(capacities, inflow);
    Ok(FeasibilityResult {
        feasible: min_slack >= -tol,
        min_slack,
        witness_cut,
        max_flow_value,
    })
}

/// Reference implementation that enumerates every nonempty node set.
pub fn brute_force_feasible(
    network: &FlowNetwork,
    capacities: &[f64],
    inflow: &[f64],
) -> Result<FeasibilityResult, FeasibilityError> {
    validate(network, capacities, inflow)?;
    let candidates: Vec<usize> = (0..network.node_count())
        .filter(|&v| network.kind_at(v) != NodeKind::Destination)
        .collect();
    if candidates.len() > BRUTE_FORCE_LIMIT {
        return Err(FeasibilityError::TooLarge {
            nodes: candidates.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut members = vec![false; network.node_count()];
    let mut best = (f64::INFINITY, 0u32);
    for mask in 1u32..(1 << candidates.len()) {
        for (bit, &v) in candidates.iter().enumerate() {
            members[v] = mask & (1 << bit) != 0;
        }
        let slack = slack_of(network, capacities, inflow, &members);
        if slack < best.0 {
            best = (slack, mask);
        }
    }
    let (min_slack, mask) = best;
    let witness_cut = NodeSet::from_trusted(
        candidates
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, &v)| network.nodes()[v]),
    );
    let total: f64 = inflow.iter().sum();
    let tol = slack_tolerance(capacities, inflow);
    Ok(FeasibilityResult {
        feasible: min_slack >= -tol,
        min_slack,
        witness_cut,
        max_flow_value: total + min_slack.min(0.0),
    })
}

/// Cut slack of an explicit node set.
pub fn cut_slack(network: &FlowNetwork, capacities: &[f64], inflow: &[f64], set: &NodeSet) -> f64 {
    let members: Vec<bool> = network.nodes().iter().map(|v| set.contains(*v)).collect();
    slack_of(network, capacities, inflow, &members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LinkSpec;
    use crate::presets::{intact_network, reduced_network};

    fn lanes(net: &FlowNetwork) -> Vec<f64> {
        net.links().iter().map(|l| l.lanes).collect()
    }

    fn inflow(net: &FlowNetwork, rate: f64) -> Vec<f64> {
        let mut v = vec![0.0; net.node_count()];
        v[net.node_index(NodeId(1)).unwrap()] = rate;
        v
    }

    fn set(net: &FlowNetwork, ids: &[u32]) -> NodeSet {
        NodeSet::new(net, ids.iter().map(|&i| NodeId(i))).unwrap()
    }

    #[test]
    fn intact_example() {
        let net = intact_network();
        let (c, l) = (lanes(&net), inflow(&net, 6.0));
        for r in [
            is_feasible(&net, &c, &l).unwrap(),
            brute_force_feasible(&net, &c, &l).unwrap(),
        ] {
            assert!(r.feasible);
            assert!((r.min_slack - 1.0).abs() < 1e-12);
            assert_eq!(r.witness_cut, set(&net, &[1, 2]));
            assert!((r.max_flow_value - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_example() {
        let net = reduced_network();
        let c = lanes(&net);
        let r = is_feasible(&net, &c, &inflow(&net, 6.0)).unwrap();
        assert!(r.feasible);
        assert!(r.min_slack.abs() < 1e-12);
        let r = is_feasible(&net, &c, &inflow(&net, 7.0)).unwrap();
        let b = brute_force_feasible(&net, &c, &inflow(&net, 7.0)).unwrap();
        assert!(!r.feasible && !b.feasible);
        assert!((r.max_flow_value - 6.0).abs() < 1e-12);
        assert!((r.min_slack - b.min_slack).abs() < 1e-12);
        assert!((r.min_slack + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_inflow_reports_smallest_cut() {
        let net = intact_network();
        let c = lanes(&net);
        let r = is_feasible(&net, &c, &vec![0.0; 4]).unwrap();
        let b = brute_force_feasible(&net, &c, &vec![0.0; 4]).unwrap();
        assert!(r.feasible);
        assert!((r.min_slack - b.min_slack).abs() < 1e-12);
        assert!(r.min_slack >= 0.0);
        assert_eq!(r.max_flow_value, 0.0);
    }

    #[test]
    fn zero_capacity_bridge_blocks_origin() {
        let net = FlowNetwork::build(
            &[NodeId(1), NodeId(2), NodeId(3)],
            &[LinkSpec::new(1, 2, 1.0, 1.0), LinkSpec::new(2, 3, 1.0, 1.0)],
        )
        .unwrap();
        let r = is_feasible(&net, &[2.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(!r.feasible);
        assert!(r.witness_cut.contains(NodeId(1)));
        assert_eq!(r.max_flow_value, 0.0);
        assert!((r.min_slack + 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_links_are_merged() {
        let net = FlowNetwork::build(
            &[NodeId(1), NodeId(2)],
            &[LinkSpec::new(1, 2, 1.0, 1.0), LinkSpec::new(1, 2, 1.0, 1.0)],
        )
        .unwrap();
        let r = is_feasible(&net, &[1.5, 2.5], &[3.0, 0.0]).unwrap();
        assert!(r.feasible);
        assert!((r.min_slack - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let net = intact_network();
        assert!(matches!(
            is_feasible(&net, &[1.0, -1.0, 1.0, 1.0, 1.0], &[1.0, 0.0, 0.0, 0.0]),
            Err(FeasibilityError::NegativeInput {
                what: "capacity",
                index: 1
            })
        ));
        assert_eq!(
            is_feasible(&net, &lanes(&net), &[0.0, 1.0, 0.0, 0.0]).unwrap_err(),
            FeasibilityError::InflowAtNonOrigin(NodeId(2))
        );
        assert!(matches!(
            is_feasible(&net, &[1.0], &[0.0; 4]),
            Err(FeasibilityError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn brute_force_has_a_size_limit() {
        let n = BRUTE_FORCE_LIMIT as u32 + 1;
        let nodes: Vec<NodeId> = (1..=n + 1).map(NodeId).collect();
        let links: Vec<LinkSpec> = (1..=n).map(|i| LinkSpec::new(i, i + 1, 1.0, 1.0)).collect();
        let net = FlowNetwork::build(&nodes, &links).unwrap();
        let c = vec![1.0; links.len()];
        assert!(matches!(
            brute_force_feasible(&net, &c, &vec![0.0; nodes.len()]),
            Err(FeasibilityError::TooLarge { .. })
        ));
        assert!(
            is_feasible(&net, &c, &vec![0.0; nodes.len()])
                .unwrap()
                .feasible
        );
    }

    #[test]
    fn witness_slack_matches_cut_slack() {
        let net = intact_network();
        let (c, l) = (lanes(&net), inflow(&net, 6.0));
        let r = is_feasible(&net, &c, &l).unwrap();
        assert_eq!(cut_slack(&net, &c, &l, &r.witness_cut), r.min_slack);
    }
}
