//! The four-node example network and ready-made scenarios on it.
//!
//! Node 1 is the origin, 2 and 3 are intermediate, 4 is the destination.
//! Links in order: (1,2) c=4, (1,3) c=4, (2,4) c=2, (2,3) c=1, (3,4) c=6, all
//! with the free-flow speed as maximum speed limit. The reduced variant drops
//! one lane from (2,4).

use std::sync::Arc;

use crate::dynamics::{Scenario, ScenarioError};
use crate::fundamental::{Greenshields, NetworkPhysics};
use crate::network::{FlowNetwork, LinkSpec, NodeId};

/// External inflow at node 1, in units of single-lane capacity.
pub const EXAMPLE_INFLOW: f64 = 6.0;
pub const EXAMPLE_ORIGIN: NodeId = NodeId(1);

const LANES: [(u32, u32, f64); 5] = [
    (1, 2, 4.0),
    (1, 3, 4.0),
    (2, 4, 2.0),
    (2, 3, 1.0),
    (3, 4, 6.0),
];

fn example(reduced: bool) -> FlowNetwork {
    let nodes: Vec<NodeId> = (1..=4).map(NodeId).collect();
    let links: Vec<LinkSpec> = LANES
        .iter()
        .map(|&(t, h, c)| {
            let c = if reduced && (t, h) == (2, 4) {
                c - 1.0
            } else {
                c
            };
            LinkSpec::new(t, h, c, 1.0)
        })
        .collect();
    FlowNetwork::build(&nodes, &links).expect("example network is valid")
}

pub fn intact_network() -> FlowNetwork {
    example(false)
}

pub fn reduced_network() -> FlowNetwork {
    example(true)
}

/// Normalized Greenshields physics for `network`.
pub fn normalized_physics(network: &FlowNetwork) -> NetworkPhysics {
    NetworkPhysics::new(network, Arc::new(Greenshields::normalized()))
}

/// Empty network, maximum speed limits, proportional routing, default
/// integration settings.
pub fn example_scenario(reduced: bool) -> Result<Scenario, ScenarioError> {
    let network = example(reduced);
    let physics = normalized_physics(&network);
    Scenario::builder(Arc::new(network), Arc::new(physics))
        .inflow(EXAMPLE_ORIGIN, EXAMPLE_INFLOW)
        .build()
}
