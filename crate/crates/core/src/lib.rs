//! Simulation and control of dynamical flow networks under local routing.
//!
//! Links carry traffic densities that evolve under a fundamental diagram and
//! per-link speed limits; nodes split their inflow with a local routing
//! policy. A link that jams fails permanently. The crate simulates such
//! failure cascades, checks inflow feasibility by max flow, and derives speed
//! limits from a capacity-allocation linear program that keep the network
//! delivering its full inflow.

pub mod allocation;
pub mod dynamics;
pub mod feasibility;
pub mod fundamental;
pub mod generate;
pub mod lp;
pub mod network;
pub mod presets;
pub mod routing;

pub use allocation::{
    allocate, build_polytope, polytope_membership, speed_limits_from_allocation, AllocationError,
    AllocationPolytope, CapacityAllocation, SpeedLimitMode,
};
pub use dynamics::{
    classify, mass_residual, simulate, throughput, MassResidual, NetworkState, Scenario,
    ScenarioError, SimulationError, SimulationTrace, TraceError, TransferVerdict, Verdict,
};
pub use feasibility::{brute_force_feasible, is_feasible, FeasibilityError, FeasibilityResult};
pub use fundamental::{
    FundamentalDiagram, Greenshields, LinkPhysics, NetworkPhysics, PhysicsError, SpeedLimitPolicy,
};
pub use lp::{LinearProgram, LpError, LpSolution};
pub use network::{FlowNetwork, LinkId, LinkSpec, NetworkError, NodeId, NodeKind, NodeSet};
pub use routing::{EqualSplit, Proportional, RoutingError, RoutingPolicy};
