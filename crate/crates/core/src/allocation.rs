//! Capacity allocation and the speed limits that enforce it.
//!
//! Given a density profile `rho*` at which routing is congestion aware, the
//! allocation polytope collects target capacities `x` with
//!
//! ```text
//! 0 <= x_e <= phi_e(rho*_e)                       every link
//! lambda_v <= sum_{e in E_v^+} x_e                every origin
//! sum_{e in E_v^-} x_e <= sum_{e in E_v^+} x_e    every intermediate node
//! ```
//!
//! and [`allocate`] picks the vertex maximizing `alpha^T x`. Capping each link
//! at its target keeps every node's inflow within what its outgoing links can
//! absorb, which prevents the failure cascade.

use thiserror::Error;

use crate::feasibility::{is_feasible, FeasibilityError};
use crate::fundamental::{NetworkPhysics, PhysicsError, SpeedLimitPolicy};
use crate::lp::{LinearProgram, LpError};
use crate::network::{FlowNetwork, LinkId, NodeId, NodeKind, NodeSet};

/// Absolute tolerance for polytope membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error("inflow cannot be sustained at the chosen densities: set {witness} has slack {slack}")]
    InfeasibleInflow { witness: NodeSet, slack: f64 },
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("objective weight of link {0} must be positive and finite")]
    InvalidWeight(LinkId),
    #[error("allocation polytope is empty")]
    InfeasiblePolytope,
    #[error("linear program failed: {0}")]
    NumericalFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Row {
    NonNegative(LinkId),
    UpperBound(LinkId),
    Origin(NodeId),
    Balance(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginRow {
    pub node: NodeId,
    pub inflow: f64,
    pub outgoing: Vec<LinkId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub node: NodeId,
    pub incoming: Vec<LinkId>,
    pub outgoing: Vec<LinkId>,
}

#[derive(Debug, Clone)]
pub struct AllocationPolytope {
    pub physics: NetworkPhysics,
    pub rho_star: Vec<f64>,
    /// `phi_e(rho*_e)` per link.
    pub upper: Vec<f64>,
    pub origins: Vec<OriginRow>,
    pub balances: Vec<BalanceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub row: Row,
    /// Amount by which the row is exceeded.
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub member: bool,
    /// Most violated row, if any row is violated at all.
    pub worst: Option<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpeedLimitMode {
    Constant,
    #[default]
    Feedback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityAllocation {
    pub targets: Vec<f64>,
    pub alpha: Vec<f64>,
    pub objective: f64,
    /// The optimum may not be unique; `targets` is the vertex the fixed pivot
    /// rule selected.
    pub alternative_optima: bool,
    /// Feedback caps at the targets.
    pub speed_limits: Vec<SpeedLimitPolicy>,
}

/// Builds the polytope at densities `rho_star` after checking that `inflow`
/// (per node index) is feasible with capacities `phi(rho_star)`.
pub fn build_polytope(
    network: &FlowNetwork,
    physics: &NetworkPhysics,
    rho_star: &[f64],
    inflow: &[f64],
) -> Result<AllocationPolytope, AllocationError> {
    if rho_star.len() != network.link_count() {
        return Err(AllocationError::LengthMismatch {
            what: "density profile",
            expected: network.link_count(),
            got: rho_star.len(),
        });
    }
    let upper = physics.sustainable_inflows(rho_star)?;
    let check = is_feasible(network, &upper, inflow)?;
    if !check.feasible {
        return Err(AllocationError::InfeasibleInflow {
            witness: check.witness_cut,
            slack: check.min_slack,
        });
    }
    let mut origins = Vec::new();
    let mut balances = Vec::new();
    for (v, &node) in network.nodes().iter().enumerate() {
        match network.kind_at(v) {
            NodeKind::Origin => origins.push(OriginRow {
                node,
                inflow: inflow[v],
                outgoing: network.outgoing_at(v).to_vec(),
            }),
            NodeKind::Intermediate => balances.push(BalanceRow {
                node,
                incoming: network.incoming_at(v).to_vec(),
                outgoing: network.outgoing_at(v).to_vec(),
            }),
            NodeKind::Destination => {}
        }
    }
    Ok(AllocationPolytope {
        physics: physics.clone(),
        rho_star: rho_star.to_vec(),
        upper,
        origins,
        balances,
    })
}

fn sum(x: &[f64], links: &[LinkId]) -> f64 {
    links.iter().map(|l| x[l.0]).sum()
}

impl AllocationPolytope {
    pub fn link_count(&self) -> usize {
        self.upper.len()
    }

    /// The polytope as `A x <= b` rows (upper bounds, origins, balances).
    pub fn linear_program(&self, alpha: &[f64]) -> LinearProgram {
        let m = self.link_count();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (e, &u) in self.upper.iter().enumerate() {
            let mut row = vec![0.0; m];
            row[e] = 1.0;
            rows.push(row);
            rhs.push(u);
        }
        for o in &self.origins {
            let mut row = vec![0.0; m];
            o.outgoing.iter().for_each(|l| row[l.0] -= 1.0);
            rows.push(row);
            rhs.push(-o.inflow);
        }
        for b in &self.balances {
            let mut row = vec![0.0; m];
            b.incoming.iter().for_each(|l| row[l.0] += 1.0);
            b.outgoing.iter().for_each(|l| row[l.0] -= 1.0);
            rows.push(row);
            rhs.push(0.0);
        }
        LinearProgram {
            objective: alpha.to_vec(),
            rows,
            rhs,
        }
    }
}

/// Evaluates every row at `x` and reports the worst violation.
pub fn polytope_membership(
    polytope: &AllocationPolytope,
    x: &[f64],
) -> Result<Membership, AllocationError> {
    if x.len() != polytope.link_count() {
        return Err(AllocationError::LengthMismatch {
            what: "allocation",
            expected: polytope.link_count(),
            got: x.len(),
        });
    }
    let mut worst: Option<Violation> = None;
    let mut note = |row, amount: f64| {
        if amount > 0.0 && worst.is_none_or(|w| amount > w.amount) {
            worst = Some(Violation { row, amount });
        }
    };
    for (e, (&v, &u)) in x.iter().zip(&polytope.upper).enumerate() {
        note(Row::NonNegative(LinkId(e)), -v);
        note(Row::UpperBound(LinkId(e)), v - u);
    }
    for o in &polytope.origins {
        note(Row::Origin(o.node), o.inflow - sum(x, &o.outgoing));
    }
    for b in &polytope.balances {
        note(
            Row::Balance(b.node),
            sum(x, &b.incoming) - sum(x, &b.outgoing),
        );
    }
    Ok(Membership {
        member: worst.is_none_or(|w| w.amount <= MEMBERSHIP_TOL),
        worst,
    })
}

/// Solves `max alpha^T x` over the polytope.
pub fn allocate(
    polytope: &AllocationPolytope,
    alpha: &[f64],
) -> Result<CapacityAllocation, AllocationError> {
    if alpha.len() != polytope.link_count() {
        return Err(AllocationError::LengthMismatch {
            what: "weight vector",
            expected: polytope.link_count(),
            got: alpha.len(),
        });
    }
    if let Some(e) = alpha.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(AllocationError::InvalidWeight(LinkId(e)));
    }
    let solution = polytope
        .linear_program(alpha)
        .solve()
        .map_err(|e| match e {
            LpError::Infeasible => AllocationError::InfeasiblePolytope,
            other => AllocationError::NumericalFailure(other.to_string()),
        })?;
    // Snap pivoting noise onto the box before certifying membership.
    let targets: Vec<f64> = solution
        .x
        .iter()
        .zip(&polytope.upper)
        .map(|(x, u)| x.clamp(0.0, *u))
        .collect();
    let membership = polytope_membership(polytope, &targets)?;
    if !membership.member {
        return Err(AllocationError::NumericalFailure(format!(
            "solution violates {:?}",
            membership.worst
        )));
    }
    let speed_limits = limits(&polytope.physics, &targets, SpeedLimitMode::Feedback)?;
    Ok(CapacityAllocation {
        objective: alpha.iter().zip(&targets).map(|(a, x)| a * x).sum(),
        targets,
        alpha: alpha.to_vec(),
        alternative_optima: solution.alternative_optima,
        speed_limits,
    })
}

fn limits(
    physics: &NetworkPhysics,
    targets: &[f64],
    mode: SpeedLimitMode,
) -> Result<Vec<SpeedLimitPolicy>, AllocationError> {
    physics
        .links()
        .iter()
        .zip(targets)
        .map(|(p, &t)| {
            let t = t.min(p.capacity);
            Ok(match mode {
                SpeedLimitMode::Constant => SpeedLimitPolicy::constant(p, t)?,
                SpeedLimitMode::Feedback => SpeedLimitPolicy::feedback(p, t)?,
            })
        })
        .collect()
}

/// Per-link speed-limit policies realizing the allocated targets.
pub fn speed_limits_from_allocation(
    allocation: &CapacityAllocation,
    physics: &NetworkPhysics,
    mode: SpeedLimitMode,
) -> Result<Vec<SpeedLimitPolicy>, AllocationError> {
    if allocation.targets.len() != physics.len() {
        return Err(AllocationError::LengthMismatch {
            what: "allocation",
            expected: physics.len(),
            got: allocation.targets.len(),
        });
    }
    limits(physics, &allocation.targets, mode)
}
