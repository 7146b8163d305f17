//! Flow functions, maximum sustainable inflow and the two speed-limit laws.
//!
//! A link with `c` lanes uses the single-lane diagram `f_0` scaled as
//! `f(rho, u) = c * f_0(rho / c, u)`, where `f_0(rho, u) = rho * min(u, s_0(rho))`
//! and `s_0` is the diagram's density-dependent maximum speed.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::network::{FlowNetwork, LinkId};

/// Relative slack accepted on range checks before reporting [`PhysicsError::OutOfRange`].
const RANGE_TOL: f64 = 1e-9;
/// Absolute density tolerance of the generic `rho_hat` bisection.
const BISECTION_TOL: f64 = 1e-10;
/// A link fails once its density is within this distance of jam density.
pub const JAM_TOL: f64 = 1e-12;
/// Sustainable inflows below this value count as zero.
pub const PHI_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("{quantity} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        quantity: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("target flow {target} exceeds capacity {capacity}")]
    TargetAboveCapacity { target: f64, capacity: f64 },
}

/// Single-lane fundamental diagram.
///
/// Implementations must give a flow `f_0(., u_max)` that vanishes at zero and at
/// jam density and is strictly unimodal in between.
pub trait FundamentalDiagram: fmt::Debug + Send + Sync {
    fn free_flow_speed(&self) -> f64;

    /// Jam density of a single lane.
    fn jam_density(&self) -> f64;

    /// Maximum speed `s_0(rho)` at single-lane density `rho`; nonincreasing and
    /// zero at jam density.
    fn max_speed(&self, density: f64) -> f64;

    fn flow(&self, density: f64, speed_limit: f64) -> f64 {
        density * speed_limit.min(self.max_speed(density))
    }

    /// Density maximizing `flow(., speed_limit)`. By default, bisection on the
    /// sign of a central-difference slope.
    fn critical_density(&self, speed_limit: f64) -> f64 {
        let jam = self.jam_density();
        let h = 1e-7 * jam;
        let (mut lo, mut hi) = (h, jam - h);
        while hi - lo > 1e-12 * jam {
            let mid = 0.5 * (lo + hi);
            if self.flow(mid + h, speed_limit) > self.flow(mid - h, speed_limit) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Largest single-lane density with `flow(rho, speed_limit) == target`.
    ///
    /// The default bisects the decreasing branch between the critical and jam
    /// densities.
    fn rho_hat(&self, target: f64, speed_limit: f64) -> f64 {
        let (mut lo, mut hi) = (self.critical_density(speed_limit), self.jam_density());
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if self.flow(mid, speed_limit) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Linear speed-density relation `s_0(rho) = v_f (1 - rho / rho_jam)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Greenshields {
    pub free_flow_speed: f64,
    pub jam_density: f64,
}

impl Greenshields {
    pub fn new(free_flow_speed: f64, jam_density: f64) -> Self {
        Self {
            free_flow_speed,
            jam_density,
        }
    }

    /// Unit free-flow speed and jam density 4, so one lane carries capacity 1.
    pub fn normalized() -> Self {
        Self::new(1.0, 4.0)
    }
}

impl FundamentalDiagram for Greenshields {
    fn free_flow_speed(&self) -> f64 {
        self.free_flow_speed
    }

    fn jam_density(&self) -> f64 {
        self.jam_density
    }

    fn max_speed(&self, density: f64) -> f64 {
        (self.free_flow_speed * (1.0 - density / self.jam_density)).max(0.0)
    }

    fn critical_density(&self, speed_limit: f64) -> f64 {
        let u = speed_limit.min(self.free_flow_speed);
        self.jam_density * f64::max(0.5, 1.0 - u / self.free_flow_speed)
    }

    fn rho_hat(&self, target: f64, _speed_limit: f64) -> f64 {
        // The decreasing branch always lies on the parabola, whatever the limit.
        let disc = (1.0 - 4.0 * target / (self.free_flow_speed * self.jam_density)).max(0.0);
        0.5 * self.jam_density * (1.0 + disc.sqrt())
    }
}

/// `s_0(rho) = v_f (1 - (rho / rho_jam)^n)`; reduces to Greenshields for `n = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipesMunjal {
    pub free_flow_speed: f64,
    pub jam_density: f64,
    pub exponent: f64,
}

impl FundamentalDiagram for PipesMunjal {
    fn free_flow_speed(&self) -> f64 {
        self.free_flow_speed
    }

    fn jam_density(&self) -> f64 {
        self.jam_density
    }

    fn max_speed(&self, density: f64) -> f64 {
        let x = (density / self.jam_density).clamp(0.0, 1.0);
        self.free_flow_speed * (1.0 - x.powf(self.exponent))
    }
}

/// Physical parameters of one link, derived from its lane count and the diagram.
#[derive(Debug, Clone)]
pub struct LinkPhysics {
    pub link: LinkId,
    pub lanes: f64,
    pub max_speed: f64,
    pub jam_density: f64,
    pub critical_density: f64,
    pub capacity: f64,
    diagram: Arc<dyn FundamentalDiagram>,
}

fn check_range(quantity: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64, PhysicsError> {
    let slack = RANGE_TOL * hi.abs().max(1.0);
    if value.is_finite() && value >= lo - slack && value <= hi + slack {
        Ok(value.clamp(lo, hi))
    } else {
        Err(PhysicsError::OutOfRange {
            quantity,
            value,
            lo,
            hi,
        })
    }
}

impl LinkPhysics {
    pub fn new(
        link: LinkId,
        lanes: f64,
        max_speed: f64,
        diagram: Arc<dyn FundamentalDiagram>,
    ) -> Self {
        let crit0 = diagram.critical_density(max_speed);
        let capacity = lanes * diagram.flow(crit0, max_speed);
        Self {
            link,
            lanes,
            max_speed,
            jam_density: lanes * diagram.jam_density(),
            critical_density: lanes * crit0,
            capacity,
            diagram,
        }
    }

    pub fn diagram(&self) -> &dyn FundamentalDiagram {
        self.diagram.as_ref()
    }

    /// `f_e(rho, u)` without range checks; inputs are clamped to the valid box.
    pub fn flow_at(&self, density: f64, speed: f64) -> f64 {
        let rho = density.clamp(0.0, self.jam_density);
        let u = speed.clamp(0.0, self.max_speed);
        self.lanes * self.diagram.flow(rho / self.lanes, u)
    }

    /// Flow under the maximum speed limit.
    pub fn free_flow_at(&self, density: f64) -> f64 {
        self.flow_at(density, self.max_speed)
    }

    pub fn flow(&self, density: f64, speed: f64) -> Result<f64, PhysicsError> {
        let rho = check_range("density", density, 0.0, self.jam_density)?;
        let u = check_range("speed", speed, 0.0, self.max_speed)?;
        Ok(self.flow_at(rho, u))
    }

    /// Maximum sustainable inflow `phi_e(rho)`.
    pub fn phi_at(&self, density: f64) -> f64 {
        if density <= self.critical_density {
            self.capacity
        } else {
            self.free_flow_at(density)
        }
    }

    pub fn max_sustainable_inflow(&self, density: f64) -> Result<f64, PhysicsError> {
        let rho = check_range("density", density, 0.0, self.jam_density)?;
        Ok(self.phi_at(rho))
    }

    fn check_target(&self, target: f64) -> Result<f64, PhysicsError> {
        if target.is_nan() || target < 0.0 {
            return Err(PhysicsError::OutOfRange {
                quantity: "target flow",
                value: target,
                lo: 0.0,
                hi: self.capacity,
            });
        }
        if target > self.capacity * (1.0 + RANGE_TOL) {
            return Err(PhysicsError::TargetAboveCapacity {
                target,
                capacity: self.capacity,
            });
        }
        Ok(target.min(self.capacity))
    }

    /// Largest density at which the free flow equals `target`.
    pub fn rho_hat(&self, target: f64) -> Result<f64, PhysicsError> {
        let target = self.check_target(target)?;
        if target >= self.capacity {
            return Ok(self.critical_density);
        }
        if target <= 0.0 {
            return Ok(self.jam_density);
        }
        let rho0 = self.diagram.rho_hat(target / self.lanes, self.max_speed);
        Ok((self.lanes * rho0).clamp(self.critical_density, self.jam_density))
    }

    /// Constant speed limit that caps the flow at `target` for every density.
    /// A zero target closes the link (`u = 0`).
    pub fn constant_speed_limit(&self, target: f64) -> Result<f64, PhysicsError> {
        let rho_hat = self.rho_hat(target)?;
        let target = target.min(self.capacity);
        if target <= 0.0 {
            return Ok(0.0);
        }
        Ok((target / rho_hat).min(self.max_speed))
    }

    /// Density-feedback speed limit: full speed unless the free flow would
    /// exceed `target`, in which case the speed is cut to exactly `target / rho`.
    pub fn feedback_speed_limit(&self, target: f64, density: f64) -> Result<f64, PhysicsError> {
        let target = self.check_target(target)?;
        let rho = check_range("density", density, 0.0, self.jam_density)?;
        Ok(self.feedback_speed_at(target, rho))
    }

    pub(crate) fn feedback_speed_at(&self, target: f64, density: f64) -> f64 {
        if self.free_flow_at(density) <= target {
            self.max_speed
        } else {
            (target / density).min(self.max_speed)
        }
    }

    /// Failure test: jam density reached, or congested with a vanishing
    /// sustainable inflow.
    pub fn is_jammed(&self, density: f64) -> bool {
        density >= self.jam_density - JAM_TOL
            || (density > self.critical_density && self.free_flow_at(density) < PHI_FLOOR)
    }
}

/// Per-link physics for a whole network, indexed by [`LinkId`].
#[derive(Debug, Clone)]
pub struct NetworkPhysics {
    links: Vec<LinkPhysics>,
}

impl NetworkPhysics {
    pub fn new(network: &FlowNetwork, diagram: Arc<dyn FundamentalDiagram>) -> Self {
        let links = network
            .links()
            .iter()
            .map(|l| LinkPhysics::new(l.id, l.lanes, l.max_speed, diagram.clone()))
            .collect();
        Self { links }
    }

    pub fn link(&self, id: LinkId) -> &LinkPhysics {
        &self.links[id.0]
    }

    pub fn links(&self) -> &[LinkPhysics] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|p| p.capacity).collect()
    }

    pub fn critical_densities(&self) -> Vec<f64> {
        self.links.iter().map(|p| p.critical_density).collect()
    }

    pub fn jam_densities(&self) -> Vec<f64> {
        self.links.iter().map(|p| p.jam_density).collect()
    }

    /// `phi(rho)` for every link.
    pub fn sustainable_inflows(&self, densities: &[f64]) -> Result<Vec<f64>, PhysicsError> {
        self.links
            .iter()
            .zip(densities)
            .map(|(p, &rho)| p.max_sustainable_inflow(rho))
            .collect()
    }
}

/// How a link's speed limit is chosen at each instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedLimitPolicy {
    /// Always the maximum speed limit.
    MaxAlways,
    /// Constant limit `target / rho_hat(target)`.
    ConstantCap { target: f64, speed: f64 },
    /// Full speed unless the flow would exceed `target`.
    FeedbackCap { target: f64 },
}

impl SpeedLimitPolicy {
    pub fn constant(physics: &LinkPhysics, target: f64) -> Result<Self, PhysicsError> {
        let speed = physics.constant_speed_limit(target)?;
        Ok(Self::ConstantCap {
            target: target.min(physics.capacity),
            speed,
        })
    }

    pub fn feedback(physics: &LinkPhysics, target: f64) -> Result<Self, PhysicsError> {
        let target = physics.check_target(target)?;
        Ok(Self::FeedbackCap { target })
    }

    pub fn target(&self) -> Option<f64> {
        match *self {
            Self::MaxAlways => None,
            Self::ConstantCap { target, .. } | Self::FeedbackCap { target } => Some(target),
        }
    }

    /// Speed limit to apply at the given density.
    pub fn speed(&self, physics: &LinkPhysics, density: f64) -> f64 {
        match *self {
            Self::MaxAlways => physics.max_speed,
            Self::ConstantCap { speed, .. } => speed,
            Self::FeedbackCap { target } => physics.feedback_speed_at(target, density),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> LinkPhysics {
        LinkPhysics::new(LinkId(0), 1.0, 1.0, Arc::new(Greenshields::normalized()))
    }

    fn lanes(c: f64) -> LinkPhysics {
        LinkPhysics::new(LinkId(0), c, 1.0, Arc::new(Greenshields::normalized()))
    }

    const EPS: f64 = 1e-12;

    #[test]
    fn derived_parameters() {
        let p = unit();
        assert_eq!(p.jam_density, 4.0);
        assert_eq!(p.critical_density, 2.0);
        assert_eq!(p.capacity, 1.0);
        let q = lanes(6.0);
        assert_eq!(q.capacity, 6.0);
        assert_eq!(q.critical_density, 12.0);
    }

    #[test]
    fn flow_values() {
        let p = unit();
        assert_eq!(p.flow(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(p.flow(4.0, 1.0).unwrap(), 0.0);
        assert!((p.flow(1.0, 0.3).unwrap() - 0.3).abs() < EPS);

        // Grid maximization independently locates the peak at rho = 2, f = 1.
        let (mut best_rho, mut best) = (0.0, f64::MIN);
        for i in 0..=4000 {
            let rho = 4.0 * i as f64 / 4000.0;
            let f = p.flow(rho, 1.0).unwrap();
            if f > best {
                best = f;
                best_rho = rho;
            }
        }
        assert!((best_rho - 2.0).abs() < 1e-3);
        assert!((best - 1.0).abs() < 1e-6);
        assert!((p.flow(2.0, 1.0).unwrap() - 1.0).abs() < EPS);
    }

    #[test]
    fn flow_rejects_out_of_range() {
        let p = unit();
        assert!(matches!(
            p.flow(-0.1, 1.0),
            Err(PhysicsError::OutOfRange { .. })
        ));
        assert!(matches!(
            p.flow(4.5, 1.0),
            Err(PhysicsError::OutOfRange { .. })
        ));
        assert!(matches!(
            p.flow(1.0, 1.5),
            Err(PhysicsError::OutOfRange { .. })
        ));
        assert!(matches!(
            p.flow(f64::NAN, 1.0),
            Err(PhysicsError::OutOfRange { .. })
        ));
    }

    #[test]
    fn sustainable_inflow() {
        let p = unit();
        assert_eq!(p.max_sustainable_inflow(0.0).unwrap(), 1.0);
        assert_eq!(p.max_sustainable_inflow(2.0).unwrap(), 1.0);
        assert!((p.max_sustainable_inflow(3.0).unwrap() - 0.75).abs() < EPS);
        assert_eq!(p.max_sustainable_inflow(4.0).unwrap(), 0.0);
    }

    #[test]
    fn rho_hat_values() {
        let p = unit();
        assert_eq!(p.rho_hat(1.0).unwrap(), 2.0);
        assert_eq!(p.rho_hat(0.0).unwrap(), 4.0);
        assert!((p.rho_hat(0.75).unwrap() - 3.0).abs() < EPS);
        assert!(matches!(
            p.rho_hat(1.5),
            Err(PhysicsError::TargetAboveCapacity { .. })
        ));
    }

    #[test]
    fn constant_limits() {
        let p = unit();
        let u = p.constant_speed_limit(1.0).unwrap();
        assert!((u - 0.5).abs() < EPS);
        let peak = (0..=4000)
            .map(|i| p.flow(4.0 * i as f64 / 4000.0, u).unwrap())
            .fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-9);
        assert!((p.constant_speed_limit(0.75).unwrap() - 0.25).abs() < EPS);
        assert_eq!(p.constant_speed_limit(0.0).unwrap(), 0.0);
        assert!(p.constant_speed_limit(1.0).unwrap() <= p.max_speed);
    }

    #[test]
    fn feedback_limits() {
        let p = unit();
        assert_eq!(p.feedback_speed_limit(0.75, 0.5).unwrap(), 1.0);
        let u = p.feedback_speed_limit(0.75, 2.0).unwrap();
        assert!((u - 0.375).abs() < EPS);
        assert!((p.flow(2.0, u).unwrap() - 0.75).abs() < EPS);
        for i in 0..=40 {
            let rho = 0.1 * i as f64;
            assert_eq!(p.feedback_speed_limit(1.0, rho).unwrap(), 1.0);
        }
    }

    #[test]
    fn policy_speeds() {
        let p = unit();
        assert_eq!(SpeedLimitPolicy::MaxAlways.speed(&p, 3.0), 1.0);
        let c = SpeedLimitPolicy::constant(&p, 0.75).unwrap();
        assert!((c.speed(&p, 0.1) - 0.25).abs() < EPS);
        let f = SpeedLimitPolicy::feedback(&p, 0.75).unwrap();
        assert_eq!(f.target(), Some(0.75));
        assert!(SpeedLimitPolicy::feedback(&p, 2.0).is_err());
        let closed = SpeedLimitPolicy::feedback(&p, 0.0).unwrap();
        assert_eq!(closed.speed(&p, 1.0), 0.0);
    }

    #[test]
    fn unimodality_audit() {
        for c in [0.5, 1.0, 3.0] {
            let p = lanes(c);
            let n = 2000;
            let grid: Vec<f64> = (0..=n)
                .map(|i| p.jam_density * i as f64 / n as f64)
                .collect();
            for w in grid.windows(2) {
                let (a, b) = (p.free_flow_at(w[0]), p.free_flow_at(w[1]));
                if w[1] <= p.critical_density {
                    assert!(b > a, "not increasing at {}", w[0]);
                } else if w[0] >= p.critical_density {
                    assert!(b < a, "not decreasing at {}", w[0]);
                }
            }
        }
    }

    #[test]
    fn reduced_speed_limit_moves_the_peak() {
        // With u_max = 0.4 < v_f / 2 the flat speed-limited branch meets the
        // parabola at rho = 4 (1 - 0.4) = 2.4.
        let p = LinkPhysics::new(LinkId(0), 1.0, 0.4, Arc::new(Greenshields::normalized()));
        assert!((p.critical_density - 2.4).abs() < EPS);
        assert!((p.capacity - 0.96).abs() < EPS);
        let hat = p.rho_hat(0.5).unwrap();
        assert!((p.free_flow_at(hat) - 0.5).abs() < 1e-12);
        assert!(hat >= p.critical_density);
    }

    #[test]
    fn generic_solvers_match_closed_form() {
        let pm: Arc<dyn FundamentalDiagram> = Arc::new(PipesMunjal {
            free_flow_speed: 1.0,
            jam_density: 4.0,
            exponent: 1.0,
        });
        let g = Greenshields::normalized();
        assert!((pm.critical_density(1.0) - 2.0).abs() < 1e-8);
        for t in [0.0, 0.1, 0.5, 0.75, 0.99] {
            assert!((pm.rho_hat(t, 1.0) - g.rho_hat(t, 1.0)).abs() < 1e-9);
        }
        // n = 2: critical density 4 / sqrt(3).
        let quad = PipesMunjal {
            free_flow_speed: 1.0,
            jam_density: 4.0,
            exponent: 2.0,
        };
        assert!((quad.critical_density(1.0) - 4.0 / 3f64.sqrt()).abs() < 1e-8);
        let p = LinkPhysics::new(LinkId(0), 2.0, 1.0, Arc::new(quad));
        let hat = p.rho_hat(0.5 * p.capacity).unwrap();
        assert!((p.free_flow_at(hat) - 0.5 * p.capacity).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn zero_flow_at_ends(c in 0.1f64..10.0, u in 0.0f64..1.0) {
            let p = lanes(c);
            prop_assert_eq!(p.flow(0.0, u).unwrap(), 0.0);
            prop_assert_eq!(p.flow(p.jam_density, u).unwrap(), 0.0);
        }

        #[test]
        fn monotone_in_speed(c in 0.1f64..10.0, x in 0.0f64..1.0, u1 in 0.0f64..1.0, u2 in 0.0f64..1.0) {
            let p = lanes(c);
            let rho = x * p.jam_density;
            let (lo, hi) = (u1.min(u2), u1.max(u2));
            prop_assert!(p.flow(rho, lo).unwrap() <= p.flow(rho, hi).unwrap());
        }

        #[test]
        fn flow_bounded_by_capacity(c in 0.1f64..10.0, x in 0.0f64..1.0, u in 0.0f64..1.0) {
            let p = lanes(c);
            let f = p.flow(x * p.jam_density, u).unwrap();
            prop_assert!(f >= 0.0 && f <= p.capacity * (1.0 + 1e-12));
        }

        #[test]
        fn lane_scaling(c in 0.1f64..10.0, x in 0.0f64..1.0, u in 0.0f64..1.0) {
            let g = Greenshields::normalized();
            let p = lanes(c);
            let rho = x * p.jam_density;
            let scaled = c * g.flow(rho / c, u);
            prop_assert!((p.flow(rho, u).unwrap() - scaled).abs() <= 1e-12 * c.max(1.0));
        }

        #[test]
        fn feedback_cap_is_exact(c in 0.1f64..10.0, t in 0.0f64..1.0, x in 0.0f64..1.0) {
            let p = lanes(c);
            let target = t * p.capacity;
            let rho = x * p.jam_density;
            let u = p.feedback_speed_limit(target, rho).unwrap();
            let expect = p.free_flow_at(rho).min(target);
            prop_assert!((p.flow(rho, u).unwrap() - expect).abs() <= 1e-12 * p.capacity.max(1.0));
        }

        #[test]
        fn constant_cap_is_safe(c in 0.1f64..10.0, t in 0.0f64..1.0) {
            let p = lanes(c);
            let target = t * p.capacity;
            let u = p.constant_speed_limit(target).unwrap();
            for i in 0..=2000 {
                let rho = p.jam_density * i as f64 / 2000.0;
                prop_assert!(p.flow(rho, u).unwrap() <= target + 1e-12 * p.capacity.max(1.0));
            }
        }

        #[test]
        fn phi_dominates_free_flow(c in 0.1f64..10.0, x1 in 0.0f64..1.0, x2 in 0.0f64..1.0) {
            let p = lanes(c);
            let (a, b) = (x1.min(x2) * p.jam_density, x1.max(x2) * p.jam_density);
            let phi = p.phi_at(a);
            prop_assert!(phi >= p.free_flow_at(a));
            if a >= p.critical_density {
                prop_assert_eq!(phi, p.free_flow_at(a));
            } else {
                prop_assert!(phi > p.free_flow_at(a));
            }
            prop_assert!(p.phi_at(b) <= phi);
        }

        #[test]
        fn rho_hat_ordering(c in 0.1f64..10.0, t in 0.0f64..1.0, x in 0.0f64..1.0) {
            let p = lanes(c);
            let target = t * p.capacity;
            let hat = p.rho_hat(target).unwrap();
            prop_assert!(hat >= p.critical_density && hat <= p.jam_density);
            prop_assert!((p.free_flow_at(hat) - target).abs() <= 1e-9 * p.capacity);
            let rho = x * hat;
            prop_assert!(p.phi_at(rho) >= target - 1e-9 * p.capacity);
        }
    }
}
