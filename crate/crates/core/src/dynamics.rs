//! Density dynamics with irreversible link failures.
//!
//! Each link `e = (v, w)` evolves as
//!
//! ```text
//! d rho_e / dt = R_e^v(rho_out(v), mu_v) - f_e(rho_e, u_e)   if some link leaving w is alive
//!              = R_e^v(rho_out(v), mu_v)                      otherwise
//! ```
//!
//! where `mu_v` is the external inflow at origins and the sum of incoming link
//! flows elsewhere. Destinations never block. All rates are evaluated from the
//! same state before any density moves (a Jacobi update), then densities
//! advance by one explicit Euler step and are clamped to `[0, rho_jam]`. A link
//! that reaches jam density fails and stays failed.

use std::sync::Arc;

use thiserror::Error;

use crate::fundamental::{NetworkPhysics, SpeedLimitPolicy};
use crate::network::{FlowNetwork, LinkId, NodeId, NodeKind};
use crate::routing::{LocalLink, Proportional, RoutingPolicy};

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_HORIZON: f64 = 200.0;
pub const DEFAULT_STRIDE: usize = 10;
pub const DEFAULT_EPS_REL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("external inflow declared at non-origin node {0}")]
    InflowAtNonOrigin(NodeId),
    #[error("external inflow at node {0} must be finite and nonnegative")]
    InvalidInflow(NodeId),
    #[error("initial density of link {0} is outside [0, jam density]")]
    InitialDensityOutOfRange(LinkId),
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("time step must be positive and finite")]
    InvalidStep,
    #[error("horizon must be positive and finite")]
    InvalidHorizon,
    #[error("sampling stride must be at least 1")]
    ZeroStride,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("non-finite density on link {link} at t = {time}; the time step is likely too large")]
    NonFiniteState { time: f64, link: LinkId },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("trace has fewer than two samples")]
    EmptyTrace,
    #[error("window {window} is not within (0, {horizon}]")]
    InvalidWindow { window: f64, horizon: f64 },
}

/// A fully specified run: network, physics, inflows, policies and integration settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Arc<FlowNetwork>,
    pub physics: Arc<NetworkPhysics>,
    /// External inflow per node index; zero away from origins.
    pub inflow: Vec<f64>,
    pub routing: Arc<dyn RoutingPolicy>,
    pub speed_limits: Vec<SpeedLimitPolicy>,
    pub initial: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub stride: usize,
}

impl Scenario {
    pub fn builder(network: Arc<FlowNetwork>, physics: Arc<NetworkPhysics>) -> ScenarioBuilder {
        let links = network.link_count();
        let nodes = network.node_count();
        ScenarioBuilder {
            scenario: Scenario {
                network,
                physics,
                inflow: vec![0.0; nodes],
                routing: Arc::new(Proportional),
                speed_limits: vec![SpeedLimitPolicy::MaxAlways; links],
                initial: vec![0.0; links],
                dt: DEFAULT_DT,
                horizon: DEFAULT_HORIZON,
                stride: DEFAULT_STRIDE,
            },
            inflows: Vec::new(),
        }
    }

    pub fn total_inflow(&self) -> f64 {
        self.inflow.iter().sum()
    }

    pub fn inflow_at(&self, node: NodeId) -> f64 {
        self.network
            .node_index(node)
            .map_or(0.0, |i| self.inflow[i])
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let net = &self.network;
        let check_len = |what, got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(ScenarioError::LengthMismatch {
                    what,
                    expected,
                    got,
                })
            }
        };
        check_len("inflow vector", self.inflow.len(), net.node_count())?;
        check_len(
            "speed limit list",
            self.speed_limits.len(),
            net.link_count(),
        )?;
        check_len(
            "initial density vector",
            self.initial.len(),
            net.link_count(),
        )?;
        check_len("physics", self.physics.len(), net.link_count())?;
        for (i, &lambda) in self.inflow.iter().enumerate() {
            let node = net.nodes()[i];
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(ScenarioError::InvalidInflow(node));
            }
            if lambda > 0.0 && net.kind_at(i) != NodeKind::Origin {
                return Err(ScenarioError::InflowAtNonOrigin(node));
            }
        }
        for (p, &rho) in self.physics.links().iter().zip(&self.initial) {
            if !(rho.is_finite() && (0.0..=p.jam_density).contains(&rho)) {
                return Err(ScenarioError::InitialDensityOutOfRange(p.link));
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ScenarioError::InvalidStep);
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ScenarioError::InvalidHorizon);
        }
        if self.stride == 0 {
            return Err(ScenarioError::ZeroStride);
        }
        Ok(())
    }

    /// Initial state; links that start at jam density start failed.
    pub fn initial_state(&self) -> NetworkState {
        let mut state = NetworkState {
            densities: self.initial.clone(),
            failed: vec![false; self.initial.len()],
            time: 0.0,
        };
        for (e, p) in self.physics.links().iter().enumerate() {
            if p.is_jammed(state.densities[e]) {
                state.densities[e] = p.jam_density;
                state.failed[e] = true;
            }
        }
        state
    }
}

pub struct ScenarioBuilder {
    scenario: Scenario,
    inflows: Vec<(NodeId, f64)>,
}

impl ScenarioBuilder {
    pub fn inflow(mut self, node: NodeId, rate: f64) -> Self {
        self.inflows.push((node, rate));
        self
    }

    pub fn routing(mut self, policy: Arc<dyn RoutingPolicy>) -> Self {
        self.scenario.routing = policy;
        self
    }

    pub fn speed_limits(mut self, limits: Vec<SpeedLimitPolicy>) -> Self {
        self.scenario.speed_limits = limits;
        self
    }

    pub fn initial(mut self, densities: Vec<f64>) -> Self {
        self.scenario.initial = densities;
        self
    }

    pub fn dt(mut self, dt: f64) -> Self {
        self.scenario.dt = dt;
        self
    }

    pub fn horizon(mut self, horizon: f64) -> Self {
        self.scenario.horizon = horizon;
        self
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.scenario.stride = stride;
        self
    }

    pub fn build(mut self) -> Result<Scenario, ScenarioError> {
        for (node, rate) in self.inflows {
            let i = self
                .scenario
                .network
                .node_index(node)
                .ok_or(ScenarioError::UnknownNode(node))?;
            self.scenario.inflow[i] += rate;
        }
        self.scenario.validate()?;
        Ok(self.scenario)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub densities: Vec<f64>,
    pub failed: Vec<bool>,
    pub time: f64,
}

impl NetworkState {
    pub fn failed_links(&self) -> Vec<LinkId> {
        self.failed
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(e, _)| LinkId(e))
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.densities.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureEvent {
    pub link: LinkId,
    pub time: f64,
}

/// Instantaneous rates evaluated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub speeds: Vec<f64>,
    /// Flow leaving each link; zero when its head node is blocked.
    pub outflows: Vec<f64>,
    /// Flow routed into each link.
    pub routed: Vec<f64>,
    /// Total inflow per node index.
    pub node_inflows: Vec<f64>,
    pub destination_inflow: f64,
    /// External inflow at origins that still have a live outgoing link.
    pub effective_inflow: f64,
}

struct Dynamics<'a> {
    scenario: &'a Scenario,
    blocked: Vec<bool>,
    local: Vec<f64>,
}

impl<'a> Dynamics<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            blocked: vec![false; scenario.network.node_count()],
            local: Vec::new(),
        }
    }

    fn rates(&mut self, state: &NetworkState) -> Rates {
        let sc = self.scenario;
        let net = &*sc.network;
        let phys = &*sc.physics;
        let m = net.link_count();
        let n = net.node_count();

        let mut speeds = vec![0.0; m];
        let mut flows = vec![0.0; m];
        for (e, p) in phys.links().iter().enumerate() {
            let rho = state.densities[e];
            speeds[e] = sc.speed_limits[e].speed(p, rho);
            if !state.failed[e] {
                flows[e] = p.flow_at(rho, speeds[e]);
            }
        }

        let mut node_inflows = vec![0.0; n];
        let mut effective_inflow = 0.0;
        let mut destination_inflow = 0.0;
        for v in 0..n {
            let out = net.outgoing_at(v);
            self.blocked[v] = !out.is_empty() && out.iter().all(|l| state.failed[l.0]);
            node_inflows[v] = match net.kind_at(v) {
                NodeKind::Origin => sc.inflow[v],
                _ => net.incoming_at(v).iter().map(|l| flows[l.0]).sum(),
            };
            match net.kind_at(v) {
                NodeKind::Origin if !self.blocked[v] => effective_inflow += sc.inflow[v],
                NodeKind::Destination => destination_inflow += node_inflows[v],
                _ => {}
            }
        }

        let mut routed = vec![0.0; m];
        for v in 0..n {
            let out = net.outgoing_at(v);
            if out.is_empty() || self.blocked[v] {
                continue;
            }
            let view: Vec<LocalLink<'_>> = out
                .iter()
                .map(|l| LocalLink {
                    physics: phys.link(*l),
                    density: state.densities[l.0],
                })
                .collect();
            self.local.clear();
            self.local.resize(out.len(), 0.0);
            if sc
                .routing
                .route(&view, node_inflows[v], &mut self.local)
                .is_err()
            {
                self.local.iter_mut().for_each(|r| *r = 0.0);
            }
            for (l, &r) in out.iter().zip(&self.local) {
                routed[l.0] = if state.failed[l.0] { 0.0 } else { r };
            }
        }

        let outflows = (0..m)
            .map(|e| {
                if self.blocked[net.head_index(LinkId(e))] {
                    0.0
                } else {
                    flows[e]
                }
            })
            .collect();

        Rates {
            speeds,
            outflows,
            routed,
            node_inflows,
            destination_inflow,
            effective_inflow,
        }
    }

    fn advance(
        &self,
        state: &mut NetworkState,
        rates: &Rates,
        dt: f64,
        new_time: f64,
        events: &mut Vec<FailureEvent>,
    ) -> Result<(), SimulationError> {
        let first_new = events.len();
        for (e, p) in self.scenario.physics.links().iter().enumerate() {
            if state.failed[e] {
                continue;
            }
            let next = state.densities[e] + dt * (rates.routed[e] - rates.outflows[e]);
            if !next.is_finite() {
                return Err(SimulationError::NonFiniteState {
                    time: state.time,
                    link: LinkId(e),
                });
            }
            let next = next.max(0.0);
            if p.is_jammed(next) {
                // Crossing time by linear interpolation within the step.
                let rho = state.densities[e];
                let theta = if next > rho {
                    ((p.jam_density - rho) / (next - rho)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                state.densities[e] = p.jam_density;
                state.failed[e] = true;
                events.push(FailureEvent {
                    link: LinkId(e),
                    time: state.time + theta * dt,
                });
            } else {
                state.densities[e] = next;
            }
        }
        events[first_new..].sort_by(|a, b| a.time.total_cmp(&b.time));
        state.time = new_time;
        Ok(())
    }
}

/// Rates at `state` under `scenario`.
pub fn rates(scenario: &Scenario, state: &NetworkState) -> Rates {
    Dynamics::new(scenario).rates(state)
}

/// Advances `state` by one explicit Euler step of length `dt`.
pub fn step(
    scenario: &Scenario,
    state: &NetworkState,
    dt: f64,
) -> Result<(NetworkState, Vec<FailureEvent>), SimulationError> {
    let mut dynamics = Dynamics::new(scenario);
    let r = dynamics.rates(state);
    let mut next = state.clone();
    let mut events = Vec::new();
    dynamics.advance(&mut next, &r, dt, state.time + dt, &mut events)?;
    Ok((next, events))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub time: f64,
    pub densities: Vec<f64>,
    pub speeds: Vec<f64>,
    pub outflows: Vec<f64>,
    pub failed: Vec<bool>,
    pub node_inflows: Vec<f64>,
    pub destination_inflow: f64,
    pub effective_inflow: f64,
    pub total_mass: f64,
    /// Integral of the destination inflow from 0 to `time`.
    pub cumulative_destination: f64,
    /// Integral of `effective_inflow - destination_inflow` from 0 to `time`,
    /// trapezoidal at the integration step.
    pub cumulative_balance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginLoad {
    pub node: NodeId,
    pub inflow: f64,
    pub links: Vec<LinkId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub samples: Vec<TraceSample>,
    /// Failure events in time order.
    pub failures: Vec<FailureEvent>,
    /// Largest density each link reached at any step.
    pub peak_densities: Vec<f64>,
    pub final_state: NetworkState,
    pub origins: Vec<OriginLoad>,
    pub total_inflow: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl SimulationTrace {
    pub fn failure_time(&self, link: LinkId) -> Option<f64> {
        self.failures
            .iter()
            .find(|f| f.link == link)
            .map(|f| f.time)
    }
}

/// Runs the scenario over `[0, horizon]`, sampling every `stride` steps and at
/// the final time.
pub fn simulate(scenario: &Scenario) -> Result<SimulationTrace, SimulationError> {
    let steps = (scenario.horizon / scenario.dt).round().max(1.0) as usize;
    let mut dynamics = Dynamics::new(scenario);
    let mut state = scenario.initial_state();
    let mut peak = state.densities.clone();
    let mut failures = Vec::new();
    let mut samples = Vec::with_capacity(steps / scenario.stride + 2);
    let mut cumulative = 0.0;
    let mut balance = 0.0;
    let mut prev_rhs: Option<f64> = None;

    for n in 0..steps {
        let r = dynamics.rates(&state);
        let rhs = r.effective_inflow - r.destination_inflow;
        if let Some(p) = prev_rhs {
            balance += 0.5 * scenario.dt * (p + rhs);
        }
        prev_rhs = Some(rhs);
        let dest = r.destination_inflow;
        if n % scenario.stride == 0 {
            samples.push(make_sample(&state, r.clone(), cumulative, balance));
        }
        let next_time = (n + 1) as f64 * scenario.dt;
        dynamics.advance(&mut state, &r, scenario.dt, next_time, &mut failures)?;
        cumulative += scenario.dt * dest;
        for (p, &rho) in peak.iter_mut().zip(&state.densities) {
            *p = p.max(rho);
        }
    }
    let r = dynamics.rates(&state);
    if let Some(p) = prev_rhs {
        balance += 0.5 * scenario.dt * (p + r.effective_inflow - r.destination_inflow);
    }
    samples.push(make_sample(&state, r, cumulative, balance));

    Ok(SimulationTrace {
        samples,
        failures,
        peak_densities: peak,
        final_state: state,
        origins: origin_loads(scenario),
        total_inflow: scenario.total_inflow(),
        dt: scenario.dt,
        horizon: steps as f64 * scenario.dt,
    })
}

fn make_sample(state: &NetworkState, r: Rates, cumulative: f64, balance: f64) -> TraceSample {
    TraceSample {
        time: state.time,
        densities: state.densities.clone(),
        speeds: r.speeds,
        outflows: r.outflows,
        failed: state.failed.clone(),
        node_inflows: r.node_inflows,
        destination_inflow: r.destination_inflow,
        effective_inflow: r.effective_inflow,
        total_mass: state.total_mass(),
        cumulative_destination: cumulative,
        cumulative_balance: balance,
    }
}

fn origin_loads(scenario: &Scenario) -> Vec<OriginLoad> {
    let net = &scenario.network;
    (0..net.node_count())
        .filter(|&v| net.kind_at(v) == NodeKind::Origin)
        .map(|v| OriginLoad {
            node: net.nodes()[v],
            inflow: scenario.inflow[v],
            links: net.outgoing_at(v).to_vec(),
        })
        .collect()
}

/// Average destination inflow over the trailing `window` of the trace
/// (trapezoidal rule on the samples, interpolating at the window start).
pub fn throughput(trace: &SimulationTrace, window: f64) -> Result<f64, TraceError> {
    let samples = &trace.samples;
    if samples.len() < 2 {
        return Err(TraceError::EmptyTrace);
    }
    let end = samples[samples.len() - 1].time;
    let horizon = end - samples[0].time;
    if !(window > 0.0 && window <= horizon * (1.0 + 1e-12)) {
        return Err(TraceError::InvalidWindow { window, horizon });
    }
    let start = (end - window).max(samples[0].time);
    let mut integral = 0.0;
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.time <= start {
            continue;
        }
        let (mut t0, mut y0) = (a.time, a.destination_inflow);
        if t0 < start {
            let s = (start - a.time) / (b.time - a.time);
            y0 = a.destination_inflow + s * (b.destination_inflow - a.destination_inflow);
            t0 = start;
        }
        integral += 0.5 * (y0 + b.destination_inflow) * (b.time - t0);
    }
    Ok(integral / (end - start))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Transferring,
    /// A loaded origin whose outgoing links have all failed.
    NonTransferring(NodeId),
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferVerdict {
    pub verdict: Verdict,
    /// Trailing-window average destination inflow.
    pub throughput: f64,
}

/// Finite-horizon reading of the transferring property.
///
/// A loaded origin with every outgoing link failed is a permanent
/// disconnection and yields `NonTransferring`. Otherwise the trace is
/// `Transferring` when the trailing-window throughput is within `eps_rel` of the
/// total external inflow, and `Undetermined` if neither holds.
pub fn classify(
    trace: &SimulationTrace,
    eps_rel: f64,
    window: f64,
) -> Result<TransferVerdict, TraceError> {
    let throughput = throughput(trace, window)?;
    let failed = &trace.final_state.failed;
    let disconnected = trace
        .origins
        .iter()
        .find(|o| o.inflow > 0.0 && o.links.iter().all(|l| failed[l.0]));
    let verdict = if let Some(o) = disconnected {
        Verdict::NonTransferring(o.node)
    } else if (throughput - trace.total_inflow).abs() <= eps_rel * trace.total_inflow + 1e-9 {
        Verdict::Transferring
    } else {
        Verdict::Undetermined
    };
    Ok(TransferVerdict {
        verdict,
        throughput,
    })
}

/// Discretized residual of the total-mass balance
/// `d/dt sum(rho) = (inflow at connected origins) - (inflow to destinations)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassResidual {
    /// Left endpoint of each sample interval.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub intervals: Vec<f64>,
    /// Average external inflow at disconnected origins on each interval.
    pub stranded_inflow: Vec<f64>,
}

impl MassResidual {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Residual against the balance that still counts inflow at disconnected
    /// origins; after a full cascade it settles at minus the stranded inflow.
    pub fn unrestricted(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.stranded_inflow)
            .map(|(r, s)| r - s)
            .collect()
    }

    /// Integral of the absolute residual over the horizon.
    pub fn integrated_abs(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.intervals)
            .map(|(r, dt)| r.abs() * dt)
            .sum()
    }
}

/// Finite-difference mass derivative minus the balance right-hand side
/// averaged over each sample interval (trapezoidal per integration step). Nonzero values come from
/// the time discretization and from mass removed by failure clamping.
pub fn mass_residual(trace: &SimulationTrace) -> MassResidual {
    let mut out = MassResidual {
        times: Vec::new(),
        values: Vec::new(),
        intervals: Vec::new(),
        stranded_inflow: Vec::new(),
    };
    for w in trace.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let h = b.time - a.time;
        if h <= 0.0 {
            continue;
        }
        out.times.push(a.time);
        out.intervals.push(h);
        out.stranded_inflow
            .push(trace.total_inflow - 0.5 * (a.effective_inflow + b.effective_inflow));
        out.values.push(
            (b.total_mass - a.total_mass - (b.cumulative_balance - a.cumulative_balance)) / h,
        );
    }
    out
}
