//! Scenario files (TOML) and the defaults table.
//!
//! ```toml
//! nodes = [1, 2, 3]
//! initial_density = [0.0, 0.0]        # optional, zeros by default
//!
//! [diagram]                            # optional
//! free_flow_speed = 1.0
//! jam_density = 4.0                    # per lane
//!
//! [simulation]                         # optional
//! dt = 0.01
//! horizon = 200.0
//! stride = 10                          # integration steps per sample
//! window = 100.0                       # trailing throughput window
//! eps_rel = 0.02
//!
//! [routing]
//! policy = "proportional"              # or "broken_equal_split"
//!
//! [speed_limits]
//! mode = "max"                         # max | constant | feedback | allocated
//! [[speed_limits.link]]                # per-link override, link ids count from 0
//! link = 0
//! mode = "feedback"
//! target = 2.0
//!
//! [allocation]
//! rho_star = [..]                      # default: critical densities
//! alpha = [..]                         # default: 1 per link
//! mode = "feedback"                    # policy used by `mode = "allocated"`
//!
//! [[links]]
//! tail = 1
//! head = 2
//! lanes = 4.0
//! max_speed = 1.0                      # default: free_flow_speed
//!
//! [[inflows]]
//! node = 1
//! rate = 6.0
//! ```

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use flownet_core::dynamics::{DEFAULT_DT, DEFAULT_EPS_REL, DEFAULT_HORIZON, DEFAULT_STRIDE};
use flownet_core::{
    allocate, build_polytope, speed_limits_from_allocation, CapacityAllocation, EqualSplit,
    FlowNetwork, Greenshields, LinkId, LinkSpec, NetworkError, NetworkPhysics, NodeId,
    Proportional, RoutingPolicy, Scenario, ScenarioError, SpeedLimitMode, SpeedLimitPolicy,
};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::CliError;

pub const DEFAULTS_ENV: &str = "FLOWNET_DEFAULTS";

/// Values used when a scenario leaves a setting out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Defaults {
    pub dt: f64,
    pub horizon: f64,
    pub stride: usize,
    /// Throughput window as a fraction of the horizon.
    pub window_fraction: f64,
    pub eps_rel: f64,
    /// Objective weight for every link.
    pub alpha: f64,
    pub free_flow_speed: f64,
    pub jam_density: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            stride: DEFAULT_STRIDE,
            window_fraction: 0.5,
            eps_rel: DEFAULT_EPS_REL,
            alpha: 1.0,
            free_flow_speed: 1.0,
            jam_density: 4.0,
        }
    }
}

impl Defaults {
    /// Built-in defaults, overridden by the file named in `FLOWNET_DEFAULTS`.
    pub fn load() -> Result<Self, CliError> {
        match std::env::var_os(DEFAULTS_ENV) {
            Some(path) if !path.is_empty() => {
                let path = Path::new(&path);
                let text = read(path)?;
                toml::from_str(&text).map_err(|e| CliError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            }
            _ => Ok(Self::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub nodes: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_density: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagram: Option<DiagramSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing: Option<RoutingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_limits: Option<SpeedLimitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationSection>,
    pub links: Vec<Spanned<LinkEntry>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inflows: Vec<Spanned<InflowEntry>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_flow_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jam_density: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_rel: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Proportional,
    BrokenEqualSplit,
}

impl PolicyName {
    pub fn name(self) -> &'static str {
        match self {
            Self::Proportional => "proportional",
            Self::BrokenEqualSplit => "broken_equal_split",
        }
    }

    pub fn policy(self) -> Arc<dyn RoutingPolicy> {
        match self {
            Self::Proportional => Arc::new(Proportional),
            Self::BrokenEqualSplit => Arc::new(EqualSplit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingSection {
    pub policy: PolicyName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalMode {
    #[default]
    Max,
    Constant,
    Feedback,
    Allocated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    Max,
    Constant,
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapMode {
    Constant,
    Feedback,
}

impl CapMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Feedback => "feedback",
        }
    }
}

impl From<CapMode> for SpeedLimitMode {
    fn from(m: CapMode) -> Self {
        match m {
            CapMode::Constant => SpeedLimitMode::Constant,
            CapMode::Feedback => SpeedLimitMode::Feedback,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedLimitSection {
    /// Applies to links without an override. `constant` and `feedback`
    /// without a target cap at capacity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<GlobalMode>,
    #[serde(default, rename = "link", skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<Spanned<LinkOverride>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub link: usize,
    pub mode: LinkMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<CapMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub tail: u32,
    pub head: u32,
    pub lanes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflowEntry {
    pub node: u32,
    pub rate: f64,
}

/// A speed-limit section on its own, as emitted by `allocate --emit-fragment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fragment {
    pub speed_limits: SpeedLimitSection,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A parsed scenario together with its source text, for line-anchored errors.
#[derive(Debug, Clone)]
pub struct ScenarioDoc {
    pub origin: String,
    pub source: String,
    pub file: ScenarioFile,
}

impl ScenarioDoc {
    pub fn parse(origin: impl Into<String>, source: impl Into<String>) -> Result<Self, CliError> {
        let (origin, source) = (origin.into(), source.into());
        let file = toml::from_str(&source).map_err(|e| CliError::Parse {
            path: origin.clone(),
            message: e.to_string(),
        })?;
        Ok(Self {
            origin,
            source,
            file,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(path.display().to_string(), read(path)?)
    }

    /// Replaces the speed-limit section with a fragment document.
    pub fn apply_fragment(&mut self, origin: &str, text: &str) -> Result<(), CliError> {
        let fragment: Fragment = toml::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        self.file.speed_limits = Some(fragment.speed_limits);
        // Spans inside the fragment refer to different text; re-render so
        // later diagnostics point at the merged document.
        self.source = self.file.to_toml()?;
        self.file = toml::from_str(&self.source).map_err(|e| CliError::Parse {
            path: self.origin.clone(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.source.len());
        self.source[..end].matches('\n').count() + 1
    }

    fn invalid(&self, span: Option<Range<usize>>, message: impl Into<String>) -> CliError {
        CliError::Invalid {
            path: self.origin.clone(),
            line: span.map(|s| self.line(s)),
            message: message.into(),
        }
    }

    fn link_span(&self, link: LinkId) -> Option<Range<usize>> {
        self.file.links.get(link.0).map(|l| l.span())
    }

    fn inflow_span(&self, node: NodeId) -> Option<Range<usize>> {
        self.file
            .inflows
            .iter()
            .find(|i| i.get_ref().node == node.0)
            .map(|i| i.span())
    }

    fn network_error(&self, e: NetworkError) -> CliError {
        let span = match &e {
            NetworkError::DanglingEndpoint(l)
            | NetworkError::NonPositiveParameter(l)
            | NetworkError::SelfLoop(l) => self.link_span(*l),
            _ => None,
        };
        self.invalid(span, e.to_string())
    }

    fn scenario_error(&self, e: ScenarioError) -> CliError {
        let span = match &e {
            ScenarioError::UnknownNode(n)
            | ScenarioError::InflowAtNonOrigin(n)
            | ScenarioError::InvalidInflow(n) => self.inflow_span(*n),
            _ => None,
        };
        self.invalid(span, e.to_string())
    }

    /// Multiplies every external inflow by `factor`.
    pub fn scale_inflows(&mut self, factor: f64) -> Result<(), CliError> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(CliError::Usage(format!(
                "inflow scale {factor} must be finite and nonnegative"
            )));
        }
        for i in &mut self.file.inflows {
            i.get_mut().rate *= factor;
        }
        Ok(())
    }

    /// Validates the document and builds everything needed to run it.
    pub fn resolve(&self, defaults: &Defaults) -> Result<Resolved, CliError> {
        self.resolve_inner(defaults, true)
    }

    /// Like [`resolve`](Self::resolve) but leaves every link at its maximum
    /// speed limit, so an allocation that cannot be solved is not an error.
    pub fn resolve_model(&self, defaults: &Defaults) -> Result<Resolved, CliError> {
        self.resolve_inner(defaults, false)
    }

    fn resolve_inner(&self, defaults: &Defaults, with_limits: bool) -> Result<Resolved, CliError> {
        let f = &self.file;
        let diagram = f.diagram.clone().unwrap_or_default();
        let v_f = diagram.free_flow_speed.unwrap_or(defaults.free_flow_speed);
        let jam = diagram.jam_density.unwrap_or(defaults.jam_density);
        if !(v_f.is_finite() && v_f > 0.0 && jam.is_finite() && jam > 0.0) {
            return Err(self.invalid(None, "diagram parameters must be positive and finite"));
        }

        let nodes: Vec<NodeId> = f.nodes.iter().copied().map(NodeId).collect();
        let specs: Vec<LinkSpec> = f
            .links
            .iter()
            .map(|l| {
                let l = l.get_ref();
                LinkSpec::new(l.tail, l.head, l.lanes, l.max_speed.unwrap_or(v_f))
            })
            .collect();
        let network =
            Arc::new(FlowNetwork::build(&nodes, &specs).map_err(|e| self.network_error(e))?);
        let physics = Arc::new(NetworkPhysics::new(
            &network,
            Arc::new(Greenshields::new(v_f, jam)),
        ));
        let m = network.link_count();

        let sim = f.simulation.clone().unwrap_or_default();
        let horizon = sim.horizon.unwrap_or(defaults.horizon);
        let window = sim.window.unwrap_or(defaults.window_fraction * horizon);
        let eps_rel = sim.eps_rel.unwrap_or(defaults.eps_rel);
        if !(window > 0.0 && window <= horizon) {
            return Err(self.invalid(None, format!("window {window} must lie in (0, {horizon}]")));
        }
        if !(eps_rel.is_finite() && eps_rel >= 0.0) {
            return Err(self.invalid(None, "eps_rel must be nonnegative"));
        }

        let mut builder = Scenario::builder(network.clone(), physics.clone())
            .dt(sim.dt.unwrap_or(defaults.dt))
            .horizon(horizon)
            .stride(sim.stride.unwrap_or(defaults.stride))
            .routing(
                f.routing
                    .as_ref()
                    .map_or(PolicyName::Proportional, |r| r.policy)
                    .policy(),
            )
            .initial(f.initial_density.clone().unwrap_or_else(|| vec![0.0; m]));
        for i in &f.inflows {
            let i = i.get_ref();
            builder = builder.inflow(NodeId(i.node), i.rate);
        }
        let mut scenario = builder.build().map_err(|e| self.scenario_error(e))?;

        let alloc = f.allocation.clone().unwrap_or_default();
        let rho_star = alloc
            .rho_star
            .unwrap_or_else(|| physics.critical_densities());
        let alpha = alloc.alpha.unwrap_or_else(|| vec![defaults.alpha; m]);
        let allocation_mode = alloc.mode.unwrap_or(CapMode::Feedback);
        for (what, v) in [("rho_star", &rho_star), ("alpha", &alpha)] {
            if v.len() != m {
                return Err(self.invalid(
                    None,
                    format!("allocation.{what} has {} entries, expected {m}", v.len()),
                ));
            }
        }

        let limits = if with_limits {
            f.speed_limits.clone().unwrap_or_default()
        } else {
            SpeedLimitSection::default()
        };
        let mode = limits.mode.unwrap_or_default();
        let mut allocation = None;
        let mut policies = match mode {
            GlobalMode::Max => vec![SpeedLimitPolicy::MaxAlways; m],
            GlobalMode::Constant | GlobalMode::Feedback => physics
                .links()
                .iter()
                .map(|p| {
                    if mode == GlobalMode::Constant {
                        SpeedLimitPolicy::constant(p, p.capacity)
                    } else {
                        SpeedLimitPolicy::feedback(p, p.capacity)
                    }
                })
                .collect::<Result<_, _>>()
                .map_err(|e| self.invalid(None, e.to_string()))?,
            GlobalMode::Allocated => {
                let a = allocation_for(&network, &physics, &rho_star, &scenario.inflow, &alpha)?;
                let p = speed_limits_from_allocation(&a, &physics, allocation_mode.into())?;
                allocation = Some(a);
                p
            }
        };
        for o in &limits.overrides {
            let span = Some(o.span());
            let o = o.get_ref();
            if o.link >= m {
                return Err(self.invalid(span, format!("link {} does not exist", o.link)));
            }
            let p = physics.link(LinkId(o.link));
            let target = match (o.mode, o.target) {
                (LinkMode::Max, _) => None,
                (_, Some(t)) => Some(t),
                (_, None) => {
                    return Err(self.invalid(span, "constant and feedback overrides need a target"));
                }
            };
            policies[o.link] = match (o.mode, target) {
                (LinkMode::Constant, Some(t)) => SpeedLimitPolicy::constant(p, t),
                (LinkMode::Feedback, Some(t)) => SpeedLimitPolicy::feedback(p, t),
                _ => Ok(SpeedLimitPolicy::MaxAlways),
            }
            .map_err(|e| self.invalid(span, e.to_string()))?;
        }
        scenario.speed_limits = policies;

        Ok(Resolved {
            scenario,
            window,
            eps_rel,
            rho_star,
            alpha,
            allocation_mode,
            allocation,
        })
    }
}

/// Runs the allocation LP for a scenario's inflow.
pub fn allocation_for(
    network: &FlowNetwork,
    physics: &NetworkPhysics,
    rho_star: &[f64],
    inflow: &[f64],
    alpha: &[f64],
) -> Result<CapacityAllocation, CliError> {
    let polytope = build_polytope(network, physics, rho_star, inflow)?;
    Ok(allocate(&polytope, alpha)?)
}

impl ScenarioFile {
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Serialize(e.to_string()))
    }
}

/// Everything a command needs to run a scenario.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub window: f64,
    pub eps_rel: f64,
    pub rho_star: Vec<f64>,
    pub alpha: Vec<f64>,
    pub allocation_mode: CapMode,
    /// Present when the speed limits came from an allocation.
    pub allocation: Option<CapacityAllocation>,
}

/// Speed-limit fragment pinning every link to an allocated target.
pub fn fragment_for(allocation: &CapacityAllocation, mode: CapMode) -> Fragment {
    let link_mode = match mode {
        CapMode::Constant => LinkMode::Constant,
        CapMode::Feedback => LinkMode::Feedback,
    };
    Fragment {
        speed_limits: SpeedLimitSection {
            mode: Some(GlobalMode::Max),
            overrides: allocation
                .targets
                .iter()
                .enumerate()
                .map(|(link, &t)| {
                    Spanned::new(
                        0..0,
                        LinkOverride {
                            link,
                            mode: link_mode,
                            target: Some(t),
                        },
                    )
                })
                .collect(),
        },
    }
}

impl Fragment {
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Serialize(e.to_string()))
    }
}
