use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::scenario::{CapMode, PolicyName};

#[derive(Debug, Parser)]
#[command(name = "flownet", version, about = "Dynamical flow network simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and classify the run.
    Simulate(SimulateArgs),
    /// Check whether the external inflow fits within link capacities.
    Feasibility(FeasibilityArgs),
    /// Solve the capacity allocation and derive speed limits.
    Allocate(AllocateArgs),
    /// Sample a routing policy for conservation and congestion awareness.
    VerifyRouting(VerifyRoutingArgs),
    /// Rerun the bundled example scenarios.
    Reproduce(ReproduceArgs),
    /// Simulate several scenarios, optionally in parallel.
    Batch(BatchArgs),
    /// List bundled scenarios, or print one.
    Scenarios(ScenariosArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file, or the name of a bundled scenario.
    pub scenario: String,
    /// Trace table (CSV). The summary goes next to it with extension `.summary`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Speed-limit fragment replacing the scenario's section; `-` reads stdin.
    #[arg(long)]
    pub speed_limits: Option<String>,
    /// Multiply every external inflow.
    #[arg(long)]
    pub inflow_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FeasibilityArgs {
    pub scenario: String,
    #[arg(long)]
    pub inflow_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CapModeArg {
    Constant,
    Feedback,
}

impl From<CapModeArg> for CapMode {
    fn from(m: CapModeArg) -> Self {
        match m {
            CapModeArg::Constant => CapMode::Constant,
            CapModeArg::Feedback => CapMode::Feedback,
        }
    }
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    pub scenario: String,
    #[arg(long)]
    pub inflow_scale: Option<f64>,
    /// Speed-limit policy realizing the targets (default: from the file, else feedback).
    #[arg(long, value_enum)]
    pub mode: Option<CapModeArg>,
    /// Print a `[speed_limits]` fragment on stdout; the report moves to stderr.
    #[arg(long)]
    pub emit_fragment: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Proportional,
    #[value(name = "broken_equal_split")]
    BrokenEqualSplit,
}

impl From<PolicyArg> for PolicyName {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Proportional => PolicyName::Proportional,
            PolicyArg::BrokenEqualSplit => PolicyName::BrokenEqualSplit,
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyRoutingArgs {
    pub scenario: String,
    /// Samples per routing node, for each check.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Override the scenario's routing policy.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Directory for traces and summaries of each run.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(required = true)]
    pub scenarios: Vec<String>,
    /// Worker threads.
    #[arg(long, short, default_value_t = 1)]
    pub jobs: usize,
    /// Directory for `<stem>.csv` and `<stem>.summary` per scenario.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenariosArgs {
    /// Print this bundled scenario instead of listing names.
    pub name: Option<String>,
}
