//! Subcommand implementations. Each writes its report to `out`, diagnostics
//! to `err`, and returns the process exit code.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::Parser;
use flownet_core::routing::{check_congestion_aware, check_conservation, ConservationViolation};
use flownet_core::{
    classify, is_feasible, simulate, speed_limits_from_allocation, AllocationError,
    SimulationTrace, TransferVerdict, Verdict,
};
use rayon::prelude::*;

use crate::args::{
    AllocateArgs, BatchArgs, Cli, Command, FeasibilityArgs, ReproduceArgs, ScenariosArgs,
    SimulateArgs, VerifyRoutingArgs,
};
use crate::scenario::{allocation_for, fragment_for, Defaults, PolicyName, Resolved, ScenarioDoc};
use crate::trace::{summary, verdict_name, write_trace};
use crate::{bundled, exit, CliError};

/// Parses arguments, runs the command on the process streams and returns the
/// exit code. Argument errors exit with the input-error code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::INPUT_ERROR
            } else {
                exit::SUCCESS
            };
        }
    };
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr().lock());
    run(cli.command, &mut out, &mut err)
}

pub fn run(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let result = Defaults::load().and_then(|defaults| match command {
        Command::Simulate(a) => cmd_simulate(&a, &defaults, out),
        Command::Feasibility(a) => cmd_feasibility(&a, &defaults, out),
        Command::Allocate(a) => cmd_allocate(&a, &defaults, out, err),
        Command::VerifyRouting(a) => cmd_verify_routing(&a, &defaults, out),
        Command::Reproduce(a) => cmd_reproduce(&a, &defaults, out),
        Command::Batch(a) => cmd_batch(&a, &defaults, out),
        Command::Scenarios(a) => cmd_scenarios(&a, out),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit::INPUT_ERROR
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads a scenario from a path, falling back to a bundled scenario name.
pub fn load_scenario(name: &str) -> Result<ScenarioDoc, CliError> {
    let path = Path::new(name);
    if path.exists() {
        return ScenarioDoc::load(path);
    }
    match bundled::lookup(name) {
        Some(text) => ScenarioDoc::parse(name, text),
        None => Err(CliError::Io {
            path: name.to_string(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no such file or bundled scenario",
            ),
        }),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        })
}

/// A finished simulation with its classification and summary text.
pub struct Run {
    pub trace: SimulationTrace,
    pub verdict: TransferVerdict,
    pub summary: String,
}

impl Run {
    pub fn exit_code(&self) -> u8 {
        match self.verdict.verdict {
            Verdict::Transferring => exit::SUCCESS,
            Verdict::NonTransferring(_) => exit::NON_TRANSFERRING,
            Verdict::Undetermined => exit::UNDETERMINED,
        }
    }

    /// Writes `<path>` (trace) and `<path>.summary`.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        write_trace(&self.trace, std::io::BufWriter::new(file))?;
        let summary_path = path.with_extension("summary");
        std::fs::write(&summary_path, &self.summary).map_err(io_err(&summary_path))
    }
}

pub fn run_resolved(r: &Resolved) -> Result<Run, CliError> {
    let trace = simulate(&r.scenario)?;
    let verdict = classify(&trace, r.eps_rel, r.window)?;
    let summary = summary(
        &r.scenario.network,
        &r.scenario.physics,
        &trace,
        &verdict,
        r.window,
        r.eps_rel,
    );
    Ok(Run {
        trace,
        verdict,
        summary,
    })
}

fn cmd_simulate(
    a: &SimulateArgs,
    defaults: &Defaults,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let mut doc = load_scenario(&a.scenario)?;
    if let Some(src) = &a.speed_limits {
        let text = if src == "-" {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|source| CliError::Io {
                    path: "<stdin>".into(),
                    source,
                })?;
            s
        } else {
            let p = Path::new(src);
            std::fs::read_to_string(p).map_err(io_err(p))?
        };
        doc.apply_fragment(src, &text)?;
    }
    if let Some(k) = a.inflow_scale {
        doc.scale_inflows(k)?;
    }
    let run = run_resolved(&doc.resolve(defaults)?)?;
    if let Some(path) = &a.out {
        run.save(path)?;
    }
    write_out(out, &run.summary)?;
    Ok(run.exit_code())
}

fn cmd_feasibility(
    a: &FeasibilityArgs,
    defaults: &Defaults,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let mut doc = load_scenario(&a.scenario)?;
    if let Some(k) = a.inflow_scale {
        doc.scale_inflows(k)?;
    }
    let r = doc.resolve_model(defaults)?;
    let sc = &r.scenario;
    let result = is_feasible(&sc.network, &sc.physics.capacities(), &sc.inflow)?;
    let mut s = String::new();
    let _ = writeln!(s, "feasible: {}", result.feasible);
    let _ = writeln!(s, "min_slack: {}", result.min_slack);
    let _ = writeln!(s, "witness_cut: {}", result.witness_cut);
    let _ = writeln!(s, "max_flow: {}", result.max_flow_value);
    let _ = writeln!(s, "total_inflow: {}", sc.total_inflow());
    write_out(out, &s)?;
    Ok(if result.feasible {
        exit::SUCCESS
    } else {
        exit::INFEASIBLE
    })
}

fn cmd_allocate(
    a: &AllocateArgs,
    defaults: &Defaults,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<u8, CliError> {
    let mut doc = load_scenario(&a.scenario)?;
    if let Some(k) = a.inflow_scale {
        doc.scale_inflows(k)?;
    }
    let r = doc.resolve_model(defaults)?;
    let (net, phys) = (&r.scenario.network, &r.scenario.physics);
    let alloc = match allocation_for(net, phys, &r.rho_star, &r.scenario.inflow, &r.alpha) {
        Ok(alloc) => alloc,
        Err(CliError::Allocation(e @ AllocationError::InfeasibleInflow { .. })) => {
            let _ = writeln!(err, "error: {e}");
            return Ok(exit::INFEASIBLE);
        }
        Err(e) => return Err(e),
    };
    let mode = a.mode.map_or(r.allocation_mode, Into::into);
    let policies = speed_limits_from_allocation(&alloc, phys, mode.into())?;

    let mut s = String::new();
    let _ = writeln!(s, "mode: {}", mode.name());
    let _ = writeln!(s, "objective: {}", alloc.objective);
    let _ = writeln!(s, "alternative_optima: {}", alloc.alternative_optima);
    for (e, p) in phys.links().iter().enumerate() {
        let link = net.link(p.link);
        let target = alloc.targets[e];
        let rho_hat = p.rho_hat(target).map_err(AllocationError::from)?;
        let _ = write!(
            s,
            "link: id={e} tail={} head={} target={target} capacity={} rho_star={} rho_hat={rho_hat}",
            link.tail, link.head, p.capacity, r.rho_star[e]
        );
        match policies[e] {
            flownet_core::SpeedLimitPolicy::ConstantCap { speed, .. } => {
                let _ = writeln!(s, " speed={speed}");
            }
            _ => {
                let _ = writeln!(s, " max_speed={}", p.max_speed);
            }
        }
    }
    if a.emit_fragment {
        write_out(err, &s)?;
        write_out(out, &fragment_for(&alloc, mode).to_toml()?)?;
    } else {
        write_out(out, &s)?;
    }
    Ok(exit::SUCCESS)
}

fn describe_conservation(v: &ConservationViolation) -> String {
    match v {
        ConservationViolation::Conservation {
            node,
            densities,
            inflow,
            residual,
        } => format!(
            "kind=conservation node={node} inflow={inflow} residual={residual} densities={densities:?}"
        ),
        ConservationViolation::JammedLinkLoaded {
            node,
            link,
            densities,
            inflow,
            routed,
        } => format!(
            "kind=jammed_link_loaded node={node} link={link} inflow={inflow} routed={routed} densities={densities:?}"
        ),
        ConservationViolation::Negative { node, link, routed } => {
            format!("kind=negative node={node} link={link} routed={routed}")
        }
    }
}

/// Counterexamples printed per check.
const SHOWN_VIOLATIONS: usize = 5;

fn cmd_verify_routing(
    a: &VerifyRoutingArgs,
    defaults: &Defaults,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let doc = load_scenario(&a.scenario)?;
    let r = doc.resolve_model(defaults)?;
    let (net, phys) = (&r.scenario.network, &r.scenario.physics);
    let name = match a.policy {
        Some(p) => p.into(),
        None => doc
            .file
            .routing
            .as_ref()
            .map_or(PolicyName::Proportional, |r| r.policy),
    };
    let policy = name.policy();

    let (mut conservation_samples, mut conservation_count) = (0, 0);
    let mut conservation = Vec::new();
    for (i, node) in net.non_destinations().into_iter().enumerate() {
        let report = check_conservation(
            policy.as_ref(),
            net,
            phys,
            node,
            a.samples,
            a.seed.wrapping_add(i as u64),
        )?;
        conservation_samples += report.samples;
        conservation_count += report.violation_count;
        conservation.extend(report.violations);
    }
    let awareness =
        check_congestion_aware(policy.as_ref(), net, phys, &r.rho_star, a.samples, a.seed)?;

    let mut s = String::new();
    let _ = writeln!(s, "policy: {}", name.name());
    let _ = writeln!(s, "samples_per_node: {}", a.samples);
    let _ = writeln!(s, "conservation_samples: {conservation_samples}");
    let _ = writeln!(s, "conservation_violations: {conservation_count}");
    let _ = writeln!(s, "awareness_samples: {}", awareness.samples);
    let _ = writeln!(s, "awareness_violations: {}", awareness.violation_count);
    for v in conservation.iter().take(SHOWN_VIOLATIONS) {
        let _ = writeln!(s, "violation: {}", describe_conservation(v));
    }
    for v in awareness.violations.iter().take(SHOWN_VIOLATIONS) {
        let _ = writeln!(
            s,
            "violation: kind=congestion_awareness node={} link={} inflow={} routed={} bound={} densities={:?}",
            v.node, v.link, v.inflow, v.routed, v.bound, v.densities
        );
    }
    let passed = conservation_count == 0 && awareness.passed();
    let _ = writeln!(s, "passed: {passed}");
    write_out(out, &s)?;
    Ok(if passed {
        exit::SUCCESS
    } else {
        exit::VIOLATIONS
    })
}

/// Bundled runs and the verdict each is expected to reach.
const REPRODUCED: [(&str, Verdict); 3] = [
    ("paper_fig1_intact", Verdict::Transferring),
    (
        "paper_fig2_reduced",
        Verdict::NonTransferring(flownet_core::NodeId(1)),
    ),
    ("reduced_allocated", Verdict::Transferring),
];

fn cmd_reproduce(
    a: &ReproduceArgs,
    defaults: &Defaults,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut all = true;
    for (name, expected) in REPRODUCED {
        let doc = load_scenario(name)?;
        let r = doc.resolve(defaults)?;
        let run = run_resolved(&r)?;
        if let Some(dir) = &a.out_dir {
            run.save(&dir.join(format!("{name}.csv")))?;
        }
        let sc = &r.scenario;
        let feas = is_feasible(&sc.network, &sc.physics.capacities(), &sc.inflow)?;
        let matched = run.verdict.verdict == expected;
        all &= matched;
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {name}");
        let _ = writeln!(s, "expected_verdict: {}", verdict_name(expected));
        let _ = writeln!(s, "matched: {matched}");
        let _ = writeln!(s, "feasible: {}", feas.feasible);
        let _ = writeln!(s, "min_slack: {}", feas.min_slack);
        let _ = writeln!(s, "witness_cut: {}", feas.witness_cut);
        if let Some(alloc) = &r.allocation {
            let targets: Vec<String> = alloc.targets.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "allocation: {}", targets.join(" "));
        }
        s.push_str(&run.summary);
        s.push('\n');
        write_out(out, &s)?;
    }
    Ok(if all {
        exit::SUCCESS
    } else {
        exit::NON_TRANSFERRING
    })
}

fn batch_one(name: &str, defaults: &Defaults, out_dir: Option<&Path>) -> Result<Run, CliError> {
    let run = run_resolved(&load_scenario(name)?.resolve(defaults)?)?;
    if let Some(dir) = out_dir {
        let stem = Path::new(name)
            .file_stem()
            .map_or_else(|| name.into(), |s| s.to_string_lossy().into_owned());
        run.save(&dir.join(format!("{stem}.csv")))?;
    }
    Ok(run)
}

/// Worst outcome first: input errors, then non-transferring, then undetermined.
fn aggregate(codes: &[u8]) -> u8 {
    [
        exit::INPUT_ERROR,
        exit::NON_TRANSFERRING,
        exit::UNDETERMINED,
    ]
    .into_iter()
    .find(|c| codes.contains(c))
    .unwrap_or(exit::SUCCESS)
}

fn cmd_batch(a: &BatchArgs, defaults: &Defaults, out: &mut dyn Write) -> Result<u8, CliError> {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let out_dir: Option<PathBuf> = a.out_dir.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let results: Vec<Result<Run, CliError>> = pool.install(|| {
        a.scenarios
            .par_iter()
            .map(|name| batch_one(name, defaults, out_dir.as_deref()))
            .collect()
    });

    let mut s = String::new();
    let mut codes = Vec::new();
    for (name, result) in a.scenarios.iter().zip(&results) {
        match result {
            Ok(run) => {
                codes.push(run.exit_code());
                let _ = writeln!(
                    s,
                    "run: path={name} exit={} verdict={} throughput={} failures={}",
                    run.exit_code(),
                    verdict_name(run.verdict.verdict),
                    run.verdict.throughput,
                    run.trace.failures.len()
                );
            }
            Err(e) => {
                codes.push(exit::INPUT_ERROR);
                let _ = writeln!(s, "run: path={name} exit={} error={e}", exit::INPUT_ERROR);
            }
        }
    }
    write_out(out, &s)?;
    Ok(aggregate(&codes))
}

fn cmd_scenarios(a: &ScenariosArgs, out: &mut dyn Write) -> Result<u8, CliError> {
    match &a.name {
        None => {
            let names: Vec<&str> = bundled::SCENARIOS.iter().map(|(n, _)| *n).collect();
            write_out(out, &format!("{}\n", names.join("\n")))?;
        }
        Some(name) => match bundled::lookup(name) {
            Some(text) => write_out(out, text)?,
            None => return Err(CliError::Usage(format!("no bundled scenario named {name}"))),
        },
    }
    Ok(exit::SUCCESS)
}
