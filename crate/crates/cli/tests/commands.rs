use std::path::Path;
use std::process::{Command, Output, Stdio};

use flownet_cli::trace::parse_summary;

fn flownet(args: &[&str]) -> Output {
    flownet_env(args, None)
}

fn flownet_env(args: &[&str], defaults: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flownet"));
    cmd.args(args).env_remove("FLOWNET_DEFAULTS");
    if let Some(path) = defaults {
        cmd.env("FLOWNET_DEFAULTS", path);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn value(text: &str, key: &str) -> String {
    parse_summary(text)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .1
}

fn values(text: &str, key: &str) -> Vec<String> {
    parse_summary(text)
        .into_iter()
        .filter(|(k, _)| k == key)
        .map(|(_, v)| v)
        .collect()
}

fn field<'a>(entry: &'a str, name: &str) -> &'a str {
    entry
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {name} in {entry}"))
}

fn bundled_text(name: &str) -> String {
    std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.toml")),
    )
    .unwrap()
}

#[test]
fn intact_scenario_transfers_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("intact.csv");
    let o = flownet(&[
        "simulate",
        "paper_fig1_intact",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(value(&s, "verdict"), "transferring");
    assert_eq!(value(&s, "failures"), "0");
    let throughput: f64 = value(&s, "throughput").parse().unwrap();
    assert!((throughput - 6.0).abs() <= 0.12);
    for peak in values(&s, "peak") {
        let rho: f64 = field(&peak, "rho").parse().unwrap();
        let crit: f64 = field(&peak, "critical").parse().unwrap();
        assert!(rho <= crit * (1.0 + 1e-6), "{peak}");
    }

    let summary = std::fs::read_to_string(dir.path().join("intact.summary")).unwrap();
    assert_eq!(summary, s);

    let mut reader = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(
        reader.headers().unwrap(),
        vec!["t", "link_id", "rho", "u", "flow", "failed"]
    );
    let mut last = (f64::NEG_INFINITY, 0usize);
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let t: f64 = rec[0].parse().unwrap();
        let link: usize = rec[1].parse().unwrap();
        assert!(
            t > last.0 || (t == last.0 && link > last.1),
            "rows out of order"
        );
        last = (t, link);
        for i in 2..5 {
            assert!(rec[i].parse::<f64>().unwrap().is_finite());
        }
        assert!(matches!(&rec[5], "0" | "1"));
        rows += 1;
    }
    // 2001 samples (every 10 steps over 20000 steps) times 5 links.
    assert_eq!(rows, 2001 * 5);
}

#[test]
fn reduced_scenario_names_the_disconnected_origin() {
    let o = flownet(&["simulate", "paper_fig2_reduced"]);
    assert_eq!(o.status.code(), Some(2));
    let s = stdout(&o);
    assert_eq!(value(&s, "verdict"), "non_transferring");
    assert_eq!(value(&s, "disconnected_origin"), "1");
    let failed: Vec<String> = values(&s, "failure")
        .iter()
        .map(|f| field(f, "link").to_string())
        .collect();
    assert_eq!(failed, ["2", "3", "0", "1"]);
    assert!(value(&s, "throughput").parse::<f64>().unwrap() < 6.0);
}

#[test]
fn inflow_at_non_origin_is_a_line_anchored_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = bundled_text("paper_fig1_intact").replace("node = 1\n", "node = 3\n");
    std::fs::write(&path, &text).unwrap();
    let o = flownet(&["simulate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("non-origin node 3"), "{err}");
    let line = text.lines().position(|l| l == "[[inflows]]").unwrap() + 1;
    assert!(err.contains(&format!("bad.toml:{line}:")), "{err}");
}

#[test]
fn unknown_keys_are_rejected_with_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    let text = bundled_text("paper_fig1_intact")
        .replace("horizon = 200.0", "horizon = 200.0\nhorizn = 10.0");
    std::fs::write(&path, &text).unwrap();
    let o = flownet(&["simulate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    let line = text.lines().position(|l| l.starts_with("horizn")).unwrap() + 1;
    assert!(err.contains("unknown field `horizn`"), "{err}");
    assert!(err.contains(&format!("line {line}")), "{err}");
}

#[test]
fn missing_scenario_is_an_input_error() {
    let o = flownet(&["simulate", "does_not_exist.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does_not_exist.toml"));
}

#[test]
fn bad_arguments_exit_with_input_error() {
    assert_eq!(flownet(&["simulate"]).status.code(), Some(1));
    assert_eq!(flownet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(flownet(&["--help"]).status.code(), Some(0));
}

#[test]
fn feasibility_reports_slack_and_witness() {
    let o = flownet(&["feasibility", "paper_fig1_intact"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert_eq!(value(&s, "feasible"), "true");
    assert_eq!(value(&s, "min_slack"), "1");
    assert_eq!(value(&s, "witness_cut"), "{1,2}");

    let s = stdout(&flownet(&["feasibility", "paper_fig2_reduced"]));
    assert_eq!(value(&s, "feasible"), "true");
    assert_eq!(value(&s, "min_slack").parse::<f64>().unwrap(), 0.0);

    let o = flownet(&[
        "feasibility",
        "paper_fig2_reduced",
        "--inflow-scale",
        "1.1666666666666667",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let s = stdout(&o);
    assert_eq!(value(&s, "feasible"), "false");
    assert!((value(&s, "min_slack").parse::<f64>().unwrap() + 1.0).abs() <= 1e-9);
}

#[test]
fn allocation_targets_and_fragment_round_trip_through_simulate() {
    let o = flownet(&["allocate", "paper_fig2_reduced"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let targets: Vec<f64> = values(&stdout(&o), "link")
        .iter()
        .map(|l| field(l, "target").parse().unwrap())
        .collect();
    let expected = [2.0, 4.0, 1.0, 1.0, 6.0];
    for (t, e) in targets.iter().zip(expected) {
        assert!((t - e).abs() <= 1e-9, "{targets:?}");
    }

    let o = flownet(&["allocate", "paper_fig2_reduced", "--emit-fragment"]);
    assert_eq!(o.status.code(), Some(0));
    let fragment = stdout(&o);
    assert!(fragment.starts_with("[speed_limits]"), "{fragment}");
    assert!(stderr(&o).contains("target=2"));

    // File form.
    let dir = tempfile::tempdir().unwrap();
    let frag_path = dir.path().join("limits.toml");
    std::fs::write(&frag_path, &fragment).unwrap();
    let o = flownet(&[
        "simulate",
        "paper_fig2_reduced",
        "--speed-limits",
        frag_path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(value(&stdout(&o), "failures"), "0");

    // Piped form.
    let mut child = Command::new(env!("CARGO_BIN_EXE_flownet"))
        .args(["simulate", "paper_fig2_reduced", "--speed-limits", "-"])
        .env_remove("FLOWNET_DEFAULTS")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        use std::io::Write;
        child
            .stdin
            .take()
            .unwrap()
            .write_all(fragment.as_bytes())
            .unwrap();
    }
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(value(&stdout(&o), "verdict"), "transferring");
}

#[test]
fn allocated_mode_in_the_scenario_file_prevents_the_cascade() {
    let o = flownet(&["simulate", "reduced_allocated"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert_eq!(value(&s, "failures"), "0");
    let rho_hat_12 = 8.0 + 8.0 * (1.0f64 - 0.5).sqrt();
    let peak: f64 = field(&values(&s, "peak")[0], "rho").parse().unwrap();
    assert!(peak <= rho_hat_12 + 10.0 * 0.01 * 4.0, "{peak}");
}

#[test]
fn inflated_inflow_cannot_be_allocated() {
    let o = flownet(&["allocate", "paper_fig2_reduced", "--inflow-scale", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("cannot be sustained") && err.contains("{1,2}"),
        "{err}"
    );
}

#[test]
fn routing_verification_separates_good_and_broken_policies() {
    let o = flownet(&["verify-routing", "paper_fig1_intact", "--samples", "10000"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert_eq!(value(&s, "conservation_violations"), "0");
    assert_eq!(value(&s, "awareness_violations"), "0");
    assert_eq!(value(&s, "awareness_samples"), "30000");

    let o = flownet(&[
        "verify-routing",
        "paper_fig1_intact",
        "--policy",
        "broken_equal_split",
        "--samples",
        "2000",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let s = stdout(&o);
    assert!(value(&s, "awareness_violations").parse::<usize>().unwrap() > 0);
    assert!(values(&s, "violation")[0].contains("kind=congestion_awareness"));

    let o = flownet(&["verify-routing", "paper_fig1_intact", "--samples", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least one sample"));
}

#[test]
fn batch_runs_in_parallel_and_reports_worst_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let o = flownet(&[
        "batch",
        "--jobs",
        "2",
        "--out-dir",
        out.to_str().unwrap(),
        "paper_fig1_intact",
        "paper_fig2_reduced",
        "reduced_allocated",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let runs = values(&stdout(&o), "run");
    assert_eq!(runs.len(), 3);
    assert_eq!(field(&runs[0], "exit"), "0");
    assert_eq!(field(&runs[1], "exit"), "2");
    assert_eq!(field(&runs[2], "verdict"), "transferring");
    for stem in [
        "paper_fig1_intact",
        "paper_fig2_reduced",
        "reduced_allocated",
    ] {
        assert!(out.join(format!("{stem}.csv")).is_file());
        assert!(out.join(format!("{stem}.summary")).is_file());
    }

    let o = flownet(&["batch", "-j", "2", "paper_fig1_intact", "nope.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let o = flownet(&["batch", "-j", "2", "paper_fig1_intact", "reduced_allocated"]);
    assert_eq!(o.status.code(), Some(0));
    let o = flownet(&["batch", "-j", "0", "paper_fig1_intact"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn batch_results_do_not_depend_on_job_count() {
    let args = |jobs: &str| {
        stdout(&flownet(&[
            "batch",
            "-j",
            jobs,
            "paper_fig2_reduced",
            "paper_fig1_intact",
            "reduced_allocated",
        ]))
    };
    assert_eq!(args("1"), args("3"));
}

#[test]
fn defaults_file_from_environment_overrides_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let defaults = dir.path().join("defaults.toml");
    std::fs::write(&defaults, "horizon = 60.0\nwindow_fraction = 0.25\n").unwrap();
    // The bundled files set their own horizon, so strip the simulation table.
    let scenario = dir.path().join("s.toml");
    let text = bundled_text("paper_fig1_intact").replace(
        "[simulation]\ndt = 0.01\nhorizon = 200.0\nstride = 10\n",
        "",
    );
    std::fs::write(&scenario, text).unwrap();
    let o = flownet_env(&["simulate", scenario.to_str().unwrap()], Some(&defaults));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert_eq!(value(&s, "horizon"), "60");
    assert_eq!(value(&s, "window"), "15");

    std::fs::write(&defaults, "horizen = 60.0\n").unwrap();
    let o = flownet_env(&["simulate", scenario.to_str().unwrap()], Some(&defaults));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("horizen"));
}

#[test]
fn reproduce_matches_expected_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let o = flownet(&["reproduce", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let s = stdout(&o);
    assert_eq!(values(&s, "matched"), ["true", "true", "true"]);
    assert_eq!(values(&s, "allocation"), ["2 4 1 1 6"]);
    assert!(dir.path().join("paper_fig2_reduced.csv").is_file());
}

#[test]
fn bundled_scenarios_are_listed_and_printable() {
    let s = stdout(&flownet(&["scenarios"]));
    assert_eq!(
        s.lines().collect::<Vec<_>>(),
        [
            "paper_fig1_intact",
            "paper_fig2_reduced",
            "reduced_allocated"
        ]
    );
    let s = stdout(&flownet(&["scenarios", "paper_fig2_reduced"]));
    assert_eq!(s, bundled_text("paper_fig2_reduced"));
    assert_eq!(flownet(&["scenarios", "nope"]).status.code(), Some(1));
}
