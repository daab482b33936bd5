use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mimo_gfm::config::Config;
use mimo_gfm::sim::SimTrace;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mimo-gfm"))
}

fn fixture() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "fixtures", "reference.cfg"]
        .iter()
        .collect()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a config that includes the shipped fixture followed by `extra`.
fn overlay(dir: &TempDir, name: &str, extra: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, format!("include = {}\n{extra}", fixture().display())).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn config_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.cfg");
    std::fs::write(&empty, "").unwrap();
    let malformed = dir.path().join("bad.cfg");
    std::fs::write(&malformed, "plant.L_f_mH = three\n").unwrap();
    let missing = dir.path().join("missing.cfg");

    for path in [&empty, &malformed, &missing] {
        let o = run(&["analyze", "--config", s(path)]);
        assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    }
    let o = run(&["analyze", "--config", s(&malformed)]);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    let o = run(&["simulate", "--config", s(&fixture()), "--scenario", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn equilibrium_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = overlay(&dir, "huge.cfg", "refs.P_ref = 40\n");
    let o = run(&["equilibrium", "--config", s(&cfg), "--gains", "hinf"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn unstable_start_exits_4_and_collapses_in_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = overlay(&dir, "unstable.cfg", "gains.traditional.k_iv = -200\n");
    let out = dir.path().join("theta.cfg");
    let o = run(&["synthesize", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!out.exists());

    let o = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--gains",
        "traditional",
        "--scenario",
        "p_ref_step",
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn zero_budget_returns_initial_gains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = overlay(&dir, "zero.cfg", "synthesis.budget = 0\n");
    let out = dir.path().join("theta.cfg");
    let o = run(&["synthesize", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let loaded = Config::load(&[fixture(), out.clone()]).unwrap();
    assert_eq!(
        loaded.gain_set("synthesized").unwrap(),
        loaded.gain_set("traditional").unwrap()
    );
    let history = std::fs::read_to_string(out.with_extension("history.csv")).unwrap();
    assert!(history.starts_with("iteration,evaluations,objective,mesh"));
}

#[test]
fn analyze_reports_both_designs_stable() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("analyze.csv");
    let o = run(&["analyze", "--config", s(&fixture()), "--out", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for name in ["traditional", "hinf"] {
        let line = text
            .lines()
            .find(|l| l.trim_start().starts_with(name))
            .unwrap();
        assert!(line.trim_end().ends_with(" stable"), "{line}");
    }
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn equilibrium_report_lists_residuals() {
    let o = run(&[
        "equilibrium",
        "--config",
        s(&fixture()),
        "--gains",
        "traditional",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let residuals = text.split("residual").nth(1).unwrap();
    let values: Vec<f64> = residuals
        .lines()
        .filter_map(|l| l.split_whitespace().last()?.parse().ok())
        .collect();
    assert_eq!(values.len(), 6, "{text}");
    assert!(values.iter().all(|v| v.abs() < 1e-9), "{values:?}");
}

#[test]
fn simulate_writes_readable_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let o = run(&[
        "simulate",
        "--config",
        s(&fixture()),
        "--out",
        s(&out),
        "--check-step",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).to_lowercase().contains("deviation"),
        "{}",
        stdout(&o)
    );

    let mut traces: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    traces.sort();
    assert_eq!(traces.len(), 4, "{traces:?}");
    for path in traces {
        let trace = SimTrace::from_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(trace.len() > 1000);
        let p = trace.column("p").unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }
}
