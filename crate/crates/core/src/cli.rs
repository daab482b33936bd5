//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage/config/scenario errors,
//! 3 equilibrium non-convergence, 4 infeasible synthesis start, 5 simulation
//! blow-up.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::closedloop::{
    expected_power, find_equilibrium, flat_start, signals, steady_state_check, Disturbance,
    FullState, GainSet, THETA_NAMES,
};
use crate::config::{gain_set_to_cfg, Config};
use crate::error::{Error, Result};
use crate::hinf::{evaluate, synthesize, ObjectiveContext, SynthesisProblem};
use crate::sim::{
    metrics, simulate, step_consistency, Scenario, SimTrace, StepQuantity, DEFAULT_STEP,
};

#[derive(Debug, Parser)]
#[command(
    name = "mimo-gfm",
    version,
    about = "Analysis, H-infinity tuning and simulation of MIMO grid-forming converters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and print the closed-loop equilibrium.
    Equilibrium(Common),
    /// Stability and weighted channel norms for each gain set.
    Analyze(Common),
    /// Tune a gain set by minimizing the weighted objective.
    Synthesize(Common),
    /// Simulate step scenarios and report transient metrics.
    Simulate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file; repeat to merge, later files win.
    #[arg(long = "config", required = true)]
    config: Vec<PathBuf>,
    /// Scenario name (simulate).
    #[arg(long)]
    scenario: Option<String>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to one gain set.
    #[arg(long)]
    gains: Option<String>,
    /// Override the synthesis seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also compare runs at h and h/2 (simulate).
    #[arg(long)]
    check_step: bool,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Parse(_) | Error::Scenario(_) | Error::Io(_) => 2,
        Error::NonConvergence { .. } | Error::SingularJacobian | Error::DcLinkCollapse(_) => 3,
        Error::InfeasibleStart(_) => 4,
        Error::BlowUp { .. } => 5,
        _ => 1,
    }
}

/// Runs the CLI with explicit arguments and streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Equilibrium(c) => cmd_equilibrium(c),
        Command::Analyze(c) => cmd_analyze(c),
        Command::Synthesize(c) => cmd_synthesize(c),
        Command::Simulate(c) => cmd_simulate(c),
    };
    match result {
        Ok(report) => {
            let _ = out.write_all(report.as_bytes());
            0
        }
        Err((partial, e)) => {
            let _ = out.write_all(partial.as_bytes());
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

type CmdResult = std::result::Result<String, (String, Error)>;

fn fail(report: &str) -> impl FnOnce(Error) -> (String, Error) + '_ {
    move |e| (report.to_string(), e)
}

/// Plain-text table with right-aligned numeric columns.
fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, w))| {
                if k == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(headers.to_vec(), &mut out);
    let _ = writeln!(
        out,
        "{}",
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("  ")
    );
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn nominal(cfg: &Config) -> Disturbance {
    Disturbance {
        omega_g: cfg.params.omega_g,
        v_g: cfg.params.v_g,
    }
}

fn selected_sets(cfg: &Config, name: Option<&str>) -> Result<Vec<(String, GainSet)>> {
    match name {
        Some(n) => Ok(vec![(n.to_string(), *cfg.gain_set(n)?)]),
        None if cfg.gain_sets.is_empty() => Err(Error::Config {
            line: 0,
            msg: "no gain sets defined".into(),
        }),
        None => Ok(cfg.gain_sets.clone()),
    }
}

fn solve(cfg: &Config, g: &GainSet) -> Result<FullState> {
    let d = nominal(cfg);
    find_equilibrium(
        &cfg.refs,
        &d,
        g,
        &cfg.params,
        &flat_start(&cfg.refs, g, &cfg.params),
    )
}

fn cmd_equilibrium(c: &Common) -> CmdResult {
    let mut report = String::new();
    let cfg = Config::load(&c.config).map_err(fail(&report))?;
    let (name, g) = cfg
        .select_gains(c.gains.as_deref())
        .map_err(fail(&report))?;
    let z = solve(&cfg, &g).map_err(fail(&report))?;
    let d = nominal(&cfg);
    let p = crate::plant::PlantParams {
        omega_g: d.omega_g,
        v_g: d.v_g,
        ..cfg.params
    };
    let s = signals(&z, &cfg.refs, &g, &p).map_err(fail(&report))?;
    let check = steady_state_check(&z, &cfg.refs, &d, &g, &cfg.params).map_err(fail(&report))?;

    let mut csv = String::from("quantity,value\n");
    let mut rows = Vec::new();
    for (n, v) in FullState::names().zip(z.0) {
        rows.push(vec![n.to_string(), sci(v)]);
        let _ = writeln!(csv, "{n},{v:.17e}");
    }
    let _ = writeln!(report, "equilibrium for gain set '{name}'\n");
    report.push_str(&table(&["state", "value"], &rows));
    rows.clear();
    for (n, v) in crate::plant::PlantOutputs::NAMES
        .iter()
        .zip(s.outputs.to_array())
    {
        rows.push(vec![n.to_string(), sci(v)]);
        let _ = writeln!(csv, "{n},{v:.17e}");
    }
    report.push('\n');
    report.push_str(&table(&["output", "value"], &rows));
    let residuals = [
        ("v_dc - V_dcref", check.dc_voltage),
        ("v_q", check.v_q),
        ("v_d - e_u", check.voltage_tracking),
        ("Q-V droop", check.qv_droop),
        ("omega_u - omega_g", check.synchronism),
        ("p - P-f droop", check.pf_droop),
    ];
    rows = residuals
        .iter()
        .map(|(n, v)| vec![n.to_string(), sci(*v)])
        .collect();
    report.push('\n');
    report.push_str(&table(&["identity", "residual"], &rows));
    if let Some(path) = &c.out {
        write_file(path, &csv).map_err(fail(&report))?;
        let _ = writeln!(report, "\nwrote {}", path.display());
    }
    Ok(report)
}

fn objective_context(cfg: &Config, g: &GainSet) -> ObjectiveContext {
    let mut ctx =
        ObjectiveContext::standard(cfg.refs, nominal(cfg), cfg.params, g.gfm.d_p, g.gfm.d_q);
    ctx.channels = cfg.synthesis.channels.clone();
    ctx.norm = cfg.synthesis.norm;
    ctx
}

fn cmd_analyze(c: &Common) -> CmdResult {
    let mut report = String::new();
    let cfg = Config::load(&c.config).map_err(fail(&report))?;
    let sets = selected_sets(&cfg, c.gains.as_deref()).map_err(fail(&report))?;
    let labels: Vec<String> = cfg.synthesis.channels.iter().map(|ch| ch.label()).collect();
    let mut headers = vec!["gains", "abscissa"];
    headers.extend(labels.iter().map(String::as_str));
    headers.extend(["objective", "status"]);

    let mut rows = Vec::new();
    let mut csv = format!("{}\n", headers.join(","));
    for (name, g) in &sets {
        let e = evaluate(g, &objective_context(&cfg, g)).map_err(fail(&report))?;
        let mut row = vec![name.clone(), sci(e.spectral_abscissa)];
        if e.stable() {
            row.extend(e.channel_norms.iter().map(|v| sci(*v)));
            row.push(sci(e.objective));
            row.push("stable".into());
        } else {
            row.extend(labels.iter().map(|_| "-".to_string()));
            row.push("-".into());
            row.push("unstable".into());
        }
        let _ = writeln!(csv, "{}", row.join(","));
        rows.push(row);
    }
    let _ = writeln!(
        report,
        "closed-loop analysis at P_ref = {}, Q_ref = {}\n",
        cfg.refs.p_ref, cfg.refs.q_ref
    );
    report.push_str(&table(&headers, &rows));
    if let Some(path) = &c.out {
        write_file(path, &csv).map_err(fail(&report))?;
        let _ = writeln!(report, "\nwrote {}", path.display());
    }
    Ok(report)
}

/// History file written next to the synthesized gain set.
pub fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.csv")
}

fn cmd_synthesize(c: &Common) -> CmdResult {
    let mut report = String::new();
    let cfg = Config::load(&c.config).map_err(fail(&report))?;
    let out = c
        .out
        .as_ref()
        .ok_or_else(|| Error::Config {
            line: 0,
            msg: "synthesize needs --out".into(),
        })
        .map_err(fail(&report))?;
    let settings = &cfg.synthesis;
    let initial_name = c.gains.clone().unwrap_or_else(|| settings.initial.clone());
    let initial = *cfg.gain_set(&initial_name).map_err(fail(&report))?;
    let frozen: Vec<&str> = settings.frozen.iter().map(String::as_str).collect();
    let mut problem = SynthesisProblem::new(initial)
        .freeze(&frozen)
        .map_err(fail(&report))?;
    problem.options = settings.options;
    if let Some(seed) = c.seed {
        problem.options.seed = seed;
    }
    let ctx = objective_context(&cfg, &initial);
    let result = synthesize(&problem, &ctx).map_err(fail(&report))?;
    let before = evaluate(&initial, &ctx).map_err(fail(&report))?;
    let after = evaluate(&result.gains, &ctx).map_err(fail(&report))?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "# synthesized from '{initial_name}' with seed {}",
        problem.options.seed
    );
    let _ = writeln!(
        text,
        "# objective {:.12e} (initial {:.12e})",
        result.objective, result.initial_objective
    );
    let _ = writeln!(
        text,
        "# evaluations {}, iterations {}, stop {:?}",
        result.evaluations, result.iterations, result.stop
    );
    text.push_str(&gain_set_to_cfg(&settings.result, &result.gains));
    write_file(out, &text).map_err(fail(&report))?;
    let mut hist = String::from("iteration,evaluations,objective,mesh\n");
    for h in &result.history {
        let _ = writeln!(
            hist,
            "{},{},{:.17e},{:.17e}",
            h.iteration, h.evaluations, h.objective, h.mesh
        );
    }
    let hpath = history_path(out);
    write_file(&hpath, &hist).map_err(fail(&report))?;

    let (t0, t1) = (initial.to_theta(), result.gains.to_theta());
    let rows: Vec<Vec<String>> = THETA_NAMES
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let mark = if problem.frozen[k] { "frozen" } else { "" };
            vec![n.to_string(), sci(t0[k]), sci(t1[k]), mark.to_string()]
        })
        .collect();
    let _ = writeln!(
        report,
        "synthesis from '{initial_name}' -> '{}'\n",
        settings.result
    );
    report.push_str(&table(&["gain", "initial", "final", ""], &rows));
    let mut rows = Vec::new();
    for (k, ch) in ctx.channels.iter().enumerate() {
        let cell = |e: &crate::hinf::Evaluation| {
            e.channel_norms.get(k).map_or("-".to_string(), |v| sci(*v))
        };
        rows.push(vec![ch.label(), cell(&before), cell(&after)]);
    }
    rows.push(vec![
        "objective".into(),
        sci(before.objective),
        sci(after.objective),
    ]);
    rows.push(vec![
        "abscissa".into(),
        sci(before.spectral_abscissa),
        sci(after.spectral_abscissa),
    ]);
    report.push('\n');
    report.push_str(&table(&["channel", "initial", "final"], &rows));
    let _ = writeln!(
        report,
        "\n{} iterations, {} evaluations, stop: {:?}, wall time {:.2} s",
        result.iterations,
        result.evaluations,
        result.stop,
        result.elapsed.as_secs_f64()
    );
    let _ = writeln!(report, "wrote {} and {}", out.display(), hpath.display());
    Ok(report)
}

/// Output channels reported for a scenario with their expected final values.
fn metric_channels(
    scn: &Scenario,
    cfg: &Config,
    g: &GainSet,
    trace: &SimTrace,
) -> Vec<(&'static str, f64)> {
    let (refs, d) = scn.operating_point(&cfg.refs, &cfg.params, true);
    let natural = scn.quantity.natural_output();
    let last = |name: &str| {
        trace
            .column(name)
            .ok()
            .and_then(|v| v.last().copied())
            .unwrap_or(f64::NAN)
    };
    let target = match natural {
        "p" => expected_power(&refs, &d, g),
        "v_dc" => refs.v_dcref,
        other => last(other),
    };
    let mut out = vec![(natural, target)];
    if scn.quantity == StepQuantity::OmegaG {
        out.push(("omega_u", d.omega_g));
    }
    out
}

/// Largest post-step distance of v_dc from its reference.
fn dc_excursion(scn: &Scenario, cfg: &Config, trace: &SimTrace) -> f64 {
    let (refs, _) = scn.operating_point(&cfg.refs, &cfg.params, true);
    let v = trace.column("v_dc").unwrap_or_default();
    trace
        .time
        .iter()
        .zip(v)
        .filter(|(t, _)| **t >= scn.step_time)
        .map(|(_, v)| (v - refs.v_dcref).abs())
        .fold(0.0, f64::max)
}

fn trace_path(out: &Path, scenario: &str, gains: &str, single: bool) -> PathBuf {
    if single {
        return out.to_path_buf();
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    let ext = out
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    out.with_file_name(format!("{stem}_{scenario}_{gains}.{ext}"))
}

fn cmd_simulate(c: &Common) -> CmdResult {
    let mut report = String::new();
    let cfg = Config::load(&c.config).map_err(fail(&report))?;
    let scenarios: Vec<Scenario> = match &c.scenario {
        Some(n) => vec![cfg.scenario(n).map_err(fail(&report))?.clone()],
        None if cfg.scenarios.is_empty() => {
            return Err((report, Error::Scenario("no scenarios defined".into())));
        }
        None => cfg.scenarios.clone(),
    };
    let sets = selected_sets(&cfg, c.gains.as_deref()).map_err(fail(&report))?;
    let single = scenarios.len() == 1 && sets.len() == 1;

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut written = Vec::new();
    for scn in &scenarios {
        for (name, g) in &sets {
            let mut trace = simulate(scn, g, &cfg.refs, &cfg.params).map_err(fail(&report))?;
            trace.set_meta("gains", name.clone());
            let dc = sci(dc_excursion(scn, &cfg, &trace));
            for (channel, target) in metric_channels(scn, &cfg, g, &trace) {
                let mut row = vec![
                    scn.name.clone(),
                    name.clone(),
                    channel.to_string(),
                    sci(target),
                ];
                match metrics(&trace, channel, target) {
                    Ok(m) => row.extend([
                        format!("{:.3}", 100.0 * m.overshoot),
                        format!("{:.4}", m.settling_time),
                        sci(m.steady_error),
                    ]),
                    Err(Error::NotSettled(_)) => {
                        row.extend(["-".into(), "not settled".into(), "-".into()])
                    }
                    Err(e) => return Err((report, e)),
                }
                row.push(dc.clone());
                rows.push(row);
            }
            if let Some(out) = &c.out {
                let path = trace_path(out, &scn.name, name, single);
                write_file(&path, &trace.to_csv()).map_err(fail(&report))?;
                written.push(path);
            }
            if c.check_step {
                let r = step_consistency(DEFAULT_STEP, scn, g, &cfg.refs, &cfg.params)
                    .map_err(fail(&report))?;
                let verdict = if r.max_deviation < 1e-6 {
                    "ok"
                } else {
                    "exceeds 1e-6"
                };
                checks.push(vec![
                    scn.name.clone(),
                    name.clone(),
                    sci(r.max_deviation),
                    r.worst_channel.clone(),
                    format!("{:.4}", r.worst_time),
                    verdict.to_string(),
                ]);
            }
        }
    }
    report.push_str(&table(
        &[
            "scenario",
            "gains",
            "channel",
            "final",
            "overshoot %",
            "settling s",
            "steady error",
            "max |v_dc - ref|",
        ],
        &rows,
    ));
    if c.check_step {
        let _ = writeln!(report, "\nstep consistency, h = {DEFAULT_STEP:e} s vs h/2");
        report.push_str(&table(
            &["scenario", "gains", "max deviation", "channel", "at t", ""],
            &checks,
        ));
    }
    for p in written {
        let _ = writeln!(report, "wrote {}", p.display());
    }
    Ok(report)
}
