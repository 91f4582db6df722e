//! Command-line driver: scenario files, experiment commands and their output
//! files.
//!
//! A scenario file is a JSON object with the fields of [`TrialConfig`] plus a
//! `version` key. Fields left out are taken from the embedded default
//! scenario; unknown fields are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use crate::planner::Variant;
use crate::sim::{legacy_condition_study, run_batch, trial_seed, AggregateMetrics, LegacyRow, Scenario, TrialConfig, TrialResult};

pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.json");
pub const SCENARIO_VERSION: u64 = 1;

/// Batches in which more than this fraction of trials hit a solver failure
/// exit with [`CliError::Numerical`].
pub const MAX_SOLVER_FAILURE_RATE: f64 = 0.001;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Recursively overlays `patch` on `base`. Objects merge key by key;
/// everything else is replaced.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves a scenario document against the embedded default.
pub fn resolve_config(user: Option<&str>) -> Result<TrialConfig, CliError> {
    let mut doc: Value = serde_json::from_str(DEFAULT_SCENARIO).expect("embedded scenario is valid JSON");
    if let Some(text) = user {
        let patch: Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if !patch.is_object() {
            return Err(CliError::Config("scenario must be a JSON object".into()));
        }
        merge(&mut doc, patch);
    }
    let obj = doc.as_object_mut().expect("merged scenario is an object");
    match obj.remove("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCENARIO_VERSION) => {}
        other => {
            return Err(CliError::Config(format!("unsupported scenario version {other:?}, expected {SCENARIO_VERSION}")));
        }
    }
    let config: TrialConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

pub fn load_config(path: Option<&Path>) -> Result<TrialConfig, CliError> {
    match path {
        None => resolve_config(None),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            resolve_config(Some(&text))
        }
    }
}

/// Full resolved scenario as written back into `summary.json`.
pub fn config_document(config: &TrialConfig) -> Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    v.as_object_mut().expect("config is an object").insert("version".into(), json!(SCENARIO_VERSION));
    v
}

/// Lossless float text: 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub const TRIALS_HEADER: &str = "trial_index,variant,seed,status,initially_feasible,rf_ok,cost,d_min";

/// One row per trial. `rf_ok` is empty when the first problem was
/// infeasible. Wall-clock times go to a separate file so that this one is
/// reproducible byte for byte.
pub fn trials_csv<'a>(trials: impl IntoIterator<Item = &'a TrialResult>) -> String {
    let mut out = String::from(TRIALS_HEADER);
    out.push('\n');
    for r in trials {
        let rf = r.rf_ok().map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.trial_index,
            r.variant,
            r.seed,
            r.status.as_str(),
            r.initially_feasible(),
            rf,
            fmt_float(r.cost),
            fmt_float(r.d_min)
        );
    }
    out
}

pub fn timings_csv<'a>(trials: impl IntoIterator<Item = &'a TrialResult>) -> String {
    let mut out = String::from("trial_index,variant,max_solve_time\n");
    for r in trials {
        let _ = writeln!(out, "{},{},{}", r.trial_index, r.variant, fmt_float(r.max_solve_time));
    }
    out
}

pub fn fig1_csv(rows: &[LegacyRow]) -> String {
    let mut out = String::from("T,satisfaction_rate,nominal_rf_rate,prf_rf_rate\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.horizon,
            fmt_float(r.satisfaction_rate),
            fmt_float(r.nominal_rf_rate),
            fmt_float(r.prf_rf_rate)
        );
    }
    out
}

pub const TRACE_HEADER: &str = "tau,t,feasible,ego_p1,ego_p2,ego_v1,ego_v2,plan_p1,plan_p2,plan_v1,plan_v2,\
ov_p1,ov_p2,mu1,mu2,sigma11,sigma12,sigma22,m1,m2,offset,margin";

/// One row per planning step `tau` and constrained timestep `t`. Plan
/// columns are `NaN` when the step was infeasible. The halfspace is
/// `m1 p1 + m2 p2 + offset <= 0`, with `margin` already folded into
/// `offset`.
pub fn trace_csv(trial: &TrialResult) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for step in &trial.steps {
        for (k, h) in step.halfspaces.iter().enumerate() {
            let plan = step.plan.x_seq.get(k).map(|x| [x[0], x[1], x[2], x[3]]).unwrap_or([f64::NAN; 4]);
            let fields = [
                step.ego[0],
                step.ego[1],
                step.ego[2],
                step.ego[3],
                plan[0],
                plan[1],
                plan[2],
                plan[3],
                step.obstacle[0],
                step.obstacle[1],
                h.mu[0],
                h.mu[1],
                h.sigma[(0, 0)],
                h.sigma[(0, 1)],
                h.sigma[(1, 1)],
                h.m[0],
                h.m[1],
                h.offset(),
                h.margin,
            ];
            let _ = write!(out, "{},{},{}", step.tau, h.t, step.plan.is_feasible());
            for v in fields {
                let _ = write!(out, ",{}", fmt_float(v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn summary_json(config: &TrialConfig, n_trials: usize, metrics: &[AggregateMetrics]) -> Value {
    json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "n_trials": n_trials,
        "denominators": {
            "rf_rate": "initially feasible trials",
            "rf_rate_all": "all trials",
            "mean_cost": "recursively feasible trials",
            "mean_cost_feasible": "initially feasible trials",
            "mean_d_min": "initially feasible trials",
            "collision_rate": "initially feasible trials",
            "mean_max_solve_time": "trials without solver failure",
        },
        "metrics": metrics,
        "config": config_document(config),
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Nominal,
    Prf,
    Both,
}

impl VariantArg {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            VariantArg::Nominal => vec![Variant::Nominal],
            VariantArg::Prf => vec![Variant::Prf],
            VariantArg::Both => Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "prfmpc", version, about = "Recursively feasible stochastic MPC lane-change experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON; omitted fields come from the built-in default.
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo batch; writes trials.csv, timings.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        variant: VariantArg,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Base seed; overrides the scenario's.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads, 0 for one per core.
        #[arg(long, env = "PRFMPC_THREADS", default_value_t = 0)]
        parallel: usize,
    },
    /// Mean-shift condition and recursive feasibility against the horizon;
    /// writes fig1.csv.
    Fig1 {
        #[command(flatten)]
        common: Common,
        /// Horizons as `a..b` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "2..9")]
        horizons: String,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, env = "PRFMPC_THREADS", default_value_t = 0)]
        parallel: usize,
    },
    /// One trial per planner with full per-step detail; writes
    /// trace_nominal.csv and trace_prf.csv.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Trial seed used as is, without derivation from the base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Prints the resolved scenario.
    Config {
        config: Option<PathBuf>,
    },
}

/// Parses `2..9` or `2,3,9`.
pub fn parse_horizons(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("cannot parse horizons {text:?}"));
    let list: Vec<usize> = if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if list.is_empty() {
        return Err(bad());
    }
    Ok(list)
}

fn scenario(config: &TrialConfig) -> Result<Scenario, CliError> {
    Scenario::new(config).map_err(|e| CliError::Config(e.to_string()))
}

pub fn cmd_run(
    common: &Common,
    variant: VariantArg,
    trials: usize,
    seed: Option<u64>,
    parallel: usize,
) -> Result<(), CliError> {
    let mut config = load_config(common.config.as_deref())?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let scenario = scenario(&config)?;
    prepare_dir(&common.out)?;
    let batches = variant
        .variants()
        .into_iter()
        .map(|v| run_batch(&scenario, trials, v, parallel).map_err(|e| CliError::Config(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let all = || batches.iter().flat_map(|b| b.trials.iter());
    write_file(&common.out, "trials.csv", &trials_csv(all()))?;
    write_file(&common.out, "timings.csv", &timings_csv(all()))?;
    let metrics: Vec<AggregateMetrics> = batches.iter().map(|b| b.metrics.clone()).collect();
    let summary = summary_json(&config, trials, &metrics);
    write_file(&common.out, "summary.json", &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    for m in &metrics {
        println!(
            "{:<8} rf_rate {:.4} ({}/{})  mean_cost {:.4}  mean_d_min {:.4}  collisions {:.4}  mean_max_solve_time {:.2e}s",
            m.variant.as_str(),
            m.rf_rate,
            m.n_rf_ok,
            m.n_initially_feasible,
            m.mean_cost,
            m.mean_d_min,
            m.collision_rate,
            m.mean_max_solve_time
        );
    }
    let failures: usize = metrics.iter().map(|m| m.n_solver_failures).sum();
    let total = trials * metrics.len();
    if failures as f64 > MAX_SOLVER_FAILURE_RATE * total as f64 {
        return Err(CliError::Numerical(format!("{failures} of {total} trials hit a solver failure")));
    }
    Ok(())
}

pub fn cmd_fig1(common: &Common, horizons: &str, trials: usize, parallel: usize) -> Result<(), CliError> {
    let config = load_config(common.config.as_deref())?;
    let horizons = parse_horizons(horizons)?;
    let rows = legacy_condition_study(&config, &horizons, trials, parallel).map_err(|e| CliError::Config(e.to_string()))?;
    prepare_dir(&common.out)?;
    write_file(&common.out, "fig1.csv", &fig1_csv(&rows))?;
    for r in &rows {
        println!(
            "T={:<2} satisfaction {:.3}  nominal rf {:.3}  prf rf {:.3}",
            r.horizon, r.satisfaction_rate, r.nominal_rf_rate, r.prf_rf_rate
        );
    }
    Ok(())
}

pub fn cmd_trace(common: &Common, seed: Option<u64>) -> Result<(), CliError> {
    let config = load_config(common.config.as_deref())?;
    let scenario = scenario(&config)?;
    let seed = seed.unwrap_or_else(|| trial_seed(config.seed, 0));
    prepare_dir(&common.out)?;
    for v in Variant::ALL {
        let trial = scenario.run_trial(v, 0, seed).map_err(|e| CliError::Numerical(e.to_string()))?;
        write_file(&common.out, &format!("trace_{v}.csv"), &trace_csv(&trial))?;
        println!("{:<8} {} after {} planning steps", v.as_str(), trial.status.as_str(), trial.steps.len());
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, variant, trials, seed, parallel } => cmd_run(&common, variant, trials, seed, parallel),
        Command::Fig1 { common, horizons, trials, parallel } => cmd_fig1(&common, &horizons, trials, parallel),
        Command::Trace { common, seed } => cmd_trace(&common, seed),
        Command::Config { config } => {
            let config = load_config(config.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&config_document(&config)).expect("config serializes"));
            Ok(())
        }
    }
}
