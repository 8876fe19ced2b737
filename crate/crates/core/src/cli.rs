//! Config-driven experiment runner and verification harness behind the
//! `nonlocal-pinn` binary.
//!
//! Exit codes: 0 ok, 1 config error, 2 training abort, 3 verification
//! failure.

use crate::problems::{self, ProblemParams, ProblemSpec};
use crate::training::{
    self, metrics_csv_header, metrics_csv_row, train, write_atomic, TrainArtifacts, TrainConfig,
    TrainError, TrainOutput,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_TRAINING: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Parser)]
#[command(
    name = "nonlocal-pinn",
    about = "Monte Carlo nonlocal-operator PINN solver",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a problem from a JSON config file.
    Run(RunArgs),
    /// Run the estimator-versus-oracle verification suite.
    VerifyEstimators(VerifyArgs),
    /// Train one problem across a list of sample counts and seeds.
    Sweep(SweepArgs),
    /// List the problem registry.
    ListProblems(ListArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// Path to the JSON run config.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the iteration budget (sets Adam iterations, disables L-BFGS).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Override the estimator sample count N_s.
    #[arg(long)]
    pub ns: Option<usize>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Pass threshold in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub tol_sigma: f64,
    /// Monte Carlo samples per check (accepts scientific notation).
    #[arg(long, default_value_t = 1e6)]
    pub samples: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Problem id.
    pub problem: String,
    /// Comma-separated sample counts, e.g. 4,40,400.
    #[arg(long, default_value = "")]
    pub ns_list: String,
    /// Seeds per sample count (median is reported).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Override the iteration budget (sets Adam iterations, disables L-BFGS).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seeds on worker threads (capped by NONLOCAL_PINN_THREADS).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Args)]
pub struct ListArgs {
    /// Machine-readable output.
    #[arg(long)]
    pub json: bool,
}

// ---------------------------------------------------------------------
// run config file
// ---------------------------------------------------------------------

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamSection {
    pub lr: Option<f64>,
    pub iterations: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsSection {
    pub iterations: Option<usize>,
    pub history: Option<usize>,
    pub c1: Option<f64>,
    pub backtrack: Option<f64>,
    pub max_backtracks: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrDecaySection {
    pub rate: Option<f64>,
    pub every: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_residual_points: Option<usize>,
    pub n_boundary_points: Option<usize>,
    pub batch_size: Option<usize>,
    pub eval_every: Option<usize>,
    pub adam: AdamSection,
    pub lbfgs: LbfgsSection,
    pub lr_decay: LrDecaySection,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub n_samples: Option<usize>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    /// Spatial dimension for the problems that support several.
    pub dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    pub solution_csv: Option<bool>,
}

/// On-disk run configuration. Unknown keys are rejected so typos fail
/// loudly instead of silently using defaults.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub plots: PlotSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| {
            format!(
                "config error at line {}, column {}: {}",
                e.line(),
                e.column(),
                e
            )
        })
    }

    pub fn problem_params(&self) -> ProblemParams {
        ProblemParams {
            delta: self.estimator.delta,
            alpha: self.estimator.alpha,
            epsilon: self.estimator.epsilon,
            n_samples: None,
            dim: self.estimator.dim,
        }
    }

    /// Resolve to a full training config against the problem's defaults.
    pub fn resolve(&self, problem: &ProblemSpec) -> TrainConfig {
        let mut cfg = TrainConfig::for_problem(problem);
        cfg.problem_params = self.problem_params();
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let t = &self.train;
        if let Some(v) = t.n_residual_points {
            cfg.n_residual_points = v;
        }
        if let Some(v) = t.n_boundary_points {
            cfg.n_boundary_points = v;
        }
        if let Some(v) = t.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = t.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = t.adam.lr {
            cfg.adam.lr = v;
        }
        if let Some(v) = t.adam.iterations {
            cfg.adam.iterations = v;
        }
        if let Some(v) = t.adam.beta1 {
            cfg.adam.beta1 = v;
        }
        if let Some(v) = t.adam.beta2 {
            cfg.adam.beta2 = v;
        }
        if let Some(v) = t.adam.eps {
            cfg.adam.eps = v;
        }
        if let Some(v) = t.lbfgs.iterations {
            cfg.lbfgs.iterations = v;
        }
        if let Some(v) = t.lbfgs.history {
            cfg.lbfgs.history = v;
        }
        if let Some(v) = t.lbfgs.c1 {
            cfg.lbfgs.c1 = v;
        }
        if let Some(v) = t.lbfgs.backtrack {
            cfg.lbfgs.backtrack = v;
        }
        if let Some(v) = t.lbfgs.max_backtracks {
            cfg.lbfgs.max_backtracks = v;
        }
        if let Some(v) = t.lr_decay.rate {
            cfg.lr_decay.rate = v;
        }
        if let Some(v) = t.lr_decay.every {
            cfg.lr_decay.every = v;
        }
        cfg.n_samples = self.estimator.n_samples;
        cfg
    }
}

// ---------------------------------------------------------------------
// summary emission
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct SummaryConfig {
    n_residual_points: usize,
    n_boundary_points: usize,
    batch_size: usize,
    n_samples: Option<usize>,
    adam_iterations: usize,
    lbfgs_iterations: usize,
    lr: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    problem: &'a str,
    seed: u64,
    final_rel_l2: f64,
    final_loss_r: Option<f64>,
    final_loss_b: Option<f64>,
    wall_ms: u64,
    build: &'static str,
    config: SummaryConfig,
}

fn emit_run_outputs(
    out_dir: &Path,
    output: &TrainOutput,
    problem: &ProblemSpec,
    plots: bool,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(out_dir)?;

    let mut csv = String::from(metrics_csv_header());
    csv.push('\n');
    for m in &output.metrics {
        csv.push_str(&metrics_csv_row(m));
        csv.push('\n');
    }
    write_atomic(&out_dir.join("metrics.csv"), csv.as_bytes())?;

    let last = output.metrics.last();
    let summary = Summary {
        schema_version: 1,
        problem: &output.config.problem,
        seed: output.config.seed,
        final_rel_l2: output.final_rel_l2,
        final_loss_r: last.map(|m| m.loss_r),
        final_loss_b: last.map(|m| m.loss_b),
        wall_ms: output.wall_ms,
        build: env!("CARGO_PKG_VERSION"),
        config: SummaryConfig {
            n_residual_points: output.config.n_residual_points,
            n_boundary_points: output.config.n_boundary_points,
            batch_size: output.config.batch_size,
            n_samples: output.config.n_samples,
            adam_iterations: output.config.adam.iterations,
            lbfgs_iterations: output.config.lbfgs.iterations,
            lr: output.config.adam.lr,
        },
    };
    let body = serde_json::to_string_pretty(&summary).expect("summary json");
    write_atomic(&out_dir.join("summary.json"), body.as_bytes())?;

    if plots {
        let grid = problem.eval_grid();
        let pred = training::network_values(&output.params, output.wrapper, &grid);
        let mut sol = String::new();
        for i in 0..problem.input_dim {
            sol.push_str(&format!("x{i},"));
        }
        sol.push_str("u_exact,u_pred,abs_error\n");
        for (x, p) in grid.iter().zip(&pred) {
            for c in x {
                sol.push_str(&format!("{c},"));
            }
            let e = problem.exact_value(x);
            sol.push_str(&format!("{e},{p},{}\n", (p - e).abs()));
        }
        write_atomic(&out_dir.join("solution.csv"), sol.as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------

/// CLI-style overrides applied on top of a parsed config.
#[derive(Debug, Default, Clone)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    /// Sets the Adam budget and disables the L-BFGS phase.
    pub iterations: Option<usize>,
    pub ns: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Training(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) | RunError::Training(m) => f.write_str(m),
        }
    }
}

pub struct RunOutcome {
    pub final_rel_l2: f64,
    pub wall_ms: u64,
    pub iterations: usize,
    pub out_dir: PathBuf,
}

/// Execute one config-driven training run and emit its artifacts; shared
/// by the CLI and the Python bindings.
pub fn execute_run(config: &RunConfig, overrides: &RunOverrides) -> Result<RunOutcome, RunError> {
    let problem = problems::build(&config.problem, &config.problem_params())
        .map_err(|e| RunError::Config(e.to_string()))?;
    let mut cfg = config.resolve(&problem);
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(it) = overrides.iterations {
        cfg.adam.iterations = it;
        cfg.lbfgs.iterations = 0;
    }
    if let Some(ns) = overrides.ns {
        cfg.n_samples = Some(ns);
    }
    let out_dir = overrides
        .out
        .clone()
        .or(config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}_seed{}", cfg.problem, cfg.seed)));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| RunError::Config(format!("cannot create {}: {e}", out_dir.display())))?;

    let artifacts = TrainArtifacts {
        out_dir: Some(out_dir.clone()),
    };
    match train(&cfg, &artifacts) {
        Ok(output) => {
            let plots = config.plots.solution_csv.unwrap_or(true);
            emit_run_outputs(&out_dir, &output, &problem, plots)
                .map_err(|e| RunError::Training(format!("failed to write outputs: {e}")))?;
            Ok(RunOutcome {
                final_rel_l2: output.final_rel_l2,
                wall_ms: output.wall_ms,
                iterations: output.metrics.len(),
                out_dir,
            })
        }
        Err(e) => {
            // dump what is needed to reproduce the failure
            let dump = serde_json::json!({
                "problem": cfg.problem,
                "seed": cfg.seed,
                "error": e.to_string(),
            });
            let _ = write_atomic(
                &out_dir.join("abort.json"),
                serde_json::to_string_pretty(&dump).unwrap().as_bytes(),
            );
            Err(RunError::Training(format!("training aborted: {e}")))
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> i32 {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let config = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let overrides = RunOverrides {
        seed: args.seed,
        iterations: args.iterations,
        ns: args.ns,
        out: args.out.clone(),
    };
    match execute_run(&config, &overrides) {
        Ok(outcome) => {
            println!(
                "{}: rel_l2 {:.4e} after {} iterations ({} ms)",
                config.problem, outcome.final_rel_l2, outcome.iterations, outcome.wall_ms
            );
            EXIT_OK
        }
        Err(RunError::Config(m)) => {
            eprintln!("{m}");
            EXIT_CONFIG
        }
        Err(RunError::Training(m)) => {
            eprintln!("{m}");
            EXIT_TRAINING
        }
    }
}

pub fn cmd_verify_estimators(args: &VerifyArgs) -> i32 {
    let samples = args.samples.max(1.0) as usize;
    let report = crate::verify::run_verification(samples, args.tol_sigma, args.seed);
    let body = serde_json::to_string_pretty(&report).expect("report json");
    println!("{body}");
    if let Some(path) = &args.out {
        if let Some(dir) = path.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        if let Err(e) = write_atomic(path, body.as_bytes()) {
            eprintln!("failed to write report: {e}");
        }
    }
    if report.all_pass {
        EXIT_OK
    } else {
        EXIT_VERIFICATION
    }
}

fn worker_cap() -> usize {
    std::env::var("NONLOCAL_PINN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

pub fn cmd_sweep(args: &SweepArgs) -> i32 {
    let mut ns_list = Vec::new();
    for tok in args.ns_list.split(',').filter(|t| !t.trim().is_empty()) {
        match tok.trim().parse::<usize>() {
            Ok(n) if n >= 1 => ns_list.push(n),
            _ => {
                eprintln!("--ns-list entry {tok:?} is not a positive integer");
                return EXIT_CONFIG;
            }
        }
    }
    if ns_list.is_empty() {
        eprintln!("--ns-list must not be empty");
        return EXIT_CONFIG;
    }
    let problem = match problems::lookup(&args.problem) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/sweep_{}", problem.id)));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("cannot create output dir {}: {e}", out_dir.display());
        return EXIT_CONFIG;
    }

    let mut jobs: Vec<(usize, u64)> = Vec::new();
    for &ns in &ns_list {
        for seed in 0..args.seeds {
            jobs.push((ns, seed));
        }
    }
    let run_one = |(ns, seed): (usize, u64)| -> Result<(usize, u64, f64), TrainError> {
        let mut cfg = TrainConfig::for_problem(&problem);
        cfg.seed = seed;
        cfg.n_samples = Some(ns);
        if let Some(it) = args.iterations {
            cfg.adam.iterations = it;
            cfg.lbfgs.iterations = 0;
        }
        let out = train(&cfg, &TrainArtifacts::default())?;
        Ok((ns, seed, out.final_rel_l2))
    };

    let results: Vec<Result<(usize, u64, f64), TrainError>> = if args.parallel {
        let cap = worker_cap().max(1);
        let mut results = Vec::with_capacity(jobs.len());
        for chunk in jobs.chunks(cap) {
            let outs: Vec<_> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&job| scope.spawn(move || run_one(job)))
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            results.extend(outs);
        }
        results
    } else {
        jobs.iter().map(|&j| run_one(j)).collect()
    };

    let mut per_ns: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    let mut detail = Vec::new();
    for r in results {
        match r {
            Ok((ns, seed, rel)) => {
                per_ns.entry(ns).or_default().push(rel);
                detail.push(serde_json::json!({"ns": ns, "seed": seed, "rel_l2": rel}));
                eprintln!("ns={ns} seed={seed}: rel_l2 = {rel:.4e}");
            }
            Err(e) => {
                eprintln!("sweep run failed: {e}");
                return EXIT_TRAINING;
            }
        }
    }

    let mut csv = String::from("ns,rel_l2_median\n");
    for &ns in &ns_list {
        let vals = per_ns.get_mut(&ns).expect("every ns ran");
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = vals[vals.len() / 2];
        csv.push_str(&format!("{ns},{median}\n"));
    }
    if let Err(e) = write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes()) {
        eprintln!("failed to write sweep.csv: {e}");
        return EXIT_TRAINING;
    }
    let _ = write_atomic(
        &out_dir.join("runs.json"),
        serde_json::to_string_pretty(&detail).unwrap().as_bytes(),
    );
    println!("{csv}");
    EXIT_OK
}

pub fn cmd_list_problems(args: &ListArgs) -> i32 {
    let reg = problems::registry();
    if args.json {
        let rows: Vec<_> = reg
            .iter()
            .map(|p| {
                serde_json::json!({
                    "id": p.id,
                    "input_dim": p.input_dim,
                    "constraint": p.constraint.kind_name(),
                    "n_samples_default": p.estimator.n_samples,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows).unwrap());
    } else {
        println!("{:<24} {:>4}  {}", "id", "dim", "constraint");
        for p in &reg {
            println!(
                "{:<24} {:>4}  {}",
                p.id,
                p.input_dim,
                p.constraint.kind_name()
            );
        }
    }
    EXIT_OK
}

pub fn dispatch(cli: Cli) -> i32 {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::VerifyEstimators(a) => cmd_verify_estimators(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ListProblems(a) => cmd_list_problems(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let bad = r#"{"problem": "fredholm_1d", "trian": {}}"#;
        let err = RunConfig::parse(bad).unwrap_err();
        assert!(err.contains("line"), "{err}");

        let bad_nested = r#"{"problem": "fredholm_1d", "train": {"batchsize": 3}}"#;
        assert!(RunConfig::parse(bad_nested).is_err());
    }

    #[test]
    fn config_resolves_against_problem_defaults() {
        let text = r#"{
            "problem": "fredholm_1d",
            "seed": 9,
            "train": {"adam": {"iterations": 12}},
            "estimator": {"n_samples": 33}
        }"#;
        let rc = RunConfig::parse(text).unwrap();
        let p = problems::lookup("fredholm_1d").unwrap();
        let cfg = rc.resolve(&p);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.adam.iterations, 12);
        // untouched fields keep problem defaults
        assert_eq!(cfg.lbfgs.iterations, 2000);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.n_samples, Some(33));
    }
}
