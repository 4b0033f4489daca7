//! Command-line front end: `train`, `sweep` and `analyze`.
//!
//! Exit status is 0 on success, 1 for bad input (config, files, empty
//! measurement window) and 2 when a run aborts on a rollout failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bandit::uniform_grid;
use crate::config::{ExperimentConfig, GeneratorKind};
use crate::error::{Error, Result};
use crate::eval::{analyze, sweep};
use crate::records::{
    fmt_f64, history_table, policy_table, read_history, read_policy_theta, read_snapshots,
    snapshots_table, Table,
};
use crate::rng::SeedTree;
use crate::sampler::{initial_policy, reduced_ratio, train, RunStatus, TrainReport};

#[derive(Debug, Parser)]
#[command(name = "effacts", version, about = "Active trajectory sampling for robust policy search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with the configured generator.
    Train(Common),
    /// Evaluate a policy across a grid of model parameters.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Policy file written by `train`; defaults to the initial policy.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Selection accuracy and bandit fit from a training history.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// history.csv written by `train`; policy_snapshots.csv is read from
        /// the same directory.
        #[arg(long)]
        history: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Failure with its exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        CliError { code: 1, error }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("effacts-out"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok((cfg, out))
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// Run a parsed command; returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(common) => run_train(&common),
        Command::Sweep { common, policy } => run_sweep(&common, policy.as_deref()),
        Command::Analyze { common, history } => run_analyze(&common, &history),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.error);
            e.code
        }
    }
}

pub fn run_train(common: &Common) -> std::result::Result<(), CliError> {
    let (cfg, out) = load(common)?;
    let report = train(&cfg)?;
    write_train_outputs(&report, &out)?;
    match &report.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Aborted { error, .. } => Err(CliError {
            code: 2,
            error: error.clone(),
        }),
    }
}

fn status_text(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Aborted { iteration, error } => {
            format!("aborted in iteration {iteration}: {error}")
        }
    }
}

pub fn write_train_outputs(report: &TrainReport, out: &Path) -> Result<()> {
    let cfg = &report.config;
    let totals = report.ledger.totals();
    let warm = report.ledger.warm_start.unwrap_or_default();

    let mut ledger = Table::new([
        "iteration",
        "phase",
        "bandit",
        "selected",
        "discarded",
        "collected",
        "timesteps",
        "mean_selected_return",
    ]);
    if let Some(w) = report.ledger.warm_start {
        ledger.push(vec![
            "0".into(),
            "warm_start".into(),
            w.bandit.to_string(),
            w.selected.to_string(),
            w.discarded.to_string(),
            w.collected().to_string(),
            w.timesteps.to_string(),
            String::new(),
        ]);
    }
    for it in &report.iterations {
        let e = it.entry;
        ledger.push(vec![
            it.iteration.to_string(),
            cfg.generator.as_str().into(),
            e.bandit.to_string(),
            e.selected.to_string(),
            e.discarded.to_string(),
            e.collected().to_string(),
            e.timesteps.to_string(),
            fmt_f64(it.mean_selected_return),
        ]);
    }
    ledger.write(&out.join("ledger.csv"))?;

    let final_mean = report
        .iterations
        .last()
        .map(|i| fmt_f64(i.mean_selected_return))
        .unwrap_or_default();
    let mut summary = Table::new([
        "status",
        "seed",
        "generator",
        "n_iters",
        "completed_iterations",
        "warm_start_trajectories",
        "bandit",
        "selected",
        "discarded",
        "collected",
        "timesteps",
        "final_mean_selected_return",
    ]);
    summary.push(vec![
        match report.status {
            RunStatus::Completed => "completed".into(),
            RunStatus::Aborted { .. } => "aborted".into(),
        },
        cfg.seed.to_string(),
        cfg.generator.as_str().into(),
        cfg.n_iters.to_string(),
        report.completed_iterations().to_string(),
        warm.selected.to_string(),
        totals.bandit.to_string(),
        totals.selected.to_string(),
        totals.discarded.to_string(),
        totals.collected().to_string(),
        totals.timesteps.to_string(),
        final_mean,
    ]);
    summary.write(&out.join("summary.csv"))?;

    let mut text = String::new();
    let _ = writeln!(text, "status: {}", status_text(&report.status));
    let _ = writeln!(text, "seed: {}", cfg.seed);
    let _ = writeln!(text, "generator: {}", cfg.generator.as_str());
    let _ = writeln!(
        text,
        "iterations: {} of {}",
        report.completed_iterations(),
        cfg.n_iters
    );
    let _ = writeln!(
        text,
        "warm start: {} trajectories, {} timesteps",
        warm.selected, warm.timesteps
    );
    let _ = writeln!(
        text,
        "trajectories: {} collected ({} bandit, {} selected, {} discarded)",
        totals.collected(),
        totals.bandit,
        totals.selected,
        totals.discarded
    );
    if totals.collected() > 0 {
        let (a, b) = reduced_ratio(totals.selected, totals.collected());
        let _ = writeln!(text, "selected / collected: {a}/{b}");
    }
    let _ = writeln!(text, "timesteps: {}", totals.timesteps);
    text.push_str("\n# effective config\n");
    text.push_str(&cfg.results_text());
    fs::write(out.join("summary.txt"), &text).map_err(|e| Error::io(&out.join("summary.txt"), e))?;

    policy_table(&report.final_policy).write(&out.join("policy.csv"))?;
    history_table(&report.history, cfg.dist.dim()).write(&out.join("history.csv"))?;
    snapshots_table(&report.snapshots, report.initial_policy.num_params())
        .write(&out.join("policy_snapshots.csv"))?;
    Ok(())
}

pub fn run_sweep(common: &Common, policy_path: Option<&Path>) -> std::result::Result<(), CliError> {
    let (cfg, out) = load(common)?;
    let template = initial_policy(&cfg);
    let policy = match policy_path {
        Some(p) => template.with_theta(&read_policy_theta(p)?)?,
        None => template,
    };
    let k = cfg.dist.dim();
    let grid = uniform_grid(&cfg.dist.lows(), &cfg.dist.highs(), &cfg.eval.sweep_resolution(k));
    let seeds = SeedTree::new(cfg.seed);
    let curve = in_pool(cfg.workers, || {
        sweep(
            cfg.env.model(),
            &policy,
            &grid,
            cfg.eval.n_eval,
            cfg.horizon,
            cfg.gamma,
            &seeds,
        )
    })??;
    let mut header = vec!["index".to_string()];
    header.extend(cfg.dist.names().map(|s| s.to_string()));
    header.extend(["mean_return".to_string(), "std_err".to_string()]);
    let mut t = Table::new(header);
    for (i, pt) in curve.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(pt.param.values().iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(pt.mean));
        row.push(fmt_f64(pt.std_err));
        t.push(row);
    }
    t.write(&out.join("sweep.csv"))?;
    Ok(())
}

pub fn run_analyze(common: &Common, history_path: &Path) -> std::result::Result<(), CliError> {
    let (cfg, out) = load(common)?;
    let history = read_history(history_path)?;
    if history.iter().any(|r| r.generator != GeneratorKind::Effacts) {
        return Err(Error::config(
            "history",
            "selection accuracy needs an effacts history",
        )
        .into());
    }
    let snap_path = history_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("policy_snapshots.csv");
    let snapshots = read_snapshots(&snap_path, &initial_policy(&cfg))?;
    let analysis = in_pool(cfg.workers, || analyze(&cfg, &history, &snapshots))??;

    let mut pct = Table::new(["iteration", "percentile"]);
    for (it, v) in &analysis.percentiles {
        pct.push(vec![it.to_string(), fmt_f64(*v)]);
    }
    pct.write(&out.join("percentiles.csv"))?;

    let s = analysis.stats;
    let mut stats = Table::new(["median", "mean", "std_dev", "max", "measurements"]);
    stats.push(vec![
        fmt_f64(s.median),
        fmt_f64(s.mean),
        fmt_f64(s.std_dev),
        fmt_f64(s.max),
        s.count.to_string(),
    ]);
    stats.write(&out.join("percentile_stats.csv"))?;

    let mut header = vec!["iteration".to_string(), "kind".to_string()];
    header.extend(cfg.dist.names().map(|s| s.to_string()));
    header.push("value".to_string());
    let mut fit = Table::new(header);
    for r in &analysis.fit {
        let mut row = vec![
            analysis.fit_iteration.unwrap_or_default().to_string(),
            r.kind.as_str().to_string(),
        ];
        row.extend(r.param.values().iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(r.value));
        fit.push(row);
    }
    fit.write(&out.join("bandit_fit.csv"))?;
    Ok(())
}
