//! Trajectory generators and the training loop.
//!
//! Both generators hand `batch_pol_opt` the low-return tail of the source
//! distribution. EPOpt rolls out `N` sampled models and keeps the worst
//! `ceil(eps N)`. EffAcTS spends `N_B` rollouts teaching a Thompson-sampling
//! bandit where returns are low, then rolls out only the `N_C` candidates it
//! predicts to be worst.

use crate::bandit::{ArmSet, PolynomialFeatureMap, TsBandit, TsConfig};
use crate::config::{ExperimentConfig, GeneratorKind};
use crate::ensemble::{ModelParameter, SourceDistribution};
use crate::env::{rollout, rollout_batch, EnvironmentModel, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{batch_pol_opt, OptimizerConfig, PolicyParams};
use crate::rng::SeedTree;

/// `ceil(x)` that ignores float noise just above an integer (`0.1 * 30`).
pub fn robust_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// `ceil(eps * n)`, at least 1.
pub fn bottom_count(epsilon: f64, n: usize) -> usize {
    robust_ceil(epsilon * n as f64).clamp(1, n.max(1))
}

/// `ceil(n_c / eps)`.
pub fn candidate_count(n_c: usize, epsilon: f64) -> usize {
    robust_ceil(n_c as f64 / epsilon)
}

/// Indices of the `count` smallest values, ties to the lower index, in index order.
pub fn bottom_indices(values: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

/// Trajectory counts for one generator call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerEntry {
    pub bandit: usize,
    pub selected: usize,
    pub discarded: usize,
    pub timesteps: usize,
}

impl LedgerEntry {
    pub fn collected(&self) -> usize {
        self.bandit + self.selected + self.discarded
    }
}

/// Per-iteration counts; the warm start is kept apart from generator iterations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleLedger {
    pub warm_start: Option<LedgerEntry>,
    pub iterations: Vec<LedgerEntry>,
}

impl SampleLedger {
    /// Sum over generator iterations (warm start excluded).
    pub fn totals(&self) -> LedgerEntry {
        self.iterations.iter().fold(LedgerEntry::default(), |acc, e| LedgerEntry {
            bandit: acc.bandit + e.bandit,
            selected: acc.selected + e.selected,
            discarded: acc.discarded + e.discarded,
            timesteps: acc.timesteps + e.timesteps,
        })
    }
}

/// Exact ratio `a / b` in lowest terms.
pub fn reduced_ratio(a: usize, b: usize) -> (usize, usize) {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(a, b).max(1);
    (a / g, b / g)
}

/// Shared rollout settings for a generator call.
#[derive(Clone, Copy)]
pub struct RolloutContext<'a> {
    pub env: &'a dyn EnvironmentModel,
    pub dist: &'a SourceDistribution,
    pub horizon: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct EpoptBatch {
    pub trajectories: Vec<Trajectory>,
    pub entry: LedgerEntry,
    pub sampled: Vec<ModelParameter>,
    pub returns: Vec<f64>,
    pub selected: Vec<usize>,
}

/// Sample `n` models, roll each out, keep the `ceil(eps n)` lowest returns.
pub fn epopt_get_trajectories(
    ctx: RolloutContext<'_>,
    n: usize,
    epsilon: f64,
    policy: &PolicyParams,
    seeds: &SeedTree,
) -> Result<EpoptBatch> {
    if n == 0 {
        return Err(Error::config("n", "must be >= 1"));
    }
    let sampled = ctx.dist.sample_n(n, &mut seeds.child("params", 0).stream());
    let streams: Vec<SeedTree> = (0..n).map(|i| seeds.child("rollout", i as u64)).collect();
    let all = rollout_batch(ctx.env, &sampled, &streams, policy, ctx.horizon, ctx.gamma)?;
    let returns: Vec<f64> = all.iter().map(|t| t.discounted_return).collect();
    let keep = bottom_count(epsilon, n);
    let selected = bottom_indices(&returns, keep);
    let timesteps = all.iter().map(Trajectory::len).sum();
    let trajectories = selected.iter().map(|&i| all[i].clone()).collect();
    Ok(EpoptBatch {
        trajectories,
        entry: LedgerEntry {
            bandit: 0,
            selected: keep,
            discarded: n - keep,
            timesteps,
        },
        sampled,
        returns,
        selected,
    })
}

/// One bandit learning rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnPoint {
    pub arm: usize,
    pub param: ModelParameter,
    pub ret: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EffactsTrace {
    pub learning: Vec<LearnPoint>,
    pub candidates: Vec<ModelParameter>,
    pub predictions: Vec<f64>,
    /// Candidate indices rolled out, in index order.
    pub selected: Vec<usize>,
    pub selected_returns: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EffactsBatch {
    pub trajectories: Vec<Trajectory>,
    pub entry: LedgerEntry,
    pub trace: EffactsTrace,
}

/// Bandit phase then candidate selection. `bandit` should be fresh for the
/// current policy; it is left holding the `n_b` learning observations.
#[allow(clippy::too_many_arguments)]
pub fn effacts_get_trajectories(
    ctx: RolloutContext<'_>,
    n_c: usize,
    n_b: usize,
    epsilon: f64,
    bandit: &mut TsBandit,
    map: &PolynomialFeatureMap,
    arms: &ArmSet,
    policy: &PolicyParams,
    seeds: &SeedTree,
) -> Result<EffactsBatch> {
    if n_c == 0 {
        return Err(Error::config("n_c", "must be >= 1"));
    }
    let mut timesteps = 0;
    let mut learning = Vec::with_capacity(n_b);
    let mut bandit_rng = seeds.child("bandit", 0).stream();
    for i in 0..n_b {
        let arm = bandit.select_arm(arms, &mut bandit_rng);
        let param = arms.param(arm).clone();
        let traj = rollout(
            ctx.env,
            &param,
            policy,
            ctx.horizon,
            ctx.gamma,
            &mut seeds.child("learn", i as u64).stream(),
        )?;
        bandit.update(arms.features(arm), traj.discounted_return)?;
        timesteps += traj.len();
        learning.push(LearnPoint {
            arm,
            param,
            ret: traj.discounted_return,
        });
    }

    let m = candidate_count(n_c, epsilon);
    let candidates = ctx.dist.sample_n(m, &mut seeds.child("candidates", 0).stream());
    let theta = bandit.theta_hat();
    let predictions: Vec<f64> = candidates
        .iter()
        .map(|p| bandit.predict_with(&theta, &map.features(p)))
        .collect();
    let selected = bottom_indices(&predictions, n_c.min(m));
    let params: Vec<ModelParameter> = selected.iter().map(|&i| candidates[i].clone()).collect();
    let streams: Vec<SeedTree> = (0..params.len())
        .map(|j| seeds.child("selected", j as u64))
        .collect();
    let trajectories = rollout_batch(ctx.env, &params, &streams, policy, ctx.horizon, ctx.gamma)?;
    timesteps += trajectories.iter().map(Trajectory::len).sum::<usize>();
    let selected_returns = trajectories.iter().map(|t| t.discounted_return).collect();
    Ok(EffactsBatch {
        entry: LedgerEntry {
            bandit: n_b,
            selected: trajectories.len(),
            discarded: 0,
            timesteps,
        },
        trajectories,
        trace: EffactsTrace {
            learning,
            candidates,
            predictions,
            selected,
            selected_returns,
        },
    })
}

/// What a history row records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryKind {
    /// EffAcTS bandit learning rollout; value is its return.
    Learn,
    /// EffAcTS candidate; value is the predicted return.
    Candidate,
    /// EPOpt sampled model; value is its return.
    Sampled,
    /// Model whose trajectory went to the optimizer; value is its return.
    Selected,
}

impl HistoryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HistoryKind::Learn => "learn",
            HistoryKind::Candidate => "candidate",
            HistoryKind::Sampled => "sampled",
            HistoryKind::Selected => "selected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "learn" => HistoryKind::Learn,
            "candidate" => HistoryKind::Candidate,
            "sampled" => HistoryKind::Sampled,
            "selected" => HistoryKind::Selected,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub generator: GeneratorKind,
    pub kind: HistoryKind,
    /// Learn round, candidate index, or sample index.
    pub index: usize,
    pub value: f64,
    pub param: ModelParameter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationSummary {
    pub iteration: usize,
    pub entry: LedgerEntry,
    pub mean_selected_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Aborted { iteration: usize, error: Error },
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub initial_policy: PolicyParams,
    pub final_policy: PolicyParams,
    pub ledger: SampleLedger,
    pub iterations: Vec<IterationSummary>,
    pub history: Vec<HistoryRecord>,
    /// Policy in force while generating each measured iteration.
    pub snapshots: Vec<(usize, PolicyParams)>,
}

impl TrainReport {
    pub fn completed_iterations(&self) -> usize {
        self.iterations.len()
    }
}

/// Initial policy for a config, drawn from the `init` stream.
pub fn initial_policy(cfg: &ExperimentConfig) -> PolicyParams {
    let env = cfg.env.model();
    PolicyParams::init(
        cfg.policy.architecture.clone(),
        env.observation_dim(),
        env.action_dim(),
        cfg.policy.init_scale,
        cfg.policy.log_std_init,
        &mut SeedTree::new(cfg.seed).child("init", 0).stream(),
    )
}

/// Bandit feature map and arm grid over the source-distribution box.
pub fn bandit_arms(cfg: &ExperimentConfig) -> Result<(PolynomialFeatureMap, ArmSet)> {
    let k = cfg.dist.dim();
    ArmSet::grid(
        &cfg.dist.lows(),
        &cfg.dist.highs(),
        &cfg.bandit.resolution(k),
        cfg.bandit.degree,
        cfg.bandit.reward_scale,
    )
}

pub fn fresh_bandit(map: &PolynomialFeatureMap, ts: &TsConfig) -> TsBandit {
    TsBandit::for_map(map, *ts)
}

/// Sample from the source distribution until `min_timesteps` steps are
/// collected, then take one optimizer step on everything.
pub fn warm_start(
    ctx: RolloutContext<'_>,
    policy: &PolicyParams,
    min_timesteps: usize,
    opt: &OptimizerConfig,
    seeds: &SeedTree,
) -> Result<(PolicyParams, LedgerEntry)> {
    let mut param_rng = seeds.child("params", 0).stream();
    let mut batch = Vec::new();
    let mut timesteps = 0;
    while timesteps < min_timesteps {
        let p = ctx.dist.sample(&mut param_rng);
        let traj = rollout(
            ctx.env,
            &p,
            policy,
            ctx.horizon,
            ctx.gamma,
            &mut seeds.child("rollout", batch.len() as u64).stream(),
        )?;
        timesteps += traj.len();
        batch.push(traj);
    }
    let entry = LedgerEntry {
        bandit: 0,
        selected: batch.len(),
        discarded: 0,
        timesteps,
    };
    Ok((batch_pol_opt(policy, &batch, opt)?, entry))
}

/// Full training run. Config errors fail immediately; a rollout failure
/// stops the loop and is reported in `status` with everything completed so far.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(|| train_in_pool(cfg))
}

fn train_in_pool(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let root = SeedTree::new(cfg.seed);
    let ctx = RolloutContext {
        env: cfg.env.model(),
        dist: &cfg.dist,
        horizon: cfg.horizon,
        gamma: cfg.gamma,
    };
    let initial = initial_policy(cfg);
    let arms = match cfg.generator {
        GeneratorKind::Effacts => Some(bandit_arms(cfg)?),
        GeneratorKind::Epopt => None,
    };
    let mut report = TrainReport {
        config: cfg.clone(),
        status: RunStatus::Completed,
        initial_policy: initial.clone(),
        final_policy: initial.clone(),
        ledger: SampleLedger::default(),
        iterations: Vec::new(),
        history: Vec::new(),
        snapshots: Vec::new(),
    };
    if cfg.n_iters == 0 {
        return Ok(report);
    }
    let mut policy = initial;
    if cfg.warm_start_timesteps > 0 {
        match warm_start(
            ctx,
            &policy,
            cfg.warm_start_timesteps,
            &cfg.optimizer,
            &root.child("warm", 0),
        ) {
            Ok((p, entry)) => {
                policy = p;
                report.ledger.warm_start = Some(entry);
            }
            Err(error) => {
                report.status = RunStatus::Aborted { iteration: 0, error };
                return Ok(report);
            }
        }
        report.final_policy = policy.clone();
    }
    for iteration in 1..=cfg.n_iters {
        if cfg.eval.is_measured(iteration, cfg.n_iters) {
            report.snapshots.push((iteration, policy.clone()));
        }
        let seeds = root.child("iter", iteration as u64);
        let step = run_iteration(cfg, ctx, arms.as_ref(), &policy, iteration, &seeds)
            .and_then(|(batch, entry, rows)| {
                batch_pol_opt(&policy, &batch, &cfg.optimizer).map(|p| (p, batch, entry, rows))
            });
        match step {
            Ok((next, batch, entry, rows)) => {
                let mean = batch.iter().map(|t| t.discounted_return).sum::<f64>()
                    / batch.len() as f64;
                report.ledger.iterations.push(entry);
                report.iterations.push(IterationSummary {
                    iteration,
                    entry,
                    mean_selected_return: mean,
                });
                report.history.extend(rows);
                policy = next;
                report.final_policy = policy.clone();
            }
            Err(error) => {
                report.snapshots.retain(|(i, _)| *i < iteration);
                report.status = RunStatus::Aborted { iteration, error };
                break;
            }
        }
    }
    Ok(report)
}

type IterationOutput = (Vec<Trajectory>, LedgerEntry, Vec<HistoryRecord>);

fn run_iteration(
    cfg: &ExperimentConfig,
    ctx: RolloutContext<'_>,
    arms: Option<&(PolynomialFeatureMap, ArmSet)>,
    policy: &PolicyParams,
    iteration: usize,
    seeds: &SeedTree,
) -> Result<IterationOutput> {
    let generator = cfg.generator;
    let row = |kind, index, value, param: &ModelParameter| HistoryRecord {
        iteration,
        generator,
        kind,
        index,
        value,
        param: param.clone(),
    };
    let mut rows = Vec::new();
    match arms {
        None => {
            let b = epopt_get_trajectories(ctx, cfg.n, cfg.epsilon, policy, seeds)?;
            for (i, (p, &r)) in b.sampled.iter().zip(&b.returns).enumerate() {
                rows.push(row(HistoryKind::Sampled, i, r, p));
            }
            for &i in &b.selected {
                rows.push(row(HistoryKind::Selected, i, b.returns[i], &b.sampled[i]));
            }
            Ok((b.trajectories, b.entry, rows))
        }
        Some((map, arm_set)) => {
            let mut bandit = fresh_bandit(map, &cfg.bandit.ts);
            let b = effacts_get_trajectories(
                ctx,
                cfg.n_c,
                cfg.n_b,
                cfg.epsilon,
                &mut bandit,
                map,
                arm_set,
                policy,
                seeds,
            )?;
            let t = &b.trace;
            for (i, lp) in t.learning.iter().enumerate() {
                rows.push(row(HistoryKind::Learn, i, lp.ret, &lp.param));
            }
            for (i, (p, &v)) in t.candidates.iter().zip(&t.predictions).enumerate() {
                rows.push(row(HistoryKind::Candidate, i, v, p));
            }
            for (&i, &r) in t.selected.iter().zip(&t.selected_returns) {
                rows.push(row(HistoryKind::Selected, i, r, &t.candidates[i]));
            }
            Ok((b.trajectories, b.entry, rows))
        }
    }
}
