//! Ground-truth surfaces, selection-accuracy percentiles, return sweeps and
//! bandit fit dumps.

use rayon::prelude::*;

use crate::bandit::{uniform_grid, PolynomialFeatureMap, TsBandit, TsConfig};
use crate::config::ExperimentConfig;
use crate::ensemble::ModelParameter;
use crate::env::{estimate_performance, EnvironmentModel};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng::SeedTree;
use crate::sampler::{bandit_arms, HistoryKind, HistoryRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub param: ModelParameter,
    pub mean_return: f64,
    pub std_err: f64,
}

/// Mean return on a grid, used as ground truth for nearest-neighbour lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSurface {
    pub points: Vec<SurfacePoint>,
    lows: Vec<f64>,
    highs: Vec<f64>,
}

impl GroundTruthSurface {
    /// Build from explicit points; lookups standardize by the points' range.
    pub fn from_points(points: Vec<SurfacePoint>) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("surface grid"))?;
        let k = first.param.dim();
        let mut lows = vec![f64::INFINITY; k];
        let mut highs = vec![f64::NEG_INFINITY; k];
        for pt in &points {
            if pt.param.dim() != k {
                return Err(Error::DimensionMismatch {
                    what: "surface point",
                    expected: k,
                    actual: pt.param.dim(),
                });
            }
            for (d, &v) in pt.param.values().iter().enumerate() {
                lows[d] = lows[d].min(v);
                highs[d] = highs[d].max(v);
            }
        }
        Ok(GroundTruthSurface { points, lows, highs })
    }

    /// Index of the grid point nearest `p` in range-standardized coordinates;
    /// ties go to the lower index.
    pub fn nearest(&self, p: &ModelParameter) -> usize {
        let scale: Vec<f64> = self
            .lows
            .iter()
            .zip(&self.highs)
            .map(|(l, h)| if h > l { h - l } else { 1.0 })
            .collect();
        let mut best = (f64::INFINITY, 0);
        for (i, pt) in self.points.iter().enumerate() {
            let d: f64 = pt
                .param
                .values()
                .iter()
                .zip(p.values())
                .zip(&scale)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn value_at(&self, p: &ModelParameter) -> f64 {
        self.points[self.nearest(p)].mean_return
    }
}

/// Estimate mean return at every grid point with `n_eval` rollouts each,
/// point `i` on stream `("point", i)`.
pub fn build_surface(
    env: &dyn EnvironmentModel,
    policy: &PolicyParams,
    grid: &[ModelParameter],
    n_eval: usize,
    horizon: usize,
    gamma: f64,
    seeds: &SeedTree,
) -> Result<GroundTruthSurface> {
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = seeds.child("point", i as u64).stream();
            estimate_performance(env, p, policy, n_eval, horizon, gamma, &mut rng).map(
                |(mean_return, std_err)| SurfacePoint {
                    param: p.clone(),
                    mean_return,
                    std_err,
                },
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    GroundTruthSurface::from_points(points)
}

/// Percentile rank of `value` within `reference`: `100 * #{r <= value} / n`.
pub fn percentile_rank(value: f64, reference: &[f64]) -> f64 {
    let below = reference.iter().filter(|&&r| r <= value).count();
    100.0 * below as f64 / reference.len() as f64
}

/// Percentile of the worst-selected model (highest true return among
/// `selected`) within the true returns of `reference`.
pub fn percentile_accuracy(
    selected: &[ModelParameter],
    reference: &[ModelParameter],
    surface: &GroundTruthSurface,
) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Empty("selected parameters"));
    }
    if reference.is_empty() {
        return Err(Error::Empty("reference batch"));
    }
    let truth: Vec<f64> = reference.iter().map(|p| surface.value_at(p)).collect();
    let worst = selected
        .iter()
        .map(|p| surface.value_at(p))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(percentile_rank(worst, &truth))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileStats {
    pub median: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub max: f64,
    pub count: usize,
}

impl PercentileStats {
    /// Sample statistics; the median of an even count averages the middle pair.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("percentile measurements"));
        }
        let n = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_dev = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Ok(PercentileStats {
            median,
            mean,
            std_dev,
            max: sorted[n - 1],
            count: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub param: ModelParameter,
    pub mean: f64,
    pub std_err: f64,
}

/// Mean return and standard error at each grid point, point `i` on stream
/// `("sweep", i)`.
pub fn sweep(
    env: &dyn EnvironmentModel,
    policy: &PolicyParams,
    grid: &[ModelParameter],
    n_eval: usize,
    horizon: usize,
    gamma: f64,
    seeds: &SeedTree,
) -> Result<Vec<CurvePoint>> {
    grid.par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = seeds.child("sweep", i as u64).stream();
            estimate_performance(env, p, policy, n_eval, horizon, gamma, &mut rng).map(
                |(mean, std_err)| CurvePoint {
                    param: p.clone(),
                    mean,
                    std_err,
                },
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    /// Bandit prediction on the grid.
    Fit,
    /// Ground-truth mean return on the grid.
    Truth,
    /// Bandit learning rollout.
    Learn,
    /// Candidate passed to the optimizer.
    Output,
}

impl FitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitKind::Fit => "fit",
            FitKind::Truth => "truth",
            FitKind::Learn => "learn",
            FitKind::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub kind: FitKind,
    pub param: ModelParameter,
    pub value: f64,
}

/// Refit a fresh bandit on recorded learning rollouts.
pub fn replay_bandit(
    map: &PolynomialFeatureMap,
    ts: &TsConfig,
    learning: &[(ModelParameter, f64)],
) -> Result<TsBandit> {
    let mut bandit = TsBandit::for_map(map, *ts);
    for (p, r) in learning {
        bandit.update(&map.features(p), *r)?;
    }
    Ok(bandit)
}

/// Predicted return over `grid` plus the learning and output points.
pub fn bandit_fit_dump(
    bandit: &TsBandit,
    map: &PolynomialFeatureMap,
    grid: &[ModelParameter],
    learning: &[(ModelParameter, f64)],
    outputs: &[(ModelParameter, f64)],
) -> Vec<FitRecord> {
    let theta = bandit.theta_hat();
    let mut out: Vec<FitRecord> = grid
        .iter()
        .map(|p| FitRecord {
            kind: FitKind::Fit,
            param: p.clone(),
            value: bandit.predict_with(&theta, &map.features(p)),
        })
        .collect();
    out.extend(learning.iter().map(|(p, v)| FitRecord {
        kind: FitKind::Learn,
        param: p.clone(),
        value: *v,
    }));
    out.extend(outputs.iter().map(|(p, v)| FitRecord {
        kind: FitKind::Output,
        param: p.clone(),
        value: *v,
    }));
    out
}

/// Output of [`analyze`].
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub percentiles: Vec<(usize, f64)>,
    pub stats: PercentileStats,
    pub fit_iteration: Option<usize>,
    pub fit: Vec<FitRecord>,
}

fn rows_of(history: &[HistoryRecord], iteration: usize, kind: HistoryKind) -> Vec<&HistoryRecord> {
    history
        .iter()
        .filter(|r| r.iteration == iteration && r.kind == kind)
        .collect()
}

/// Selection accuracy at every measured EffAcTS iteration, plus the bandit
/// fit at the chosen iteration. Surfaces for iteration `i` use stream
/// `("surface", i)` and the policy snapshot taken before that iteration.
pub fn analyze(
    cfg: &ExperimentConfig,
    history: &[HistoryRecord],
    snapshots: &[(usize, PolicyParams)],
) -> Result<Analysis> {
    let root = SeedTree::new(cfg.seed);
    let env = cfg.env.model();
    let k = cfg.dist.dim();
    let grid = uniform_grid(&cfg.dist.lows(), &cfg.dist.highs(), &cfg.eval.surface_resolution(k));
    let mut percentiles = Vec::new();
    let mut surfaces = Vec::new();
    for (iteration, policy) in snapshots {
        let iteration = *iteration;
        if !cfg.eval.is_measured(iteration, cfg.n_iters) {
            continue;
        }
        let candidates: Vec<ModelParameter> = rows_of(history, iteration, HistoryKind::Candidate)
            .into_iter()
            .map(|r| r.param.clone())
            .collect();
        let selected: Vec<ModelParameter> = rows_of(history, iteration, HistoryKind::Selected)
            .into_iter()
            .map(|r| r.param.clone())
            .collect();
        if candidates.is_empty() || selected.is_empty() {
            continue;
        }
        let surface = build_surface(
            env,
            policy,
            &grid,
            cfg.eval.n_eval,
            cfg.horizon,
            cfg.gamma,
            &root.child("surface", iteration as u64),
        )?;
        percentiles.push((iteration, percentile_accuracy(&selected, &candidates, &surface)?));
        surfaces.push((iteration, surface));
    }
    let values: Vec<f64> = percentiles.iter().map(|(_, v)| *v).collect();
    let stats = PercentileStats::from_values(&values)?;

    let fit_iteration = cfg
        .eval
        .fit_iteration
        .or_else(|| surfaces.last().map(|(i, _)| *i));
    let mut fit = Vec::new();
    if let Some(it) = fit_iteration {
        let learning: Vec<(ModelParameter, f64)> = rows_of(history, it, HistoryKind::Learn)
            .into_iter()
            .map(|r| (r.param.clone(), r.value))
            .collect();
        let outputs: Vec<(ModelParameter, f64)> = rows_of(history, it, HistoryKind::Selected)
            .into_iter()
            .map(|r| (r.param.clone(), r.value))
            .collect();
        if learning.is_empty() && outputs.is_empty() {
            return Err(Error::config(
                "eval.fit_iteration",
                format!("no EffAcTS records for iteration {it}"),
            ));
        }
        let (map, _) = bandit_arms(cfg)?;
        let bandit = replay_bandit(&map, &cfg.bandit.ts, &learning)?;
        fit = bandit_fit_dump(&bandit, &map, &grid, &learning, &outputs);
        if let Some((_, surface)) = surfaces.iter().find(|(i, _)| *i == it) {
            fit.extend(surface.points.iter().map(|pt| FitRecord {
                kind: FitKind::Truth,
                param: pt.param.clone(),
                value: pt.mean_return,
            }));
        }
    }
    Ok(Analysis {
        percentiles,
        stats,
        fit_iteration,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Surface, SyntheticReturnEnv};
    use crate::policy::Architecture;
    use proptest::prelude::*;

    fn surface_1d(values: &[f64]) -> GroundTruthSurface {
        let n = values.len();
        GroundTruthSurface::from_points(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| SurfacePoint {
                    param: ModelParameter(vec![i as f64 / (n - 1) as f64]),
                    mean_return: v,
                    std_err: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn nearest_is_idempotent_on_grid_points() {
        let s = surface_1d(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        for (i, pt) in s.points.iter().enumerate() {
            assert_eq!(s.nearest(&pt.param), i);
        }
        assert_eq!(s.nearest(&ModelParameter(vec![0.3])), 1);
        assert_eq!(s.nearest(&ModelParameter(vec![0.125])), 0);
    }

    #[test]
    fn global_minimum_alone_scores_one_over_n() {
        let s = surface_1d(&(0..100).map(|i| i as f64).collect::<Vec<_>>());
        let reference: Vec<ModelParameter> = s.points.iter().map(|p| p.param.clone()).collect();
        let pct = percentile_accuracy(&reference[..1], &reference, &s).unwrap();
        assert_eq!(pct, 1.0);
    }

    #[test]
    fn exact_bottom_decile_scores_ten() {
        let values: Vec<f64> = (0..300).map(|i| ((i * 7919) % 300) as f64).collect();
        let s = surface_1d(&values);
        let reference: Vec<ModelParameter> = s.points.iter().map(|p| p.param.clone()).collect();
        let bottom: Vec<ModelParameter> = (0..300)
            .filter(|&i| values[i] < 30.0)
            .map(|i| reference[i].clone())
            .collect();
        assert_eq!(bottom.len(), 30);
        assert_eq!(percentile_accuracy(&bottom, &reference, &s).unwrap(), 10.0);
    }

    #[test]
    fn stats_by_hand() {
        let s = PercentileStats::from_values(&[10.0, 2.0, 4.0, 8.0]).unwrap();
        assert_eq!(s.median, 6.0);
        assert_eq!(s.mean, 6.0);
        assert_eq!(s.max, 10.0);
        assert!((s.std_dev - (40.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(PercentileStats::from_values(&[]).is_err());
    }

    #[test]
    fn sweep_matches_pointwise_estimates() {
        let env = SyntheticReturnEnv {
            surface: Surface::Linear {
                weights: vec![2.0],
                offset: 1.0,
            },
            noise_std: 0.5,
        };
        let policy = PolicyParams::zeros(Architecture::Linear, 1, 1);
        let grid = uniform_grid(&[0.0], &[1.0], &[7]);
        let seeds = SeedTree::new(11);
        let curve = sweep(&env, &policy, &grid, 20, 1, 1.0, &seeds).unwrap();
        for (i, pt) in curve.iter().enumerate() {
            let mut rng = seeds.child("sweep", i as u64).stream();
            let (m, se) =
                estimate_performance(&env, &grid[i], &policy, 20, 1, 1.0, &mut rng).unwrap();
            assert_eq!((pt.mean, pt.std_err), (m, se));
        }
    }

    #[test]
    fn noiseless_surface_is_exact() {
        let env = SyntheticReturnEnv {
            surface: Surface::Quadratic {
                center: vec![0.5],
                curvature: 4.0,
                offset: 1.0,
            },
            noise_std: 0.0,
        };
        let policy = PolicyParams::zeros(Architecture::Linear, 1, 1);
        let grid = uniform_grid(&[0.0], &[1.0], &[11]);
        let s = build_surface(&env, &policy, &grid, 3, 1, 1.0, &SeedTree::new(0)).unwrap();
        for pt in &s.points {
            let x = pt.param.0[0];
            assert!((pt.mean_return - (1.0 + 4.0 * (x - 0.5).powi(2))).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rank_of_bottom_subset_is_its_size(
            values in prop::collection::vec(-1e6f64..1e6, 2..200),
            frac in 0.01f64..1.0,
        ) {
            let mut uniq = values.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            let n = uniq.len();
            let m = ((frac * n as f64).ceil() as usize).clamp(1, n);
            let s = surface_1d(&uniq);
            let reference: Vec<ModelParameter> = s.points.iter().map(|p| p.param.clone()).collect();
            let pct = percentile_accuracy(&reference[..m], &reference, &s).unwrap();
            prop_assert!((pct - 100.0 * m as f64 / n as f64).abs() < 1e-9);
        }

        #[test]
        fn rank_invariant_under_monotone_transform(
            ints in prop::collection::vec(-1000i32..1000, 2..100),
            pick in 0usize..100,
        ) {
            let values: Vec<f64> = ints.iter().map(|&v| v as f64).collect();
            let pick = pick % values.len();
            let a = percentile_rank(values[pick], &values);
            let t: Vec<f64> = values.iter().map(|v| v.powi(3) + 5.0 * v - 2.0).collect();
            let b = percentile_rank(t[pick], &t);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn nearest_idempotent_2d(xs in prop::collection::vec((0f64..10.0, -5f64..5.0), 1..40)) {
            let points: Vec<SurfacePoint> = xs.iter().map(|&(a, b)| SurfacePoint {
                param: ModelParameter(vec![a, b]), mean_return: a, std_err: 0.0,
            }).collect();
            let s = GroundTruthSurface::from_points(points).unwrap();
            for (i, pt) in s.points.iter().enumerate() {
                let j = s.nearest(&pt.param);
                prop_assert!(j <= i);
                prop_assert_eq!(&s.points[j].param, &pt.param);
            }
        }
    }
}
