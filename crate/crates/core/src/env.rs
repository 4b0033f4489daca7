//! Parameterized environment models and trajectory rollout.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ensemble::ModelParameter;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng::SeedTree;

/// Any state component beyond this magnitude aborts the rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A member `M(p)` of a parameterized family of MDPs. Observations are the
/// full state. Implementations hold no per-episode state.
pub trait EnvironmentModel: Send + Sync {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Number of leading parameter components the model consumes.
    fn parameter_dim(&self) -> usize;
    fn reset(&self, p: &ModelParameter, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(
        &self,
        state: &[f64],
        action: &[f64],
        p: &ModelParameter,
        rng: &mut dyn RngCore,
    ) -> Step;
}

/// One episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `actions.len() + 1` states.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub parameter: ModelParameter,
    pub discounted_return: f64,
    /// Configured horizon; the episode may have terminated earlier.
    pub horizon: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

pub fn discounted_sum(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

fn finite_state(state: &[f64]) -> bool {
    state
        .iter()
        .all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT)
}

/// Roll out `policy` in `M(p)` for at most `horizon` steps, consuming only `rng`.
pub fn rollout(
    env: &dyn EnvironmentModel,
    p: &ModelParameter,
    policy: &PolicyParams,
    horizon: usize,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::config("horizon", "must be >= 1"));
    }
    if policy.obs_dim() != env.observation_dim() {
        return Err(Error::DimensionMismatch {
            what: "policy observation",
            expected: env.observation_dim(),
            actual: policy.obs_dim(),
        });
    }
    if policy.act_dim() != env.action_dim() {
        return Err(Error::DimensionMismatch {
            what: "policy action",
            expected: env.action_dim(),
            actual: policy.act_dim(),
        });
    }
    if p.dim() < env.parameter_dim() {
        return Err(Error::DimensionMismatch {
            what: "model parameter",
            expected: env.parameter_dim(),
            actual: p.dim(),
        });
    }
    let mut state = env.reset(p, rng);
    if !finite_state(&state) {
        return Err(Error::RolloutDiverged { step: 0 });
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let action = policy.act(&state, rng);
        let step = env.step(&state, &action, p, rng);
        if !step.reward.is_finite() || !finite_state(&step.next_state) {
            return Err(Error::RolloutDiverged { step: t });
        }
        states.push(std::mem::replace(&mut state, step.next_state));
        actions.push(action);
        rewards.push(step.reward);
        if step.done {
            break;
        }
    }
    states.push(state);
    let discounted_return = discounted_sum(&rewards, gamma);
    Ok(Trajectory {
        states,
        actions,
        rewards,
        parameter: p.clone(),
        discounted_return,
        horizon,
    })
}

/// Mean return over `n_traj` rollouts and its standard error.
pub fn estimate_performance(
    env: &dyn EnvironmentModel,
    p: &ModelParameter,
    policy: &PolicyParams,
    n_traj: usize,
    horizon: usize,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    if n_traj == 0 {
        return Err(Error::config("n_traj", "must be >= 1"));
    }
    let returns = (0..n_traj)
        .map(|_| rollout(env, p, policy, horizon, gamma, rng).map(|t| t.discounted_return))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_std_err(&returns))
}

pub(crate) fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Roll out one trajectory per parameter, each on its own stream, in parallel.
/// Output order follows `params`; the first failure by index is reported.
pub fn rollout_batch(
    env: &dyn EnvironmentModel,
    params: &[ModelParameter],
    streams: &[SeedTree],
    policy: &PolicyParams,
    horizon: usize,
    gamma: f64,
) -> Result<Vec<Trajectory>> {
    assert_eq!(params.len(), streams.len());
    params
        .par_iter()
        .zip(streams.par_iter())
        .map(|(p, s)| rollout(env, p, policy, horizon, gamma, &mut s.stream()))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// 1-D point mass pushed by a bounded force against viscous damping.
///
/// State `(x, v)`, action `u`, `x'' = (u - c v) / m`, explicit Euler with
/// step `dt`, reward `-(x^2 + 0.1 u^2)`. Parameter components bind in order
/// to `(mass, damping)`; components not supplied use the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct DampedMassControl {
    pub dt: f64,
    pub default_mass: f64,
    pub default_damping: f64,
    pub force_limit: f64,
    pub start_position: f64,
    pub start_velocity: f64,
    /// Half-width of the uniform jitter added to the start position.
    pub start_noise: f64,
}

impl Default for DampedMassControl {
    fn default() -> Self {
        DampedMassControl {
            dt: 0.05,
            default_mass: 1.0,
            default_damping: 0.5,
            force_limit: 10.0,
            start_position: 1.0,
            start_velocity: 0.0,
            start_noise: 0.1,
        }
    }
}

impl DampedMassControl {
    fn physical(&self, p: &ModelParameter) -> (f64, f64) {
        let v = p.values();
        (
            v.first().copied().unwrap_or(self.default_mass),
            v.get(1).copied().unwrap_or(self.default_damping),
        )
    }
}

impl EnvironmentModel for DampedMassControl {
    fn observation_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn parameter_dim(&self) -> usize {
        0
    }

    fn reset(&self, _p: &ModelParameter, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut x = self.start_position;
        if self.start_noise > 0.0 {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            x += self.start_noise * (2.0 * u - 1.0);
        }
        vec![x, self.start_velocity]
    }

    fn step(
        &self,
        state: &[f64],
        action: &[f64],
        p: &ModelParameter,
        _rng: &mut dyn RngCore,
    ) -> Step {
        let (m, c) = self.physical(p);
        let (x, v) = (state[0], state[1]);
        let u = action[0].clamp(-self.force_limit, self.force_limit);
        let acc = (u - c * v) / m;
        Step {
            next_state: vec![x + self.dt * v, v + self.dt * acc],
            reward: -(x * x + 0.1 * u * u),
            done: false,
        }
    }
}

/// Analytic performance surface over the parameter space.
#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// `offset + sum_i weights_i p_i`
    Linear { weights: Vec<f64>, offset: f64 },
    /// `offset + curvature * |p - center|^2`
    Quadratic {
        center: Vec<f64>,
        curvature: f64,
        offset: f64,
    },
    /// `offset - depth * exp(-|p - center|^2 / (2 width^2))`
    Dip {
        center: Vec<f64>,
        width: f64,
        depth: f64,
        offset: f64,
    },
    /// Two Gaussian dips.
    Bimodal {
        centers: [Vec<f64>; 2],
        width: f64,
        depths: [f64; 2],
        offset: f64,
    },
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Surface {
    pub fn eval(&self, p: &[f64]) -> f64 {
        match self {
            Surface::Linear { weights, offset } => {
                offset + weights.iter().zip(p).map(|(w, x)| w * x).sum::<f64>()
            }
            Surface::Quadratic {
                center,
                curvature,
                offset,
            } => offset + curvature * sq_dist(p, center),
            Surface::Dip {
                center,
                width,
                depth,
                offset,
            } => offset - depth * (-sq_dist(p, center) / (2.0 * width * width)).exp(),
            Surface::Bimodal {
                centers,
                width,
                depths,
                offset,
            } => {
                offset
                    - centers
                        .iter()
                        .zip(depths)
                        .map(|(c, d)| d * (-sq_dist(p, c) / (2.0 * width * width)).exp())
                        .sum::<f64>()
            }
        }
    }

    /// Number of parameter components the surface reads.
    pub fn dim(&self) -> usize {
        match self {
            Surface::Linear { weights, .. } => weights.len(),
            Surface::Quadratic { center, .. } | Surface::Dip { center, .. } => center.len(),
            Surface::Bimodal { centers, .. } => centers[0].len(),
        }
    }
}

/// Single-step environment whose reward is `f(p)` plus Gaussian noise,
/// independent of the action. Expected return at `p` is exactly `f(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticReturnEnv {
    pub surface: Surface,
    pub noise_std: f64,
}

impl EnvironmentModel for SyntheticReturnEnv {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn parameter_dim(&self) -> usize {
        self.surface.dim()
    }

    fn reset(&self, _p: &ModelParameter, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0]
    }

    fn step(
        &self,
        _state: &[f64],
        _action: &[f64],
        p: &ModelParameter,
        rng: &mut dyn RngCore,
    ) -> Step {
        let mut reward = self.surface.eval(p.values());
        if self.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            reward += self.noise_std * z;
        }
        Step {
            next_state: vec![0.0],
            reward,
            done: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Architecture;

    struct ConstantReward;

    impl EnvironmentModel for ConstantReward {
        fn observation_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn parameter_dim(&self) -> usize {
            0
        }
        fn reset(&self, _: &ModelParameter, _: &mut dyn RngCore) -> Vec<f64> {
            vec![0.0]
        }
        fn step(&self, s: &[f64], _: &[f64], _: &ModelParameter, _: &mut dyn RngCore) -> Step {
            Step {
                next_state: vec![s[0] + 1.0],
                reward: 1.0,
                done: false,
            }
        }
    }

    struct Exploding;

    impl EnvironmentModel for Exploding {
        fn observation_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn parameter_dim(&self) -> usize {
            0
        }
        fn reset(&self, _: &ModelParameter, _: &mut dyn RngCore) -> Vec<f64> {
            vec![1.0]
        }
        fn step(&self, s: &[f64], _: &[f64], _: &ModelParameter, _: &mut dyn RngCore) -> Step {
            Step {
                next_state: vec![s[0] * 100.0],
                reward: 0.0,
                done: false,
            }
        }
    }

    fn deterministic_policy(obs_dim: usize) -> PolicyParams {
        let mut p = PolicyParams::zeros(Architecture::Linear, obs_dim, 1);
        p = p.with_theta(&{
            let mut t = p.theta();
            *t.last_mut().unwrap() = -1e300;
            t
        })
        .unwrap();
        p
    }

    fn p0() -> ModelParameter {
        ModelParameter(vec![])
    }

    #[test]
    fn gamma_zero_keeps_first_reward() {
        let mut rng = SeedTree::new(0).stream();
        let t = rollout(&ConstantReward, &p0(), &deterministic_policy(1), 7, 0.0, &mut rng).unwrap();
        assert_eq!(t.discounted_return, 1.0);
        assert_eq!(t.states.len(), 8);
        assert_eq!(t.actions.len(), 7);
    }

    #[test]
    fn geometric_sum() {
        let mut rng = SeedTree::new(0).stream();
        let t = rollout(&ConstantReward, &p0(), &deterministic_policy(1), 3, 0.5, &mut rng).unwrap();
        assert_eq!(t.discounted_return, 1.75);
        assert!((discounted_sum(&t.rewards, 0.5) - t.discounted_return).abs() < 1e-10);
    }

    #[test]
    fn damped_mass_matches_hand_stepped_euler() {
        let env = DampedMassControl {
            dt: 0.1,
            default_mass: 1.0,
            default_damping: 0.0,
            start_noise: 0.0,
            start_position: 1.0,
            start_velocity: 0.0,
            ..Default::default()
        };
        let p = ModelParameter(vec![1.0, 0.0]);
        let mut rng = SeedTree::new(0).stream();
        let t = rollout(&env, &p, &deterministic_policy(2), 5, 0.9, &mut rng).unwrap();
        // independent recomputation from the recorded (near-zero) forces
        let (mut x, mut v, mut ret, mut disc) = (1.0f64, 0.0f64, 0.0, 1.0);
        for a in &t.actions {
            let u = a[0];
            assert!(u.abs() < 1e-6);
            ret += disc * -(x * x + 0.1 * u * u);
            disc *= 0.9;
            let acc = (u - 0.0 * v) / 1.0;
            x += 0.1 * v;
            v += 0.1 * acc;
        }
        assert!((t.discounted_return - ret).abs() < 1e-12);
        assert!((t.discounted_return + (1.0 - 0.9f64.powi(5)) / 0.1).abs() < 1e-9);
    }

    #[test]
    fn more_damping_never_speeds_the_mass_up() {
        let env = DampedMassControl {
            start_noise: 0.0,
            start_velocity: 2.0,
            ..Default::default()
        };
        let speeds = |c: f64| {
            let p = ModelParameter(vec![1.0, c]);
            let mut rng = SeedTree::new(0).stream();
            let mut s = env.reset(&p, &mut rng);
            let mut out = vec![s[1].abs()];
            for _ in 0..100 {
                s = env.step(&s, &[0.0], &p, &mut rng).next_state;
                out.push(s[1].abs());
            }
            out
        };
        let grid: Vec<f64> = (0..=20).map(|i| 0.25 * i as f64).collect();
        for w in grid.windows(2) {
            let (lo, hi) = (speeds(w[0]), speeds(w[1]));
            for (a, b) in lo.iter().zip(&hi) {
                assert!(b <= a, "c={} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn damped_mass_stays_finite_with_bounded_force() {
        let env = DampedMassControl::default();
        let mut rng = SeedTree::new(5).stream();
        let policy = PolicyParams::from_parts(Architecture::Linear, 2, 1, vec![50.0, 50.0, 0.0], vec![1.0]).unwrap();
        for m in [0.5, 1.0, 2.0] {
            let t = rollout(&env, &ModelParameter(vec![m]), &policy, 100, 0.99, &mut rng).unwrap();
            assert!(t.states.iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let mut rng = SeedTree::new(0).stream();
        let err = rollout(&Exploding, &p0(), &deterministic_policy(1), 10, 1.0, &mut rng).unwrap_err();
        // 1e2, 1e4, 1e6 are fine; 1e8 at step index 3 trips the guard
        assert_eq!(err, Error::RolloutDiverged { step: 3 });
    }

    #[test]
    fn rollouts_are_reproducible() {
        let env = DampedMassControl::default();
        let policy = PolicyParams::zeros(Architecture::Linear, 2, 1);
        let p = ModelParameter(vec![1.3]);
        let a = rollout(&env, &p, &policy, 50, 0.99, &mut SeedTree::new(9).stream()).unwrap();
        let b = rollout(&env, &p, &policy, 50, 0.99, &mut SeedTree::new(9).stream()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_estimate_has_zero_std_err() {
        let env = SyntheticReturnEnv {
            surface: Surface::Quadratic {
                center: vec![0.0],
                curvature: -1.0,
                offset: 0.0,
            },
            noise_std: 0.0,
        };
        let mut rng = SeedTree::new(0).stream();
        let p = ModelParameter(vec![2.0]);
        let (m, se) =
            estimate_performance(&env, &p, &deterministic_policy(1), 5, 1, 1.0, &mut rng).unwrap();
        assert_eq!((m, se), (-4.0, 0.0));
    }

    #[test]
    fn synthetic_estimate_is_accurate() {
        let env = SyntheticReturnEnv {
            surface: Surface::Quadratic {
                center: vec![0.0],
                curvature: -1.0,
                offset: 0.0,
            },
            noise_std: 0.1,
        };
        let policy = PolicyParams::zeros(Architecture::Linear, 1, 1);
        let p = ModelParameter(vec![2.0]);
        let mut rng = SeedTree::new(1).stream();
        let (m, _) = estimate_performance(&env, &p, &policy, 10_000, 1, 1.0, &mut rng).unwrap();
        assert!((m + 4.0).abs() < 3.0 * 0.1 / 100.0);
    }

    #[test]
    fn std_err_halves_when_samples_quadruple() {
        let env = SyntheticReturnEnv {
            surface: Surface::Linear {
                weights: vec![1.0],
                offset: 0.0,
            },
            noise_std: 1.0,
        };
        let policy = PolicyParams::zeros(Architecture::Linear, 1, 1);
        let p = ModelParameter(vec![0.5]);
        let root = SeedTree::new(2);
        let mut ratios = 0.0;
        for rep in 0..20 {
            let mut rng = root.child("rep", rep).stream();
            let (_, a) = estimate_performance(&env, &p, &policy, 1000, 1, 1.0, &mut rng).unwrap();
            let (_, b) = estimate_performance(&env, &p, &policy, 4000, 1, 1.0, &mut rng).unwrap();
            ratios += b / a;
        }
        let r = ratios / 20.0;
        assert!((0.4..=0.6).contains(&r), "{r}");
    }

    #[test]
    fn synthetic_estimator_is_unbiased() {
        let env = SyntheticReturnEnv {
            surface: Surface::Dip {
                center: vec![1.0],
                width: 0.5,
                depth: 3.0,
                offset: 1.0,
            },
            noise_std: 0.5,
        };
        let policy = PolicyParams::zeros(Architecture::Linear, 1, 1);
        let p = ModelParameter(vec![1.2]);
        let f = env.surface.eval(&[1.2]);
        let root = SeedTree::new(3);
        let means: Vec<f64> = (0..100)
            .map(|i| {
                let mut rng = root.child("rep", i).stream();
                estimate_performance(&env, &p, &policy, 50, 1, 1.0, &mut rng).unwrap().0
            })
            .collect();
        let (m, se) = mean_and_std_err(&means);
        assert!((m - f).abs() < 4.0 * se);
    }

    #[test]
    fn batch_rollouts_follow_parameter_order() {
        let env = DampedMassControl::default();
        let policy = PolicyParams::zeros(Architecture::Linear, 2, 1);
        let params: Vec<_> = (0..8).map(|i| ModelParameter(vec![0.5 + 0.2 * i as f64])).collect();
        let root = SeedTree::new(4);
        let streams: Vec<_> = (0..8).map(|i| root.child("rollout", i)).collect();
        let batch = rollout_batch(&env, &params, &streams, &policy, 20, 0.99).unwrap();
        for (i, t) in batch.iter().enumerate() {
            let solo = rollout(&env, &params[i], &policy, 20, 0.99, &mut streams[i].stream()).unwrap();
            assert_eq!(&solo, t);
        }
    }
}
