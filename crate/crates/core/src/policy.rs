//! Gaussian policies and the score-function batch optimizer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::env::Trajectory;
use crate::error::{Error, Result};

/// Floor applied to the action standard deviation in `act` and `log_prob`.
pub const STD_FLOOR: f64 = 1e-8;
/// Range the optimizer keeps `log_std` in.
pub const LOG_STD_MIN: f64 = -8.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Action-mean function family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// `mean = W obs + b`
    Linear,
    /// Fully connected tanh hidden layers with a linear output layer.
    Tanh { hidden: Vec<usize> },
}

impl Architecture {
    fn layer_sizes(&self, obs_dim: usize, act_dim: usize) -> Vec<usize> {
        let mut sizes = vec![obs_dim];
        if let Architecture::Tanh { hidden } = self {
            sizes.extend(hidden.iter().copied());
        }
        sizes.push(act_dim);
        sizes
    }

    /// Number of mean-function weights (excluding `log_std`).
    pub fn weight_count(&self, obs_dim: usize, act_dim: usize) -> usize {
        self.layer_sizes(obs_dim, act_dim)
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Stochastic policy `a ~ N(mean_theta(obs), diag(exp(log_std))^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: Architecture,
    obs_dim: usize,
    act_dim: usize,
    /// Per layer: weights (out x in, row major) followed by biases.
    weights: Vec<f64>,
    log_std: Vec<f64>,
}

impl PolicyParams {
    /// All-zero weights, `log_std` = 0.
    pub fn zeros(arch: Architecture, obs_dim: usize, act_dim: usize) -> Self {
        let n = arch.weight_count(obs_dim, act_dim);
        PolicyParams {
            arch,
            obs_dim,
            act_dim,
            weights: vec![0.0; n],
            log_std: vec![0.0; act_dim],
        }
    }

    /// Weights uniform in `[-init_scale, init_scale]`, `log_std` set to `log_std_init`.
    pub fn init<R: Rng + ?Sized>(
        arch: Architecture,
        obs_dim: usize,
        act_dim: usize,
        init_scale: f64,
        log_std_init: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(arch, obs_dim, act_dim);
        if init_scale > 0.0 {
            let u = Uniform::new_inclusive(-init_scale, init_scale).expect("finite scale");
            for w in &mut p.weights {
                *w = u.sample(rng);
            }
        }
        p.log_std.fill(log_std_init.clamp(LOG_STD_MIN, LOG_STD_MAX));
        p
    }

    pub fn from_parts(
        arch: Architecture,
        obs_dim: usize,
        act_dim: usize,
        weights: Vec<f64>,
        log_std: Vec<f64>,
    ) -> Result<Self> {
        let n = arch.weight_count(obs_dim, act_dim);
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                what: "policy weights",
                expected: n,
                actual: weights.len(),
            });
        }
        if log_std.len() != act_dim {
            return Err(Error::DimensionMismatch {
                what: "policy log_std",
                expected: act_dim,
                actual: log_std.len(),
            });
        }
        Ok(PolicyParams {
            arch,
            obs_dim,
            act_dim,
            weights,
            log_std,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.log_std.len()
    }

    /// Flat parameter vector: weights then `log_std`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.weights.clone();
        t.extend_from_slice(&self.log_std);
        t
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "policy theta",
                expected: self.num_params(),
                actual: theta.len(),
            });
        }
        let (w, s) = theta.split_at(self.weights.len());
        Ok(PolicyParams {
            weights: w.to_vec(),
            log_std: s.to_vec(),
            ..self.clone()
        })
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|&l| l.exp().max(STD_FLOOR)).collect()
    }

    /// Forward pass. Returns the pre-output activations of every layer when
    /// `trace` is provided (used by the gradient).
    fn forward(&self, obs: &[f64], mut trace: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
        let sizes = self.arch.layer_sizes(self.obs_dim, self.act_dim);
        let n_layers = sizes.len() - 1;
        let mut input = obs.to_vec();
        let mut offset = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let mat = &self.weights[offset..offset + n_in * n_out];
            let bias = &self.weights[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            if let Some(t) = trace.as_deref_mut() {
                t.push(input.clone());
            }
            let mut out: Vec<f64> = (0..n_out)
                .map(|o| {
                    bias[o]
                        + mat[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(&input)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            input = out;
        }
        input
    }

    /// Action mean at `obs`.
    pub fn mean(&self, obs: &[f64]) -> Vec<f64> {
        self.forward(obs, None)
    }

    fn check_obs(&self, obs: &[f64]) {
        assert_eq!(obs.len(), self.obs_dim, "observation dimension");
    }

    /// Draw an action: `mean(obs) + std * z`, `z` standard normal.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Vec<f64> {
        self.check_obs(obs);
        let std = self.std();
        self.mean(obs)
            .into_iter()
            .zip(std)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect()
    }

    /// Gaussian log density of `action` at `obs`.
    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> f64 {
        self.check_obs(obs);
        assert_eq!(action.len(), self.act_dim, "action dimension");
        let mean = self.mean(obs);
        self.std()
            .iter()
            .zip(mean.iter().zip(action))
            .map(|(&s, (&m, &a))| {
                let z = (a - m) / s;
                -0.5 * z * z - s.ln() - HALF_LN_2PI
            })
            .sum()
    }

    /// Adds `scale * d log_prob / d theta` into `grad` (layout of [`theta`](Self::theta)).
    pub fn accumulate_log_prob_grad(
        &self,
        obs: &[f64],
        action: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.num_params());
        let mut inputs = Vec::new();
        let mean = self.forward(obs, Some(&mut inputs));
        let n_w = self.weights.len();
        let mut delta: Vec<f64> = Vec::with_capacity(self.act_dim);
        for i in 0..self.act_dim {
            let ls = self.log_std[i];
            let s = ls.exp();
            let (s_eff, floored) = if s < STD_FLOOR { (STD_FLOOR, true) } else { (s, false) };
            let z = (action[i] - mean[i]) / s_eff;
            delta.push(z / s_eff);
            if !floored {
                grad[n_w + i] += scale * (z * z - 1.0);
            }
        }

        // Backward through the layers, last to first.
        let sizes = self.arch.layer_sizes(self.obs_dim, self.act_dim);
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut off = 0;
        for w in sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..sizes.len() - 1).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let base = offsets[l];
            let input = &inputs[l];
            for o in 0..n_out {
                let d = scale * delta[o];
                if d == 0.0 {
                    continue;
                }
                for (j, x) in input.iter().enumerate() {
                    grad[base + o * n_in + j] += d * x;
                }
                grad[base + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            // input of layer l is tanh output of layer l-1
            let mat = &self.weights[base..base + n_in * n_out];
            delta = (0..n_in)
                .map(|j| {
                    let back: f64 = (0..n_out).map(|o| mat[o * n_in + j] * delta[o]).sum();
                    back * (1.0 - input[j] * input[j])
                })
                .collect();
        }
    }
}

/// Baseline subtracted from trajectory returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    None,
    BatchMeanReturn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub baseline: Baseline,
    pub max_grad_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            baseline: Baseline::BatchMeanReturn,
            max_grad_norm: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be finite and > 0"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("max_grad_norm", "must be > 0"));
        }
        Ok(())
    }
}

/// A black-box batch policy optimizer.
pub trait BatchPolicyOptimizer {
    fn optimize(&self, policy: &PolicyParams, batch: &[Trajectory]) -> Result<PolicyParams>;
}

/// Per-trajectory advantages `R(tau) - baseline`. Exactly zero when all
/// returns coincide and the batch-mean baseline is used.
pub fn advantages(batch: &[Trajectory], baseline: Baseline) -> Vec<f64> {
    let returns: Vec<f64> = batch.iter().map(|t| t.discounted_return).collect();
    match baseline {
        Baseline::None => returns,
        Baseline::BatchMeanReturn => {
            if returns.windows(2).all(|w| w[0] == w[1]) {
                return vec![0.0; returns.len()];
            }
            let b = returns.iter().sum::<f64>() / returns.len() as f64;
            returns.into_iter().map(|r| r - b).collect()
        }
    }
}

/// Likelihood-ratio surrogate `(1/n) sum_tau A_tau sum_t log pi(a_t | s_t)`
/// with advantages held fixed. Its gradient is the REINFORCE estimate.
pub fn surrogate_objective(policy: &PolicyParams, batch: &[Trajectory], adv: &[f64]) -> f64 {
    let n = batch.len() as f64;
    batch
        .iter()
        .zip(adv)
        .map(|(traj, &a)| {
            a * traj
                .actions
                .iter()
                .enumerate()
                .map(|(t, act)| policy.log_prob(&traj.states[t], act))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

pub fn surrogate_gradient(policy: &PolicyParams, batch: &[Trajectory], adv: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; policy.num_params()];
    let n = batch.len() as f64;
    for (traj, &a) in batch.iter().zip(adv) {
        if a == 0.0 {
            continue;
        }
        for (t, act) in traj.actions.iter().enumerate() {
            policy.accumulate_log_prob_grad(&traj.states[t], act, a / n, &mut grad);
        }
    }
    grad
}

/// REINFORCE with an optional batch-mean baseline and gradient-norm clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reinforce {
    pub config: OptimizerConfig,
}

impl BatchPolicyOptimizer for Reinforce {
    fn optimize(&self, policy: &PolicyParams, batch: &[Trajectory]) -> Result<PolicyParams> {
        batch_pol_opt(policy, batch, &self.config)
    }
}

/// One clipped gradient-ascent step on the batch's mean return.
pub fn batch_pol_opt(
    policy: &PolicyParams,
    batch: &[Trajectory],
    cfg: &OptimizerConfig,
) -> Result<PolicyParams> {
    if batch.is_empty() {
        return Err(Error::Empty("trajectory batch"));
    }
    for traj in batch {
        if let Some(s) = traj.states.first() {
            if s.len() != policy.obs_dim() {
                return Err(Error::DimensionMismatch {
                    what: "trajectory observation",
                    expected: policy.obs_dim(),
                    actual: s.len(),
                });
            }
        }
    }
    let adv = advantages(batch, cfg.baseline);
    if adv.iter().all(|&a| a == 0.0) {
        return Ok(policy.clone());
    }
    let mut grad = surrogate_gradient(policy, batch, &adv);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::config("policy gradient", "non-finite gradient"));
    }
    if norm > cfg.max_grad_norm {
        let k = cfg.max_grad_norm / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
    let mut theta = policy.theta();
    for (t, g) in theta.iter_mut().zip(&grad) {
        *t += cfg.learning_rate * g;
    }
    let n_w = policy.weights().len();
    for ls in &mut theta[n_w..] {
        *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
    }
    policy.with_theta(&theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::ModelParameter;
    use crate::rng::SeedTree;

    fn traj(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, ret: f64) -> Trajectory {
        let rewards = vec![0.0; actions.len()];
        Trajectory {
            horizon: actions.len(),
            states,
            actions,
            rewards,
            parameter: ModelParameter(vec![0.0]),
            discounted_return: ret,
        }
    }

    #[test]
    fn weight_counts() {
        assert_eq!(Architecture::Linear.weight_count(2, 1), 3);
        let net = Architecture::Tanh { hidden: vec![64, 64] };
        assert_eq!(net.weight_count(2, 1), 2 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
    }

    #[test]
    fn zero_weight_linear_policy_has_zero_mean() {
        let p = PolicyParams::zeros(Architecture::Linear, 3, 2);
        assert_eq!(p.mean(&[1.0, -4.0, 9.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn tiny_std_gives_mean_action() {
        let p = PolicyParams::from_parts(
            Architecture::Linear,
            1,
            1,
            vec![2.0, 0.5],
            vec![-1e300],
        )
        .unwrap();
        let mut rng = SeedTree::new(0).stream();
        for _ in 0..100 {
            let a = p.act(&[1.0], &mut rng)[0];
            assert!((a - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn empirical_action_std_matches() {
        let p = PolicyParams::from_parts(Architecture::Linear, 1, 1, vec![1.0, 0.0], vec![-0.7])
            .unwrap();
        let mut rng = SeedTree::new(1).stream();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| p.act(&[3.0], &mut rng)[0]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd / (-0.7f64).exp() - 1.0).abs() < 0.02);
    }

    #[test]
    fn log_prob_gaussian_algebra() {
        let p = PolicyParams::zeros(Architecture::Linear, 2, 3);
        let obs = [0.3, -0.2];
        let at_mode = p.log_prob(&obs, &[0.0, 0.0, 0.0]);
        let want = -0.5 * 3.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((at_mode - want).abs() < 1e-12);
        let shifted = p.log_prob(&obs, &[1.0, 1.0, 1.0]);
        assert!((at_mode - shifted - 1.5).abs() < 1e-12);
    }

    #[test]
    fn log_prob_integrates_to_one() {
        let p = PolicyParams::from_parts(Architecture::Linear, 1, 1, vec![0.4, 0.1], vec![-0.3])
            .unwrap();
        let (a, b, n) = (-10.0, 10.0, 20_000);
        let h = (b - a) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * p.log_prob(&[1.0], &[a + h * i as f64]).exp();
        }
        assert!((s * h - 1.0).abs() < 1e-4);
    }

    #[test]
    fn identical_returns_leave_policy_unchanged() {
        let p = PolicyParams::from_parts(Architecture::Linear, 1, 1, vec![0.3, -0.1], vec![0.0])
            .unwrap();
        let batch: Vec<_> = (0..4)
            .map(|i| traj(vec![vec![i as f64], vec![0.0]], vec![vec![0.5 * i as f64]], 0.1 * 3.0))
            .collect();
        let out = batch_pol_opt(&p, &batch, &OptimizerConfig::default()).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let p = PolicyParams::zeros(Architecture::Linear, 1, 1);
        assert!(batch_pol_opt(&p, &[], &OptimizerConfig::default()).is_err());
    }

    fn random_batch(seed: u64, obs_dim: usize, act_dim: usize, steps: usize) -> Vec<Trajectory> {
        let mut rng = SeedTree::new(seed).stream();
        (0..5)
            .map(|_| {
                let states: Vec<Vec<f64>> = (0..=steps)
                    .map(|_| (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                let actions: Vec<Vec<f64>> = (0..steps)
                    .map(|_| (0..act_dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect();
                traj(states, actions, rng.random_range(-5.0..5.0))
            })
            .collect()
    }

    fn check_fd(arch: Architecture, seed: u64) {
        let batch = random_batch(seed, 2, 2, 3);
        let adv = advantages(&batch, Baseline::BatchMeanReturn);
        let mut rng = SeedTree::new(seed + 100).stream();
        let p = PolicyParams::init(arch, 2, 2, 0.5, 0.0, &mut rng);
        let mut theta = p.theta();
        let n_w = p.weights().len();
        for ls in &mut theta[n_w..] {
            *ls = rng.random_range(-0.5..0.5);
        }
        let p = p.with_theta(&theta).unwrap();
        let g = surrogate_gradient(&p, &batch, &adv);
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut up = theta.clone();
            up[k] += h;
            let mut dn = theta.clone();
            dn[k] -= h;
            let fd = (surrogate_objective(&p.with_theta(&up).unwrap(), &batch, &adv)
                - surrogate_objective(&p.with_theta(&dn).unwrap(), &batch, &adv))
                / (2.0 * h);
            let rel = (g[k] - fd).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {k}: analytic {} fd {fd}", g[k]);
        }
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        for seed in 0..5 {
            check_fd(Architecture::Linear, seed);
        }
    }

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        for seed in 0..5 {
            check_fd(Architecture::Tanh { hidden: vec![4, 3] }, seed);
        }
    }

    #[test]
    fn positive_advantage_raises_likelihood() {
        let p = PolicyParams::from_parts(Architecture::Linear, 1, 1, vec![0.2, 0.1], vec![0.0])
            .unwrap();
        let t = traj(
            vec![vec![1.0], vec![0.5], vec![0.0]],
            vec![vec![1.5], vec![0.9]],
            2.0,
        );
        let lp = |q: &PolicyParams| q.log_prob(&[1.0], &[1.5]) + q.log_prob(&[0.5], &[0.9]);
        let cfg = OptimizerConfig {
            baseline: Baseline::None,
            learning_rate: 0.01,
            max_grad_norm: 10.0,
        };
        let q = batch_pol_opt(&p, &[t], &cfg).unwrap();
        assert!(lp(&q) > lp(&p));
    }

    #[test]
    fn update_norm_is_clipped() {
        let batch = random_batch(3, 2, 1, 4);
        let p = PolicyParams::zeros(Architecture::Linear, 2, 1);
        let cfg = OptimizerConfig {
            learning_rate: 0.3,
            baseline: Baseline::None,
            max_grad_norm: 0.05,
        };
        let q = batch_pol_opt(&p, &batch, &cfg).unwrap();
        let step: f64 = p
            .theta()
            .iter()
            .zip(q.theta())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(step <= 0.3 * 0.05 + 1e-15);
        assert!(step > 0.0);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let batch = random_batch(4, 2, 1, 4);
        let p = PolicyParams::zeros(Architecture::Linear, 2, 1);
        let cfg = OptimizerConfig::default();
        assert_eq!(
            batch_pol_opt(&p, &batch, &cfg).unwrap(),
            batch_pol_opt(&p, &batch, &cfg).unwrap()
        );
    }

    #[test]
    fn single_step_problem_converges_to_optimum() {
        // reward -(a - 3)^2, constant observation; the bias learns the mean
        let mut p = PolicyParams::zeros(Architecture::Linear, 1, 1);
        let cfg = OptimizerConfig {
            learning_rate: 0.05,
            baseline: Baseline::BatchMeanReturn,
            max_grad_norm: 1.0,
        };
        let mut rng = SeedTree::new(11).stream();
        for _ in 0..500 {
            let batch: Vec<_> = (0..32)
                .map(|_| {
                    let a = p.act(&[1.0], &mut rng);
                    let r = -(a[0] - 3.0).powi(2);
                    traj(vec![vec![1.0], vec![1.0]], vec![a], r)
                })
                .collect();
            p = batch_pol_opt(&p, &batch, &cfg).unwrap();
        }
        let m = p.mean(&[1.0])[0];
        assert!((m - 3.0).abs() < 0.2, "mean {m}");
    }
}
