//! Linear stochastic bandit over polynomial features of model parameters,
//! driven by Thompson sampling and fed negated, scaled returns so that it
//! seeks out low-performance regions.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ensemble::ModelParameter;
use crate::error::{Error, Result};

/// Exponent vectors of every monomial in `k` variables with total degree
/// `<= degree`, graded (constant first), lexicographic within a degree.
pub fn monomial_exponents(k: usize, degree: usize) -> Vec<Vec<usize>> {
    fn fill(k: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            if remaining == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(k, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        fill(k, total, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// `C(n, r)`, exact for the sizes used here.
pub fn binomial(n: usize, r: usize) -> usize {
    let r = r.min(n - r.min(n));
    (0..r).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Polynomial feature transform with per-feature standardization statistics
/// frozen at construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFeatureMap {
    input_dim: usize,
    degree: usize,
    exponents: Vec<Vec<usize>>,
    means: Vec<f64>,
    stds: Vec<f64>,
    reward_scale: f64,
}

impl PolynomialFeatureMap {
    /// Unstandardized map (means 0, stds 1).
    pub fn raw(input_dim: usize, degree: usize, reward_scale: f64) -> Self {
        let exponents = monomial_exponents(input_dim, degree);
        let d = exponents.len();
        PolynomialFeatureMap {
            input_dim,
            degree,
            exponents,
            means: vec![0.0; d],
            stds: vec![1.0; d],
            reward_scale,
        }
    }

    /// Map whose standardization statistics are computed over `points`
    /// (population mean and standard deviation). The constant monomial is
    /// left as 1.
    pub fn standardized_on(
        points: &[ModelParameter],
        degree: usize,
        reward_scale: f64,
    ) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("arm grid"))?;
        let mut map = Self::raw(first.dim(), degree, reward_scale);
        let d = map.dim();
        let n = points.len() as f64;
        let raw: Vec<Vec<f64>> = points.iter().map(|p| map.raw_features(p)).collect();
        for j in 0..d {
            if map.exponents[j].iter().all(|&e| e == 0) {
                continue;
            }
            let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = raw.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
            map.means[j] = mean;
            map.stds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(map)
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    pub fn exponents(&self) -> &[Vec<usize>] {
        &self.exponents
    }

    pub fn raw_features(&self, p: &ModelParameter) -> Vec<f64> {
        assert_eq!(p.dim(), self.input_dim, "parameter dimension");
        self.exponents
            .iter()
            .map(|ex| {
                ex.iter()
                    .zip(p.values())
                    .map(|(&e, &x)| x.powi(e as i32))
                    .product()
            })
            .collect()
    }

    /// Standardized features of `p`.
    pub fn features(&self, p: &ModelParameter) -> Vec<f64> {
        self.raw_features(p)
            .into_iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Candidate arms: model parameters with their standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet {
    params: Vec<ModelParameter>,
    features: Vec<Vec<f64>>,
}

/// `resolution` evenly spaced points per dimension on `[lows, highs]`,
/// first dimension varying slowest. A resolution of 1 uses the box center.
pub fn uniform_grid(lows: &[f64], highs: &[f64], resolution: &[usize]) -> Vec<ModelParameter> {
    assert_eq!(lows.len(), highs.len());
    assert_eq!(lows.len(), resolution.len());
    let axes: Vec<Vec<f64>> = lows
        .iter()
        .zip(highs)
        .zip(resolution)
        .map(|((&lo, &hi), &n)| match n {
            0 => vec![],
            1 => vec![0.5 * (lo + hi)],
            _ => (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(ModelParameter).collect()
}

/// Default arm-grid resolution per dimension.
pub fn default_resolution(k: usize) -> usize {
    match k {
        1 => 101,
        2 => 41,
        3 => 15,
        _ => 7,
    }
}

impl ArmSet {
    pub fn new(map: &PolynomialFeatureMap, params: Vec<ModelParameter>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Empty("arm set"));
        }
        let features = params.iter().map(|p| map.features(p)).collect();
        Ok(ArmSet { params, features })
    }

    /// Uniform grid over the box plus a feature map standardized on it.
    pub fn grid(
        lows: &[f64],
        highs: &[f64],
        resolution: &[usize],
        degree: usize,
        reward_scale: f64,
    ) -> Result<(PolynomialFeatureMap, ArmSet)> {
        let params = uniform_grid(lows, highs, resolution);
        let map = PolynomialFeatureMap::standardized_on(&params, degree, reward_scale)?;
        let arms = ArmSet::new(&map, params)?;
        Ok((map, arms))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, i: usize) -> &ModelParameter {
        &self.params[i]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn params(&self) -> &[ModelParameter] {
        &self.params
    }
}

/// Thompson-sampling hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsConfig {
    /// Sub-Gaussian noise scale `R`.
    pub r: f64,
    /// Confidence level `delta`.
    pub delta: f64,
    /// Ridge regularization `lambda`.
    pub lambda: f64,
    /// Assumed bound `S` on the norm of the true parameter.
    pub s: f64,
    /// Replaces the confidence radius when set (0 gives greedy selection).
    pub perturbation_override: Option<f64>,
}

impl Default for TsConfig {
    fn default() -> Self {
        TsConfig {
            r: 5.0,
            delta: 0.1,
            lambda: 0.5,
            s: 1.0,
            perturbation_override: None,
        }
    }
}

impl TsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::config("r", "must be finite and >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1)"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and > 0"));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::config("s", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Regularized least-squares state of a linear Thompson-sampling bandit.
#[derive(Debug, Clone, PartialEq)]
pub struct TsBandit {
    config: TsConfig,
    reward_scale: f64,
    /// `lambda I + sum x x^T`
    design: DMatrix<f64>,
    /// `sum x r`
    target: DVector<f64>,
    t: usize,
}

impl TsBandit {
    pub fn new(dim: usize, reward_scale: f64, config: TsConfig) -> Self {
        TsBandit {
            config,
            reward_scale,
            design: DMatrix::identity(dim, dim) * config.lambda,
            target: DVector::zeros(dim),
            t: 0,
        }
    }

    pub fn for_map(map: &PolynomialFeatureMap, config: TsConfig) -> Self {
        Self::new(map.dim(), map.reward_scale(), config)
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    pub fn observations(&self) -> usize {
        self.t
    }

    pub fn config(&self) -> &TsConfig {
        &self.config
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Feed one observation: the regression target is `-raw_return * reward_scale`.
    pub fn update(&mut self, x: &[f64], raw_return: f64) -> Result<()> {
        if !raw_return.is_finite() {
            return Err(Error::NonFiniteReturn(raw_return));
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "bandit features",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let reward = -raw_return * self.reward_scale;
        let xv = DVector::from_column_slice(x);
        self.design.ger(1.0, &xv, &xv, 1.0);
        self.target.axpy(reward, &xv, 1.0);
        self.t += 1;
        Ok(())
    }

    fn cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::new(self.design.clone()).expect("design matrix is positive definite")
    }

    /// `V^{-1} b`.
    pub fn theta_hat(&self) -> DVector<f64> {
        self.cholesky().solve(&self.target)
    }

    /// Confidence radius
    /// `R sqrt(2 ln(det(V)^{1/2} det(lambda I)^{-1/2} / delta)) + sqrt(lambda) S`.
    pub fn beta(&self) -> f64 {
        let chol = self.cholesky();
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = self.dim() as f64;
        let inner = 0.5 * log_det - 0.5 * d * self.config.lambda.ln() - self.config.delta.ln();
        self.config.r * (2.0 * inner.max(0.0)).sqrt() + self.config.lambda.sqrt() * self.config.s
    }

    pub fn perturbation_scale(&self) -> f64 {
        self.config.perturbation_override.unwrap_or_else(|| self.beta())
    }

    /// `theta_hat + beta * V^{-1/2} eta`, `eta` standard normal, with the
    /// square root taken as the Cholesky factor of `V^{-1}`.
    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let eta = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
        let theta = self.theta_hat();
        let scale = self.perturbation_scale();
        if scale == 0.0 {
            return theta;
        }
        let inv = self.cholesky().inverse();
        let root = Cholesky::new(inv).expect("inverse design matrix is positive definite");
        theta + root.l() * eta * scale
    }

    /// Thompson-sampling arm choice: argmax of `x^T theta_tilde`, ties to the lowest index.
    pub fn select_arm<R: Rng + ?Sized>(&self, arms: &ArmSet, rng: &mut R) -> usize {
        let theta = self.sample_theta(rng);
        argmax_linear(arms, theta.as_slice())
    }

    /// Bandit estimate mapped back to raw-return units.
    pub fn predict_return(&self, map: &PolynomialFeatureMap, p: &ModelParameter) -> f64 {
        self.predict_features(&map.features(p))
    }

    pub fn predict_features(&self, x: &[f64]) -> f64 {
        self.predict_with(&self.theta_hat(), x)
    }

    pub(crate) fn predict_with(&self, theta: &DVector<f64>, x: &[f64]) -> f64 {
        let score: f64 = theta.iter().zip(x).map(|(a, b)| a * b).sum();
        -score / self.reward_scale
    }
}

fn argmax_linear(arms: &ArmSet, theta: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..arms.len() {
        let s: f64 = arms.features(i).iter().zip(theta).map(|(a, b)| a * b).sum();
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn fresh(dim: usize) -> TsBandit {
        TsBandit::new(dim, 1e-3, TsConfig::default())
    }

    /// Solve `(lambda I + X^T X) theta = X^T y` by Gaussian elimination.
    pub(crate) fn ridge_oracle(xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> Vec<f64> {
        let d = xs[0].len();
        let mut a = vec![vec![0.0; d + 1]; d];
        for i in 0..d {
            a[i][i] = lambda;
        }
        for (x, &y) in xs.iter().zip(ys) {
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += x[i] * x[j];
                }
                a[i][d] += x[i] * y;
            }
        }
        for c in 0..d {
            let piv = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..d).map(|i| a[i][d] / a[i][i]).collect()
    }

    #[test]
    fn feature_dimensions() {
        assert_eq!(PolynomialFeatureMap::raw(1, 4, 1e-3).dim(), 5);
        assert_eq!(PolynomialFeatureMap::raw(2, 4, 1e-3).dim(), 15);
        for k in 1..=4 {
            assert_eq!(PolynomialFeatureMap::raw(k, 0, 1e-3).dim(), 1);
        }
    }

    #[test]
    fn feature_dimension_law() {
        // brute-force count of exponent vectors with sum <= degree
        for k in 1..=4usize {
            for degree in 0..=6usize {
                let mut count = 0;
                let total = (degree + 1).pow(k as u32);
                for code in 0..total {
                    let mut c = code;
                    let mut s = 0;
                    for _ in 0..k {
                        s += c % (degree + 1);
                        c /= degree + 1;
                    }
                    if s <= degree {
                        count += 1;
                    }
                }
                assert_eq!(monomial_exponents(k, degree).len(), count);
                assert_eq!(binomial(degree + k, k), count);
            }
        }
    }

    #[test]
    fn monomials_of_a_point() {
        let map = PolynomialFeatureMap::raw(2, 2, 1.0);
        // 1, x^2? no: graded -> [1], [x, y], [x^2, xy, y^2]
        assert_eq!(
            map.raw_features(&ModelParameter(vec![2.0, 3.0])),
            vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]
        );
    }

    #[test]
    fn standardized_grid_features() {
        for (lows, highs, res) in [
            (vec![3.0], vec![9.0], vec![101]),
            (vec![3.0, 1.5], vec![9.0, 2.5], vec![41, 41]),
        ] {
            let (map, arms) = ArmSet::grid(&lows, &highs, &res, 4, 1e-3).unwrap();
            let n = arms.len() as f64;
            for j in 0..map.dim() {
                let col: Vec<f64> = (0..arms.len()).map(|i| arms.features(i)[j]).collect();
                if j == 0 {
                    assert!(col.iter().all(|&v| v == 1.0));
                    continue;
                }
                let m = col.iter().sum::<f64>() / n;
                let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                assert!(m.abs() < 1e-10, "mean {m}");
                assert!((sd - 1.0).abs() < 1e-10, "std {sd}");
            }
        }
    }

    #[test]
    fn grid_order_and_size() {
        let g = uniform_grid(&[0.0, 10.0], &[1.0, 20.0], &[3, 2]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0].values(), &[0.0, 10.0]);
        assert_eq!(g[1].values(), &[0.0, 20.0]);
        assert_eq!(g[5].values(), &[1.0, 20.0]);
    }

    #[test]
    fn fresh_state_estimate_is_zero() {
        let b = fresh(5);
        assert!(b.theta_hat().iter().all(|&v| v == 0.0));
        let map = PolynomialFeatureMap::raw(1, 4, 1e-3);
        assert_eq!(b.predict_return(&map, &ModelParameter(vec![1.7])), 0.0);
    }

    #[test]
    fn single_update_by_hand() {
        let mut b = fresh(3);
        b.update(&[1.0, 0.0, 0.0], -1000.0).unwrap();
        let th = b.theta_hat();
        assert!((th[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(th[1], 0.0);
        assert_eq!(b.observations(), 1);
    }

    #[test]
    fn non_finite_return_is_rejected() {
        let mut b = fresh(2);
        assert!(matches!(b.update(&[1.0, 0.0], f64::NAN), Err(Error::NonFiniteReturn(_))));
        assert!(b.update(&[1.0], 1.0).is_err());
        assert_eq!(b.observations(), 0);
    }

    #[test]
    fn noiseless_recovery() {
        let root = SeedTree::new(21);
        for trial in 0..20 {
            let mut rng = root.child("trial", trial).stream();
            let d = 5;
            let star: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut b = fresh(d);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for _ in 0..200 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: f64 = x.iter().zip(&star).map(|(a, b)| a * b).sum();
                b.update(&x, -y / 1e-3).unwrap();
                xs.push(x);
                ys.push(y);
            }
            let th = b.theta_hat();
            let oracle = ridge_oracle(&xs, &ys, 0.5);
            let to_oracle = th.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let to_star = th.iter().zip(&star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(to_oracle < 1e-10, "{to_oracle}");
            assert!(to_star < 1e-2, "{to_star}");
        }
    }

    #[test]
    fn single_arm_is_always_chosen() {
        let map = PolynomialFeatureMap::raw(1, 4, 1e-3);
        let arms = ArmSet::new(&map, vec![ModelParameter(vec![0.3])]).unwrap();
        let mut b = TsBandit::for_map(&map, TsConfig::default());
        let mut rng = SeedTree::new(0).stream();
        for i in 0..20 {
            assert_eq!(b.select_arm(&arms, &mut rng), 0);
            b.update(arms.features(0), i as f64).unwrap();
        }
    }

    #[test]
    fn zero_perturbation_is_greedy() {
        let (map, arms) = ArmSet::grid(&[-1.0], &[1.0], &[21], 2, 1.0).unwrap();
        let cfg = TsConfig {
            perturbation_override: Some(0.0),
            ..TsConfig::default()
        };
        let mut b = TsBandit::for_map(&map, cfg);
        for i in 0..arms.len() {
            let x = arms.param(i).values()[0];
            b.update(arms.features(i), (x - 0.3).powi(2)).unwrap();
        }
        let th = b.theta_hat();
        let greedy = argmax_linear(&arms, th.as_slice());
        let mut rng = SeedTree::new(1).stream();
        for _ in 0..10 {
            assert_eq!(b.select_arm(&arms, &mut rng), greedy);
        }
        assert!((arms.param(greedy).values()[0] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let map = PolynomialFeatureMap::raw(1, 0, 1.0);
        let arms = ArmSet::new(&map, (0..4).map(|i| ModelParameter(vec![i as f64])).collect())
            .unwrap();
        assert_eq!(argmax_linear(&arms, &[1.0]), 0);
    }

    #[test]
    fn design_stays_positive_definite() {
        let mut rng = SeedTree::new(2).stream();
        let mut b = fresh(4);
        for _ in 0..500 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1e3..1e3)).collect();
            b.update(&x, rng.random_range(-1e4..1e4)).unwrap();
            assert!(Cholesky::new(b.design_matrix().clone()).is_some());
        }
        let ev = b.design_matrix().clone().symmetric_eigenvalues();
        assert!(ev.iter().all(|&e| e >= 0.5 - 1e-6));
    }

    #[test]
    fn perturbation_covariance_is_inverse_design() {
        let mut b = TsBandit::new(2, 1.0, TsConfig { perturbation_override: Some(1.0), ..TsConfig::default() });
        b.update(&[1.0, 0.5], 0.0).unwrap();
        b.update(&[0.0, 2.0], 0.0).unwrap();
        let mut rng = SeedTree::new(3).stream();
        let n = 200_000;
        let mut cov = [[0.0; 2]; 2];
        for _ in 0..n {
            let s = b.sample_theta(&mut rng);
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += s[i] * s[j] / n as f64;
                }
            }
        }
        let inv = b.design_matrix().clone().try_inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((cov[i][j] - inv[(i, j)]).abs() < 0.01, "{i}{j}");
            }
        }
    }

    #[test]
    fn positive_returns_predict_positive() {
        let map = PolynomialFeatureMap::raw(1, 1, 1e-3);
        let mut b = TsBandit::for_map(&map, TsConfig::default());
        let p = ModelParameter(vec![2.0]);
        for _ in 0..10 {
            b.update(&map.features(&p), 5000.0).unwrap();
        }
        assert!(b.predict_return(&map, &p) > 0.0);
    }

    #[test]
    fn fit_matches_ridge_oracle_on_held_out_arms() {
        let (map, arms) = ArmSet::grid(&[0.5], &[2.0], &[101], 4, 1e-3).unwrap();
        let f = |x: f64| 2000.0 - 900.0 * x + 300.0 * x * x;
        let mut b = TsBandit::for_map(&map, TsConfig::default());
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in (0..arms.len()).step_by(2) {
            let ret = f(arms.param(i).values()[0]);
            b.update(arms.features(i), ret).unwrap();
            xs.push(arms.features(i).to_vec());
            ys.push(-ret * 1e-3);
        }
        let oracle = ridge_oracle(&xs, &ys, 0.5);
        for i in (1..arms.len()).step_by(2) {
            let want = -arms.features(i).iter().zip(&oracle).map(|(a, b)| a * b).sum::<f64>() / 1e-3;
            let got = b.predict_return(&map, arms.param(i));
            assert!((got - want).abs() < 1e-2, "{got} vs {want}");
        }
    }

    #[test]
    fn ranking_does_not_depend_on_reward_scale() {
        let (map, arms) = ArmSet::grid(&[3.0], &[9.0], &[101], 4, 1e-3).unwrap();
        let (map1, _) = ArmSet::grid(&[3.0], &[9.0], &[101], 4, 1.0).unwrap();
        let mut rng = SeedTree::new(4).stream();
        let mut a = TsBandit::for_map(&map, TsConfig::default());
        let mut b = TsBandit::for_map(&map1, TsConfig::default());
        for _ in 0..40 {
            let i = rng.random_range(0..arms.len());
            let x = arms.param(i).values()[0];
            let ret = 3000.0 - 200.0 * (x - 5.0).powi(2) + rng.random_range(-50.0..50.0);
            a.update(arms.features(i), ret).unwrap();
            b.update(arms.features(i), ret).unwrap();
        }
        let rank = |bandit: &TsBandit, m: &PolynomialFeatureMap| {
            let preds: Vec<f64> = arms.params().iter().map(|p| bandit.predict_return(m, p)).collect();
            let mut idx: Vec<usize> = (0..preds.len()).collect();
            idx.sort_by(|&i, &j| preds[i].total_cmp(&preds[j]));
            idx
        };
        let ra = rank(&a, &map);
        let rb = rank(&b, &map1);
        assert_eq!(ra, rb);
    }

    #[test]
    fn best_arm_dominates_late_pulls_noiseless() {
        let map = PolynomialFeatureMap::raw(1, 1, 1.0);
        let mut hits = Vec::new();
        for seed in 0..20u64 {
            let root = SeedTree::new(seed);
            let mut setup = root.child("setup", 0).stream();
            let params = uniform_grid(&[-1.0], &[1.0], &[50]);
            let theta_star: Vec<f64> = (0..2).map(|_| setup.random_range(-1.0..1.0)).collect();
            let arms = ArmSet::new(&map, params).unwrap();
            let score = |i: usize| -> f64 {
                arms.features(i).iter().zip(&theta_star).map(|(a, b)| a * b).sum()
            };
            let best = argmax_linear(&arms, &theta_star);
            // Noiseless rewards are 0-sub-Gaussian.
            let config = TsConfig {
                r: 0.0,
                ..TsConfig::default()
            };
            let mut b = TsBandit::new(2, 1.0, config);
            let mut rng = root.child("bandit", 0).stream();
            let mut count = 0;
            for t in 0..300 {
                let i = b.select_arm(&arms, &mut rng);
                b.update(arms.features(i), -score(i)).unwrap();
                if t >= 200 && i == best {
                    count += 1;
                }
            }
            hits.push(count);
        }
        assert!(hits.iter().all(|&h| h >= 80), "{hits:?}");
    }

    #[test]
    fn pseudo_regret_grows_sublinearly() {
        let (map, arms) = ArmSet::grid(&[3.0], &[9.0], &[101], 4, 1e-3).unwrap();
        let f: Vec<f64> = arms
            .params()
            .iter()
            .map(|p| 3000.0 - 10000.0 * (-(p.values()[0] - 6.0).powi(2) / 2.0).exp())
            .collect();
        let f_min = f.iter().copied().fold(f64::INFINITY, f64::min);
        let config = TsConfig {
            r: 0.1,
            ..TsConfig::default()
        };
        for seed in 0..20u64 {
            let root = SeedTree::new(seed);
            let mut rng = root.child("bandit", 0).stream();
            let mut noise = root.child("noise", 0).stream();
            let mut b = TsBandit::for_map(&map, config);
            let mut regret = 0.0;
            let mut at_100 = 0.0;
            for t in 0..500 {
                let i = b.select_arm(&arms, &mut rng);
                let eta: f64 = StandardNormal.sample(&mut noise);
                b.update(arms.features(i), f[i] + 100.0 * eta).unwrap();
                regret += f[i] - f_min;
                if t == 99 {
                    at_100 = regret;
                }
            }
            assert!(regret / 500.0 < at_100 / 100.0, "seed {seed}");
        }
    }
}
