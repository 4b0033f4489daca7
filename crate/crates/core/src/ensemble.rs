//! Model-parameter space and the truncated-normal source distribution.

use rand::Rng;

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal quantile (Wichura's AS241, about 1e-16 relative accuracy).
///
/// Returns `-inf`/`+inf` at 0 and 1.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Normal distribution with parameters `(mu, sigma)` restricted to `[low, high]`
/// and renormalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormalSpec {
    mu: f64,
    sigma: f64,
    low: f64,
    high: f64,
}

impl TruncatedNormalSpec {
    pub fn new(mu: f64, sigma: f64, low: f64, high: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && low.is_finite() && high.is_finite()) {
            return Err(Error::config("mu/sigma/low/high", "must be finite"));
        }
        if sigma <= 0.0 {
            return Err(Error::config("sigma", format!("must be > 0, got {sigma}")));
        }
        if low >= high {
            return Err(Error::config(
                "low",
                format!("must be below high ({low} >= {high})"),
            ));
        }
        Ok(TruncatedNormalSpec {
            mu,
            sigma,
            low,
            high,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    fn standardized_bounds(&self) -> (f64, f64) {
        (
            (self.low - self.mu) / self.sigma,
            (self.high - self.mu) / self.sigma,
        )
    }

    /// Normal mass on `[low, high]`, computed on whichever side of the mean
    /// keeps the tail probabilities small.
    pub fn mass(&self) -> f64 {
        let (a, b) = self.standardized_bounds();
        if a >= 0.0 {
            0.5 * (libm::erfc(a / SQRT_2) - libm::erfc(b / SQRT_2))
        } else if b <= 0.0 {
            0.5 * (libm::erfc(-b / SQRT_2) - libm::erfc(-a / SQRT_2))
        } else {
            1.0 - 0.5 * libm::erfc(-a / SQRT_2) - 0.5 * libm::erfc(b / SQRT_2)
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < self.low || x > self.high {
            return 0.0;
        }
        std_normal_pdf((x - self.mu) / self.sigma) / (self.sigma * self.mass())
    }

    pub fn mean(&self) -> f64 {
        let (a, b) = self.standardized_bounds();
        let z = self.mass();
        self.mu + self.sigma * (std_normal_pdf(a) - std_normal_pdf(b)) / z
    }

    pub fn variance(&self) -> f64 {
        let (a, b) = self.standardized_bounds();
        let z = self.mass();
        let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
        let shift = (pa - pb) / z;
        self.sigma * self.sigma * (1.0 + (a * pa - b * pb) / z - shift * shift)
    }

    /// Inverse-CDF draw. Exactly one uniform variate is consumed per call.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    /// Quantile of the truncated law at `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let (a, b) = self.standardized_bounds();
        // Work in the frame where the interval sits mostly below the mean so
        // the CDF values being differenced are not close to 1.
        let flip = a + b > 0.0;
        let (lo, hi) = if flip { (-b, -a) } else { (a, b) };
        let plo = std_normal_cdf(lo);
        let phi = std_normal_cdf(hi);
        let p = plo + u * (phi - plo);
        let mut z = if p <= 0.0 {
            lo
        } else {
            std_normal_quantile(p).clamp(lo, hi)
        };
        if !z.is_finite() {
            z = lo;
        }
        if flip {
            z = -z;
        }
        (self.mu + self.sigma * z).clamp(self.low, self.high)
    }
}

/// A point in the ensemble parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameter(pub Vec<f64>);

impl ModelParameter {
    pub fn new(values: Vec<f64>) -> Self {
        ModelParameter(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for ModelParameter {
    fn from(v: Vec<f64>) -> Self {
        ModelParameter(v)
    }
}

/// Product of independent truncated normals, one per named dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDistribution {
    dims: Vec<(String, TruncatedNormalSpec)>,
}

impl SourceDistribution {
    pub fn new(dims: Vec<(String, TruncatedNormalSpec)>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::config("dist", "at least one dimension is required"));
        }
        Ok(SourceDistribution { dims })
    }

    pub fn single(name: &str, spec: TruncatedNormalSpec) -> Self {
        SourceDistribution {
            dims: vec![(name.to_string(), spec)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[(String, TruncatedNormalSpec)] {
        &self.dims
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|(n, _)| n.as_str())
    }

    pub fn lows(&self) -> Vec<f64> {
        self.dims.iter().map(|(_, s)| s.low).collect()
    }

    pub fn highs(&self) -> Vec<f64> {
        self.dims.iter().map(|(_, s)| s.high).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParameter {
        ModelParameter(self.dims.iter().map(|(_, s)| s.sample(rng)).collect())
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<ModelParameter> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Joint density (product of marginals).
    pub fn density(&self, p: &ModelParameter) -> f64 {
        self.dims
            .iter()
            .zip(p.values())
            .map(|((_, s), &x)| s.density(x))
            .product()
    }

    pub fn contains(&self, p: &ModelParameter) -> bool {
        p.dim() == self.dim()
            && self
                .dims
                .iter()
                .zip(p.values())
                .all(|((_, s), &x)| x >= s.low && x <= s.high)
    }
}

/// Source-distribution specs for the Hopper task (mass, friction, damping, inertia).
pub fn hopper_specs() -> Vec<(&'static str, TruncatedNormalSpec)> {
    vec![
        ("mass", TruncatedNormalSpec { mu: 6.0, sigma: 1.5, low: 3.0, high: 9.0 }),
        ("friction", TruncatedNormalSpec { mu: 2.0, sigma: 0.25, low: 1.5, high: 2.5 }),
        ("damping", TruncatedNormalSpec { mu: 2.5, sigma: 2.0, low: 1.0, high: 4.0 }),
        ("inertia", TruncatedNormalSpec { mu: 1.0, sigma: 0.25, low: 0.5, high: 1.5 }),
    ]
}

/// Source-distribution specs for the Half-Cheetah task.
pub fn half_cheetah_specs() -> Vec<(&'static str, TruncatedNormalSpec)> {
    vec![
        ("mass", TruncatedNormalSpec { mu: 6.0, sigma: 1.5, low: 3.0, high: 9.0 }),
        ("friction", TruncatedNormalSpec { mu: 0.5, sigma: 0.1, low: 0.3, high: 0.7 }),
        ("damping", TruncatedNormalSpec { mu: 1.5, sigma: 0.5, low: 0.5, high: 2.5 }),
        ("inertia", TruncatedNormalSpec { mu: 0.125, sigma: 0.04, low: 0.05, high: 0.2 }),
    ]
}
