//! Experiment configuration.
//!
//! Flat `key = value` text, one key per line, grouped under `[section]`
//! headers. Keys before the first header (or under `[experiment]`) are run
//! settings. Each `[dist.NAME]` block adds one source-distribution dimension,
//! in file order. `#` starts a comment.
//!
//! ```text
//! seed = 7
//! generator = effacts
//! n_iters = 150
//! n_c = 15
//! n_b = 15
//! epsilon = 0.1
//!
//! [env]
//! kind = damped_mass
//!
//! [dist.mass]
//! mu = 1.25
//! sigma = 0.5
//! low = 0.5
//! high = 2.0
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::bandit::{default_resolution, TsConfig};
use crate::ensemble::{SourceDistribution, TruncatedNormalSpec};
use crate::env::{DampedMassControl, EnvironmentModel, Surface, SyntheticReturnEnv};
use crate::error::{Error, Result};
use crate::policy::{Architecture, Baseline, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Epopt,
    Effacts,
}

impl GeneratorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorKind::Epopt => "epopt",
            GeneratorKind::Effacts => "effacts",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    DampedMass(DampedMassControl),
    Synthetic(SyntheticReturnEnv),
}

impl EnvSpec {
    pub fn model(&self) -> &dyn EnvironmentModel {
        match self {
            EnvSpec::DampedMass(e) => e,
            EnvSpec::Synthetic(e) => e,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub architecture: Architecture,
    pub init_scale: f64,
    pub log_std_init: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            architecture: Architecture::Linear,
            init_scale: 0.1,
            log_std_init: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditSpec {
    pub ts: TsConfig,
    pub degree: usize,
    pub reward_scale: f64,
    /// Arm-grid points per dimension; `None` uses the default for the dimension.
    pub grid: Option<Vec<usize>>,
}

impl Default for BanditSpec {
    fn default() -> Self {
        BanditSpec {
            ts: TsConfig::default(),
            degree: 4,
            reward_scale: 1e-3,
            grid: None,
        }
    }
}

impl BanditSpec {
    pub fn resolution(&self, k: usize) -> Vec<usize> {
        resolve_grid(&self.grid, k, default_resolution(k))
    }
}

fn resolve_grid(grid: &Option<Vec<usize>>, k: usize, default: usize) -> Vec<usize> {
    match grid {
        None => vec![default; k],
        Some(g) if g.len() == 1 => vec![g[0]; k],
        Some(g) => g.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    /// Ground-truth surface points per dimension.
    pub surface_points: Option<Vec<usize>>,
    pub n_eval: usize,
    pub measure_start: usize,
    /// Inclusive; `None` runs to the last iteration.
    pub measure_end: Option<usize>,
    pub measure_every: usize,
    pub sweep_points: Option<Vec<usize>>,
    /// Iteration whose bandit fit is dumped; `None` picks the last measured one.
    pub fit_iteration: Option<usize>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            surface_points: None,
            n_eval: 100,
            measure_start: 5,
            measure_end: None,
            measure_every: 5,
            sweep_points: None,
            fit_iteration: None,
        }
    }
}

impl EvalSpec {
    pub fn surface_resolution(&self, k: usize) -> Vec<usize> {
        resolve_grid(&self.surface_points, k, default_resolution(k))
    }

    pub fn sweep_resolution(&self, k: usize) -> Vec<usize> {
        resolve_grid(&self.sweep_points, k, 21)
    }

    /// Whether generator iteration `i` (1-based) is in the measurement window.
    pub fn is_measured(&self, i: usize, n_iters: usize) -> bool {
        let end = self.measure_end.unwrap_or(n_iters).min(n_iters);
        i >= self.measure_start
            && i <= end
            && i >= 1
            && (i - self.measure_start).is_multiple_of(self.measure_every.max(1))
    }
}

/// Every run setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub generator: GeneratorKind,
    pub n_iters: usize,
    /// EPOpt batch size `N`.
    pub n: usize,
    /// EffAcTS output trajectories `N_C`.
    pub n_c: usize,
    /// EffAcTS bandit learning trajectories `N_B`.
    pub n_b: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub warm_start_timesteps: usize,
    /// Worker threads; 0 uses the number of processors.
    pub workers: usize,
    pub output_dir: Option<String>,
    pub env: EnvSpec,
    pub dist: SourceDistribution,
    pub policy: PolicySpec,
    pub optimizer: OptimizerConfig,
    pub bandit: BanditSpec,
    pub eval: EvalSpec,
}

impl ExperimentConfig {
    /// Damped-mass defaults with a one-dimensional mass ensemble on `[0.5, 2.0]`.
    pub fn damped_mass_default() -> Self {
        ExperimentConfig {
            seed: 0,
            generator: GeneratorKind::Effacts,
            n_iters: 150,
            n: 240,
            n_c: 15,
            n_b: 15,
            epsilon: 0.1,
            gamma: 0.99,
            horizon: 100,
            warm_start_timesteps: 2048,
            workers: 0,
            output_dir: None,
            env: EnvSpec::DampedMass(DampedMassControl::default()),
            dist: SourceDistribution::single(
                "mass",
                TruncatedNormalSpec::new(1.25, 0.5, 0.5, 2.0).expect("valid"),
            ),
            policy: PolicySpec::default(),
            optimizer: OptimizerConfig::default(),
            bandit: BanditSpec::default(),
            eval: EvalSpec::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let cfg = Self::from_document(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config(
                "epsilon",
                format!("must lie in (0, 1], got {}", self.epsilon),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(
                "gamma",
                format!("must lie in [0, 1], got {}", self.gamma),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        match self.generator {
            GeneratorKind::Epopt if self.n == 0 => {
                return Err(Error::config("n", "must be >= 1 for the epopt generator"))
            }
            GeneratorKind::Effacts if self.n_c == 0 => {
                return Err(Error::config("n_c", "must be >= 1 for the effacts generator"))
            }
            _ => {}
        }
        let env = self.env.model();
        if self.dist.dim() < env.parameter_dim() {
            return Err(Error::config(
                "dist",
                format!(
                    "environment needs {} parameter dimensions, {} configured",
                    env.parameter_dim(),
                    self.dist.dim()
                ),
            ));
        }
        self.optimizer
            .validate()
            .map_err(|e| prefix_key("optimizer", e))?;
        self.bandit.ts.validate().map_err(|e| prefix_key("bandit", e))?;
        if !(self.bandit.reward_scale > 0.0 && self.bandit.reward_scale.is_finite()) {
            return Err(Error::config("bandit.reward_scale", "must be finite and > 0"));
        }
        let k = self.dist.dim();
        for (key, grid) in [
            ("bandit.grid", &self.bandit.grid),
            ("eval.surface_points", &self.eval.surface_points),
            ("eval.sweep_points", &self.eval.sweep_points),
        ] {
            if let Some(g) = grid {
                if g.is_empty() || g.contains(&0) || (g.len() != 1 && g.len() != k) {
                    return Err(Error::config(
                        key,
                        format!("needs one positive count or one per dimension ({k})"),
                    ));
                }
            }
        }
        if self.eval.n_eval == 0 {
            return Err(Error::config("eval.n_eval", "must be >= 1"));
        }
        if self.eval.measure_every == 0 {
            return Err(Error::config("eval.measure_every", "must be >= 1"));
        }
        if let EnvSpec::DampedMass(d) = &self.env {
            if !(d.dt > 0.0) {
                return Err(Error::config("env.dt", "must be > 0"));
            }
            if !(d.force_limit > 0.0) {
                return Err(Error::config("env.force_limit", "must be > 0"));
            }
        }
        Ok(())
    }

    fn from_document(doc: Document) -> Result<Self> {
        let mut cfg = ExperimentConfig::damped_mass_default();
        let mut dist_dims = Vec::new();
        let mut saw_env = false;
        for (section, mut table) in doc.sections {
            match section.as_str() {
                "" | "experiment" => {
                    table.take_u64("seed", &mut cfg.seed)?;
                    if let Some(g) = table.take("generator") {
                        cfg.generator = match g.as_str() {
                            "epopt" => GeneratorKind::Epopt,
                            "effacts" => GeneratorKind::Effacts,
                            other => {
                                return Err(Error::config(
                                    "generator",
                                    format!("expected epopt or effacts, got `{other}`"),
                                ))
                            }
                        };
                    }
                    table.take_usize("n_iters", &mut cfg.n_iters)?;
                    table.take_usize("n", &mut cfg.n)?;
                    table.take_usize("n_c", &mut cfg.n_c)?;
                    table.take_usize("n_b", &mut cfg.n_b)?;
                    table.take_f64("epsilon", &mut cfg.epsilon)?;
                    table.take_f64("gamma", &mut cfg.gamma)?;
                    table.take_usize("horizon", &mut cfg.horizon)?;
                    table.take_usize("warm_start_timesteps", &mut cfg.warm_start_timesteps)?;
                    table.take_usize("workers", &mut cfg.workers)?;
                    if let Some(dir) = table.take("output_dir") {
                        cfg.output_dir = Some(dir);
                    }
                }
                "env" => {
                    saw_env = true;
                    cfg.env = parse_env(&mut table)?;
                }
                "policy" => {
                    let p = &mut cfg.policy;
                    if let Some(a) = table.take("architecture") {
                        p.architecture = match a.as_str() {
                            "linear" => Architecture::Linear,
                            "tanh" => Architecture::Tanh {
                                hidden: vec![64, 64],
                            },
                            other => {
                                return Err(Error::config(
                                    "policy.architecture",
                                    format!("expected linear or tanh, got `{other}`"),
                                ))
                            }
                        };
                    }
                    if let Some(h) = table.take_list_usize("hidden")? {
                        match &mut p.architecture {
                            Architecture::Tanh { hidden } => *hidden = h,
                            Architecture::Linear if h.is_empty() => {}
                            Architecture::Linear => {
                                return Err(Error::config(
                                    "policy.hidden",
                                    "only valid with architecture = tanh",
                                ))
                            }
                        }
                    }
                    table.take_f64("init_scale", &mut p.init_scale)?;
                    table.take_f64("log_std_init", &mut p.log_std_init)?;
                }
                "optimizer" => {
                    let o = &mut cfg.optimizer;
                    table.take_f64("learning_rate", &mut o.learning_rate)?;
                    table.take_f64("max_grad_norm", &mut o.max_grad_norm)?;
                    if let Some(b) = table.take("baseline") {
                        o.baseline = match b.as_str() {
                            "batch_mean" => Baseline::BatchMeanReturn,
                            "none" => Baseline::None,
                            other => {
                                return Err(Error::config(
                                    "optimizer.baseline",
                                    format!("expected batch_mean or none, got `{other}`"),
                                ))
                            }
                        };
                    }
                }
                "bandit" => {
                    let b = &mut cfg.bandit;
                    table.take_f64("r", &mut b.ts.r)?;
                    table.take_f64("delta", &mut b.ts.delta)?;
                    table.take_f64("lambda", &mut b.ts.lambda)?;
                    table.take_f64("s", &mut b.ts.s)?;
                    if let Some(v) = table.take_parsed::<f64>("perturbation")? {
                        b.ts.perturbation_override = Some(v);
                    }
                    table.take_usize("degree", &mut b.degree)?;
                    table.take_f64("reward_scale", &mut b.reward_scale)?;
                    if let Some(g) = table.take_list_usize("grid")? {
                        b.grid = Some(g);
                    }
                }
                "eval" => {
                    let e = &mut cfg.eval;
                    if let Some(g) = table.take_list_usize("surface_points")? {
                        e.surface_points = Some(g);
                    }
                    table.take_usize("n_eval", &mut e.n_eval)?;
                    table.take_usize("measure_start", &mut e.measure_start)?;
                    if let Some(v) = table.take_parsed::<usize>("measure_end")? {
                        e.measure_end = Some(v);
                    }
                    table.take_usize("measure_every", &mut e.measure_every)?;
                    if let Some(g) = table.take_list_usize("sweep_points")? {
                        e.sweep_points = Some(g);
                    }
                    if let Some(v) = table.take_parsed::<usize>("fit_iteration")? {
                        e.fit_iteration = Some(v);
                    }
                }
                s if s.starts_with("dist.") => {
                    let name = &s["dist.".len()..];
                    let mut get = |k: &str| -> Result<f64> {
                        table
                            .take_parsed::<f64>(k)?
                            .ok_or_else(|| Error::config(format!("{section}.{k}"), "missing"))
                    };
                    let (mu, sigma, low, high) = (get("mu")?, get("sigma")?, get("low")?, get("high")?);
                    let spec = TruncatedNormalSpec::new(mu, sigma, low, high)
                        .map_err(|e| prefix_key(&section, e))?;
                    dist_dims.push((name.to_string(), spec));
                }
                other => {
                    return Err(Error::config(other, "unknown section"));
                }
            }
            table.finish()?;
        }
        if !dist_dims.is_empty() {
            cfg.dist = SourceDistribution::new(dist_dims)?;
        }
        if !saw_env {
            cfg.env = EnvSpec::DampedMass(DampedMassControl::default());
        }
        Ok(cfg)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.render(true)
    }

    /// Canonical text without `workers` and `output_dir`, which never
    /// change results.
    pub fn results_text(&self) -> String {
        self.render(false)
    }

    fn render(&self, execution: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "generator = {}", self.generator.as_str());
        let _ = writeln!(s, "n_iters = {}", self.n_iters);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "n_c = {}", self.n_c);
        let _ = writeln!(s, "n_b = {}", self.n_b);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "warm_start_timesteps = {}", self.warm_start_timesteps);
        if execution {
            let _ = writeln!(s, "workers = {}", self.workers);
            if let Some(d) = &self.output_dir {
                let _ = writeln!(s, "output_dir = {d}");
            }
        }
        s.push_str("\n[env]\n");
        match &self.env {
            EnvSpec::DampedMass(d) => {
                s.push_str("kind = damped_mass\n");
                let _ = writeln!(s, "dt = {}", d.dt);
                let _ = writeln!(s, "mass = {}", d.default_mass);
                let _ = writeln!(s, "damping = {}", d.default_damping);
                let _ = writeln!(s, "force_limit = {}", d.force_limit);
                let _ = writeln!(s, "start_position = {}", d.start_position);
                let _ = writeln!(s, "start_velocity = {}", d.start_velocity);
                let _ = writeln!(s, "start_noise = {}", d.start_noise);
            }
            EnvSpec::Synthetic(e) => {
                s.push_str("kind = synthetic\n");
                let _ = writeln!(s, "noise = {}", e.noise_std);
                match &e.surface {
                    Surface::Linear { weights, offset } => {
                        s.push_str("surface = linear\n");
                        let _ = writeln!(s, "weights = {}", join(weights));
                        let _ = writeln!(s, "offset = {offset}");
                    }
                    Surface::Quadratic {
                        center,
                        curvature,
                        offset,
                    } => {
                        s.push_str("surface = quadratic\n");
                        let _ = writeln!(s, "center = {}", join(center));
                        let _ = writeln!(s, "curvature = {curvature}");
                        let _ = writeln!(s, "offset = {offset}");
                    }
                    Surface::Dip {
                        center,
                        width,
                        depth,
                        offset,
                    } => {
                        s.push_str("surface = dip\n");
                        let _ = writeln!(s, "center = {}", join(center));
                        let _ = writeln!(s, "width = {width}");
                        let _ = writeln!(s, "depth = {depth}");
                        let _ = writeln!(s, "offset = {offset}");
                    }
                    Surface::Bimodal {
                        centers,
                        width,
                        depths,
                        offset,
                    } => {
                        s.push_str("surface = bimodal\n");
                        let _ = writeln!(s, "center = {}", join(&centers[0]));
                        let _ = writeln!(s, "center2 = {}", join(&centers[1]));
                        let _ = writeln!(s, "width = {width}");
                        let _ = writeln!(s, "depth = {}", depths[0]);
                        let _ = writeln!(s, "depth2 = {}", depths[1]);
                        let _ = writeln!(s, "offset = {offset}");
                    }
                }
            }
        }
        for (name, spec) in self.dist.dims() {
            let _ = writeln!(
                s,
                "\n[dist.{name}]\nmu = {}\nsigma = {}\nlow = {}\nhigh = {}",
                spec.mu(),
                spec.sigma(),
                spec.low(),
                spec.high()
            );
        }
        s.push_str("\n[policy]\n");
        match &self.policy.architecture {
            Architecture::Linear => s.push_str("architecture = linear\n"),
            Architecture::Tanh { hidden } => {
                let _ = writeln!(s, "architecture = tanh\nhidden = {}", join(hidden));
            }
        }
        let _ = writeln!(s, "init_scale = {}", self.policy.init_scale);
        let _ = writeln!(s, "log_std_init = {}", self.policy.log_std_init);
        let o = &self.optimizer;
        let _ = writeln!(
            s,
            "\n[optimizer]\nlearning_rate = {}\nbaseline = {}\nmax_grad_norm = {}",
            o.learning_rate,
            match o.baseline {
                Baseline::BatchMeanReturn => "batch_mean",
                Baseline::None => "none",
            },
            o.max_grad_norm
        );
        let b = &self.bandit;
        let _ = writeln!(
            s,
            "\n[bandit]\nr = {}\ndelta = {}\nlambda = {}\ns = {}\ndegree = {}\nreward_scale = {}",
            b.ts.r, b.ts.delta, b.ts.lambda, b.ts.s, b.degree, b.reward_scale
        );
        if let Some(p) = b.ts.perturbation_override {
            let _ = writeln!(s, "perturbation = {p}");
        }
        if let Some(g) = &b.grid {
            let _ = writeln!(s, "grid = {}", join(g));
        }
        let e = &self.eval;
        s.push_str("\n[eval]\n");
        if let Some(g) = &e.surface_points {
            let _ = writeln!(s, "surface_points = {}", join(g));
        }
        let _ = writeln!(s, "n_eval = {}", e.n_eval);
        let _ = writeln!(s, "measure_start = {}", e.measure_start);
        if let Some(v) = e.measure_end {
            let _ = writeln!(s, "measure_end = {v}");
        }
        let _ = writeln!(s, "measure_every = {}", e.measure_every);
        if let Some(g) = &e.sweep_points {
            let _ = writeln!(s, "sweep_points = {}", join(g));
        }
        if let Some(v) = e.fit_iteration {
            let _ = writeln!(s, "fit_iteration = {v}");
        }
        s
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn prefix_key(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidConfig { key, reason } => Error::InvalidConfig {
            key: format!("{section}.{key}"),
            reason,
        },
        other => other,
    }
}

fn parse_env(table: &mut Table) -> Result<EnvSpec> {
    let kind = table.take("kind").unwrap_or_else(|| "damped_mass".to_string());
    match kind.as_str() {
        "damped_mass" => {
            let mut d = DampedMassControl::default();
            table.take_f64("dt", &mut d.dt)?;
            table.take_f64("mass", &mut d.default_mass)?;
            table.take_f64("damping", &mut d.default_damping)?;
            table.take_f64("force_limit", &mut d.force_limit)?;
            table.take_f64("start_position", &mut d.start_position)?;
            table.take_f64("start_velocity", &mut d.start_velocity)?;
            table.take_f64("start_noise", &mut d.start_noise)?;
            Ok(EnvSpec::DampedMass(d))
        }
        "synthetic" => {
            let mut noise = 0.0;
            table.take_f64("noise", &mut noise)?;
            if !(noise >= 0.0) {
                return Err(Error::config("env.noise", "must be >= 0"));
            }
            let mut offset = 0.0;
            table.take_f64("offset", &mut offset)?;
            let shape = table.take("surface").unwrap_or_else(|| "quadratic".to_string());
            let center = table.take_list_f64("center")?;
            let need_center = || {
                center
                    .clone()
                    .ok_or_else(|| Error::config("env.center", "missing"))
            };
            let surface = match shape.as_str() {
                "linear" => Surface::Linear {
                    weights: table
                        .take_list_f64("weights")?
                        .ok_or_else(|| Error::config("env.weights", "missing"))?,
                    offset,
                },
                "quadratic" => {
                    let mut curvature = 1.0;
                    table.take_f64("curvature", &mut curvature)?;
                    Surface::Quadratic {
                        center: need_center()?,
                        curvature,
                        offset,
                    }
                }
                "dip" => {
                    let (mut width, mut depth) = (1.0, 1.0);
                    table.take_f64("width", &mut width)?;
                    table.take_f64("depth", &mut depth)?;
                    Surface::Dip {
                        center: need_center()?,
                        width,
                        depth,
                        offset,
                    }
                }
                "bimodal" => {
                    let (mut width, mut d1, mut d2) = (1.0, 1.0, 1.0);
                    table.take_f64("width", &mut width)?;
                    table.take_f64("depth", &mut d1)?;
                    table.take_f64("depth2", &mut d2)?;
                    let c2 = table
                        .take_list_f64("center2")?
                        .ok_or_else(|| Error::config("env.center2", "missing"))?;
                    Surface::Bimodal {
                        centers: [need_center()?, c2],
                        width,
                        depths: [d1, d2],
                        offset,
                    }
                }
                other => {
                    return Err(Error::config(
                        "env.surface",
                        format!("expected linear, quadratic, dip or bimodal, got `{other}`"),
                    ))
                }
            };
            if let Surface::Dip { width, .. } | Surface::Bimodal { width, .. } = &surface {
                if !(*width > 0.0) {
                    return Err(Error::config("env.width", "must be > 0"));
                }
            }
            Ok(EnvSpec::Synthetic(SyntheticReturnEnv {
                surface,
                noise_std: noise,
            }))
        }
        other => Err(Error::config(
            "env.kind",
            format!("expected damped_mass or synthetic, got `{other}`"),
        )),
    }
}

/// Parsed key/value sections, in file order.
struct Document {
    sections: Vec<(String, Table)>,
}

struct Table {
    section: String,
    entries: BTreeMap<String, String>,
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, Table)> = vec![(String::new(), Table::new(""))];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        Error::config(format!("line {}", lineno + 1), "unterminated section header")
                    })?
                    .trim()
                    .to_string();
                if sections.iter().any(|(n, _)| *n == name) {
                    return Err(Error::config(name, "duplicate section"));
                }
                sections.push((name.clone(), Table::new(&name)));
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            let (key, value) = (key.trim(), value.trim());
            let table = &mut sections.last_mut().expect("nonempty").1;
            if table
                .entries
                .insert(key.to_string(), value.to_string())
                .is_some()
            {
                return Err(Error::config(table.qualified(key), "duplicate key"));
            }
        }
        Ok(Document { sections })
    }
}

impl Table {
    fn new(section: &str) -> Self {
        Table {
            section: section.to_string(),
            entries: BTreeMap::new(),
        }
    }

    fn qualified(&self, key: &str) -> String {
        if self.section.is_empty() || self.section == "experiment" {
            key.to_string()
        } else {
            format!("{}.{key}", self.section)
        }
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::config(self.qualified(key), format!("cannot parse `{v}`"))
            }),
        }
    }

    fn take_f64(&mut self, key: &str, out: &mut f64) -> Result<()> {
        if let Some(v) = self.take_parsed::<f64>(key)? {
            if !v.is_finite() {
                return Err(Error::config(self.qualified(key), "must be finite"));
            }
            *out = v;
        }
        Ok(())
    }

    fn take_usize(&mut self, key: &str, out: &mut usize) -> Result<()> {
        if let Some(v) = self.take_parsed::<usize>(key)? {
            *out = v;
        }
        Ok(())
    }

    fn take_u64(&mut self, key: &str, out: &mut u64) -> Result<()> {
        if let Some(v) = self.take_parsed::<u64>(key)? {
            *out = v;
        }
        Ok(())
    }

    fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.entries.remove(key) else {
            return Ok(None);
        };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|s| {
                s.trim().parse::<T>().map_err(|_| {
                    Error::config(self.qualified(key), format!("cannot parse `{}`", s.trim()))
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn take_list_f64(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        self.take_list(key)
    }

    fn take_list_usize(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        self.take_list(key)
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            return Err(Error::config(self.qualified(key), "unknown key"));
        }
        Ok(())
    }
}
