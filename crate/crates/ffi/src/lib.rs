//! C ABI over the `effacts` library.
//!
//! Objects are opaque heap handles created by `*_new`/`*_from_*` functions
//! and released with the matching `*_free`. Every fallible call returns an
//! [`EffactsStatus`]; on failure a message for the calling thread is
//! available from [`effacts_last_error`] until the next failing call.
//! Panics never cross the boundary and are reported as `EFFACTS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use effacts::bandit::{ArmSet, PolynomialFeatureMap, TsBandit, TsConfig};
use effacts::cli::write_train_outputs;
use effacts::config::ExperimentConfig;
use effacts::ensemble::{ModelParameter, SourceDistribution, TruncatedNormalSpec};
use effacts::rng::{SeedTree, Stream};
use effacts::sampler::{bottom_count, bottom_indices, train, RunStatus, TrainReport};
use effacts::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffactsStatus {
    Ok = 0,
    InvalidConfig = 1,
    DimensionMismatch = 2,
    RolloutDiverged = 3,
    NonFiniteReturn = 4,
    Empty = 5,
    Io = 6,
    Format = 7,
    NullPointer = 8,
    InvalidArgument = 9,
    Panic = 10,
}

/// Trajectory counts summed over generator iterations.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EffactsLedgerTotals {
    pub warm_start: usize,
    pub bandit: usize,
    pub selected: usize,
    pub discarded: usize,
    pub collected: usize,
    pub timesteps: usize,
}

pub struct EffactsConfig(ExperimentConfig);

pub struct EffactsReport(TrainReport);

pub struct EffactsDistribution(SourceDistribution);

/// Thompson-sampling bandit over a uniform arm grid, with its own random stream.
pub struct EffactsBandit {
    map: PolynomialFeatureMap,
    arms: ArmSet,
    bandit: TsBandit,
    rng: Stream,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> EffactsStatus {
    match err {
        Error::InvalidConfig { .. } => EffactsStatus::InvalidConfig,
        Error::RolloutDiverged { .. } => EffactsStatus::RolloutDiverged,
        Error::DimensionMismatch { .. } => EffactsStatus::DimensionMismatch,
        Error::NonFiniteReturn(_) => EffactsStatus::NonFiniteReturn,
        Error::Empty(_) => EffactsStatus::Empty,
        Error::Io { .. } => EffactsStatus::Io,
        Error::Format { .. } => EffactsStatus::Format,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EffactsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EffactsStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            EffactsStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            EffactsStatus::InvalidArgument
        }
        Err(_) => {
            set_error("internal panic".to_string());
            EffactsStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failing call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn effacts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parse a config from NUL-terminated text.
///
/// # Safety
/// `text` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_config_from_str(
    text: *const c_char,
    out: *mut *mut EffactsConfig,
) -> EffactsStatus {
    guard(|| {
        let cfg = ExperimentConfig::parse(str_arg(text, "text")?)?;
        write_out(out, EffactsConfig(cfg))
    })
}

/// Read and parse a config file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_config_from_file(
    path: *const c_char,
    out: *mut *mut EffactsConfig,
) -> EffactsStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_file(Path::new(str_arg(path, "path")?))?;
        write_out(out, EffactsConfig(cfg))
    })
}

/// # Safety
/// `cfg` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn effacts_config_free(cfg: *mut EffactsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn effacts_config_set_seed(cfg: *mut EffactsConfig, seed: u64) -> EffactsStatus {
    guard(|| {
        borrow_mut(cfg, "cfg")?.0.seed = seed;
        Ok(())
    })
}

/// Worker threads; 0 uses the number of processors. Results do not depend on it.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn effacts_config_set_workers(
    cfg: *mut EffactsConfig,
    workers: usize,
) -> EffactsStatus {
    guard(|| {
        borrow_mut(cfg, "cfg")?.0.workers = workers;
        Ok(())
    })
}

/// Run training. If a rollout fails mid-run, `*out` still receives the
/// partial report and the call returns `EFFACTS_STATUS_ROLLOUT_DIVERGED`.
///
/// # Safety
/// `cfg` must be a live config handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_train(
    cfg: *const EffactsConfig,
    out: *mut *mut EffactsReport,
) -> EffactsStatus {
    let mut aborted = None;
    let status = guard(|| {
        let cfg = borrow(cfg, "cfg")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let report = train(&cfg.0)?;
        if let RunStatus::Aborted { error, .. } = &report.status {
            aborted = Some(error.clone());
        }
        write_out(out, EffactsReport(report))
    });
    match (status, aborted) {
        (EffactsStatus::Ok, Some(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        (s, _) => s,
    }
}

/// # Safety
/// `report` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn effacts_report_free(report: *mut EffactsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Generator iterations that finished; 0 for a null handle.
///
/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn effacts_report_completed_iterations(report: *const EffactsReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.completed_iterations())
}

/// # Safety
/// `report` must be a live report handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_report_ledger_totals(
    report: *const EffactsReport,
    out: *mut EffactsLedgerTotals,
) -> EffactsStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        let out = borrow_mut(out, "out")?;
        let t = r.ledger.totals();
        *out = EffactsLedgerTotals {
            warm_start: r.ledger.warm_start.map_or(0, |w| w.collected()),
            bandit: t.bandit,
            selected: t.selected,
            discarded: t.discarded,
            collected: t.collected(),
            timesteps: t.timesteps,
        };
        Ok(())
    })
}

/// Number of final-policy parameters.
///
/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn effacts_report_num_params(report: *const EffactsReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.final_policy.num_params())
}

/// Copy the final policy parameters into `buf`, which must hold exactly
/// `effacts_report_num_params` values.
///
/// # Safety
/// `report` must be a live report handle; `buf` must have `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn effacts_report_policy(
    report: *const EffactsReport,
    buf: *mut f64,
    len: usize,
) -> EffactsStatus {
    guard(|| {
        let theta = borrow(report, "report")?.0.final_policy.theta();
        if len != theta.len() {
            return Err(Failure::Arg(format!("buffer holds {len} values, policy has {}", theta.len())));
        }
        slice_mut(buf, len, "buf")?.copy_from_slice(&theta);
        Ok(())
    })
}

/// Write the same files as the `train` subcommand into `dir`.
///
/// # Safety
/// `report` must be a live report handle; `dir` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn effacts_report_write(
    report: *const EffactsReport,
    dir: *const c_char,
) -> EffactsStatus {
    guard(|| {
        let r = borrow(report, "report")?;
        let dir = Path::new(str_arg(dir, "dir")?);
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        write_train_outputs(&r.0, dir)?;
        Ok(())
    })
}

/// Product of `k` independent truncated normals, one per `(mu, sigma, low, high)`.
///
/// # Safety
/// Each array must hold `k` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_distribution_new(
    mu: *const f64,
    sigma: *const f64,
    low: *const f64,
    high: *const f64,
    k: usize,
    out: *mut *mut EffactsDistribution,
) -> EffactsStatus {
    guard(|| {
        let (mu, sigma) = (slice(mu, k, "mu")?, slice(sigma, k, "sigma")?);
        let (low, high) = (slice(low, k, "low")?, slice(high, k, "high")?);
        let dims = (0..k)
            .map(|i| {
                TruncatedNormalSpec::new(mu[i], sigma[i], low[i], high[i])
                    .map(|s| (format!("p{i}"), s))
            })
            .collect::<Result<Vec<_>, _>>()?;
        write_out(out, EffactsDistribution(SourceDistribution::new(dims)?))
    })
}

/// # Safety
/// `dist` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn effacts_distribution_free(dist: *mut EffactsDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Draw `n` parameters into `out` (row-major, `n * k` values). The same
/// seed always gives the same draws.
///
/// # Safety
/// `dist` must be a live handle; `out` must hold `n * k` writable values.
#[no_mangle]
pub unsafe extern "C" fn effacts_distribution_sample(
    dist: *const EffactsDistribution,
    seed: u64,
    n: usize,
    out: *mut f64,
) -> EffactsStatus {
    guard(|| {
        let d = &borrow(dist, "dist")?.0;
        let out = slice_mut(out, n * d.dim(), "out")?;
        let draws = d.sample_n(n, &mut SeedTree::new(seed).child("params", 0).stream());
        for (chunk, p) in out.chunks_mut(d.dim().max(1)).zip(&draws) {
            chunk.copy_from_slice(p.values());
        }
        Ok(())
    })
}

/// Joint density at the `k`-vector `p`.
///
/// # Safety
/// `dist` must be a live handle; `p` must hold `k` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_distribution_density(
    dist: *const EffactsDistribution,
    p: *const f64,
    k: usize,
    out: *mut f64,
) -> EffactsStatus {
    guard(|| {
        let d = &borrow(dist, "dist")?.0;
        if k != d.dim() {
            return Err(Error::DimensionMismatch {
                what: "parameter",
                expected: d.dim(),
                actual: k,
            }
            .into());
        }
        *borrow_mut(out, "out")? = d.density(&ModelParameter(slice(p, k, "p")?.to_vec()));
        Ok(())
    })
}

/// Bandit over a uniform grid on the box `[low, high]` with `resolution[i]`
/// points per dimension and standardized polynomial features of `degree`.
///
/// # Safety
/// Each array must hold `k` values; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn effacts_bandit_new(
    low: *const f64,
    high: *const f64,
    resolution: *const usize,
    k: usize,
    degree: usize,
    reward_scale: f64,
    r: f64,
    delta: f64,
    lambda: f64,
    seed: u64,
    out: *mut *mut EffactsBandit,
) -> EffactsStatus {
    guard(|| {
        let config = TsConfig {
            r,
            delta,
            lambda,
            ..TsConfig::default()
        };
        config.validate()?;
        if !(reward_scale > 0.0 && reward_scale.is_finite()) {
            return Err(Error::config("reward_scale", "must be finite and > 0").into());
        }
        let (map, arms) = ArmSet::grid(
            slice(low, k, "low")?,
            slice(high, k, "high")?,
            slice(resolution, k, "resolution")?,
            degree,
            reward_scale,
        )?;
        let bandit = TsBandit::for_map(&map, config);
        write_out(
            out,
            EffactsBandit {
                map,
                arms,
                bandit,
                rng: SeedTree::new(seed).child("bandit", 0).stream(),
            },
        )
    })
}

/// # Safety
/// `bandit` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn effacts_bandit_free(bandit: *mut EffactsBandit) {
    if !bandit.is_null() {
        drop(Box::from_raw(bandit));
    }
}

/// # Safety
/// `bandit` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn effacts_bandit_num_arms(bandit: *const EffactsBandit) -> usize {
    bandit.as_ref().map_or(0, |b| b.arms.len())
}

/// Parameter vector of arm `index` into `out` (`k` values).
///
/// # Safety
/// `bandit` must be a live handle; `out` must hold `k` writable values.
#[no_mangle]
pub unsafe extern "C" fn effacts_bandit_arm(
    bandit: *const EffactsBandit,
    index: usize,
    out: *mut f64,
    k: usize,
) -> EffactsStatus {
    guard(|| {
        let b = borrow(bandit, "bandit")?;
        if index >= b.arms.len() {
            return Err(Failure::Arg(format!("arm {index} out of range")));
        }
        let p = b.arms.param(index).values();
        if k != p.len() {
            return Err(Error::DimensionMismatch {
                what: "arm parameter",
                expected: p.len(),
                actual: k,
            }
            .into());
        }
        slice_mut(out, k, "out")?.copy_from_slice(p);
        Ok(())
    })
}

/// Thompson-sampling choice; advances the bandit's stream.
///
/// # Safety
/// `bandit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_bandit_select(
    bandit: *mut EffactsBandit,
    out: *mut usize,
) -> EffactsStatus {
    guard(|| {
        let b = borrow_mut(bandit, "bandit")?;
        let arm = b.bandit.select_arm(&b.arms, &mut b.rng);
        *borrow_mut(out, "out")? = arm;
        Ok(())
    })
}

/// Record the raw return observed at arm `index`.
///
/// # Safety
/// `bandit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn effacts_bandit_update(
    bandit: *mut EffactsBandit,
    index: usize,
    raw_return: f64,
) -> EffactsStatus {
    guard(|| {
        let b = borrow_mut(bandit, "bandit")?;
        if index >= b.arms.len() {
            return Err(Failure::Arg(format!("arm {index} out of range")));
        }
        let x = b.arms.features(index).to_vec();
        b.bandit.update(&x, raw_return)?;
        Ok(())
    })
}

/// Predicted raw return at the `k`-vector `p`.
///
/// # Safety
/// `bandit` must be a live handle; `p` must hold `k` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_bandit_predict(
    bandit: *const EffactsBandit,
    p: *const f64,
    k: usize,
    out: *mut f64,
) -> EffactsStatus {
    guard(|| {
        let b = borrow(bandit, "bandit")?;
        if k != b.map.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "parameter",
                expected: b.map.input_dim(),
                actual: k,
            }
            .into());
        }
        let p = ModelParameter(slice(p, k, "p")?.to_vec());
        *borrow_mut(out, "out")? = b.bandit.predict_return(&b.map, &p);
        Ok(())
    })
}

/// Indices of the `ceil(epsilon * n)` lowest `returns` (ties to the lower
/// index), ascending, into `out`; the count goes to `out_len`. `out` must
/// hold `n` values.
///
/// # Safety
/// `returns` and `out` must each hold `n` values; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn effacts_select_bottom(
    returns: *const f64,
    n: usize,
    epsilon: f64,
    out: *mut usize,
    out_len: *mut usize,
) -> EffactsStatus {
    guard(|| {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::config("epsilon", format!("must lie in (0, 1], got {epsilon}")).into());
        }
        let returns = slice(returns, n, "returns")?;
        if n == 0 {
            return Err(Error::Empty("returns").into());
        }
        let idx = bottom_indices(returns, bottom_count(epsilon, n));
        slice_mut(out, n, "out")?[..idx.len()].copy_from_slice(&idx);
        *borrow_mut(out_len, "out_len")? = idx.len();
        Ok(())
    })
}
