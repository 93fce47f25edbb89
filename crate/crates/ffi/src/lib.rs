//! C ABI over the `forest-sae` library.
//!
//! Conventions:
//! * every fallible call returns an [`FsStatus`]; on failure a message is
//!   available from [`fs_last_error`] on the same thread;
//! * objects are opaque handles created by `fs_*_load`/`fs_fit`/... and
//!   released with the matching `fs_*_free` (null is accepted);
//! * strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use forest_sae::cli::{self, Overrides, RunConfig};
use forest_sae::data::Outcome;
use forest_sae::prediction::StandPPD;
use forest_sae::samplers::{read_samples, PosteriorSamples};
use forest_sae::sim::SimConfig;
use forest_sae::spatial::{effective_range_mv, effective_range_uni};
use forest_sae::Error;

/// Status of a call. Codes 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    Config = 2,
    Validation = 3,
    Numerical = 4,
    Domain = 5,
    Io = 6,
    /// Null pointer, bad UTF-8 or index out of range.
    InvalidArgument = 7,
    /// Buffer too small; the required size was reported.
    BufferTooSmall = 8,
    /// Unexpected internal failure.
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsOutcome {
    Gsv = 0,
    Qmd = 1,
    Ba = 2,
    N = 3,
}

fn outcome_of(code: u32) -> Result<Outcome, Fail> {
    Ok(match code {
        c if c == FsOutcome::Gsv as u32 => Outcome::Gsv,
        c if c == FsOutcome::Qmd as u32 => Outcome::Qmd,
        c if c == FsOutcome::Ba as u32 => Outcome::Ba,
        c if c == FsOutcome::N as u32 => Outcome::N,
        _ => return Err(invalid(&format!("unknown outcome code {code}"))),
    })
}

/// Posterior predictive summary of one stand and outcome.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FsSummary {
    pub mean: f64,
    pub sd: f64,
    pub cv_pct: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Run configuration.
pub struct FsConfig(RunConfig);

/// Posterior samples of one fit.
pub struct FsSamples(PosteriorSamples);

/// Stand-level predictions.
pub struct FsPrediction(Vec<StandPPD>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FsStatus {
    match e {
        Error::Config(_) => FsStatus::Config,
        Error::Validation { .. } => FsStatus::Validation,
        Error::Numerical(_) => FsStatus::Numerical,
        Error::Domain(_) => FsStatus::Domain,
        Error::Io { .. } => FsStatus::Io,
    }
}

struct Fail(FsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(FsStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, recording any error or panic for `fs_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn fs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a TOML run configuration.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_config_load(path: *const c_char, out: *mut *mut FsConfig) -> FsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let cfg = RunConfig::load(path, &Overrides::default())?;
        write_out(out, Box::into_raw(Box::new(FsConfig(cfg))))
    })
}

/// Replaces the configured seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_config_set_seed(cfg: *mut FsConfig, seed: u64) -> FsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| invalid("config is null"))?;
        cfg.0.seed = Some(seed);
        Ok(())
    })
}

/// Replaces the output directory.
///
/// # Safety
/// `cfg` must be a live handle and `dir` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fs_config_set_out(cfg: *mut FsConfig, dir: *const c_char) -> FsStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let cfg = cfg.as_mut().ok_or_else(|| invalid("config is null"))?;
        cfg.0.out = PathBuf::from(dir);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_config_free(cfg: *mut FsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Fits the configured model, writing the samples directory and fit report
/// under the output directory. `out` may be null when the samples are not
/// needed.
///
/// # Safety
/// `cfg` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fs_fit(cfg: *const FsConfig, out: *mut *mut FsSamples) -> FsStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "config")?;
        let (samples, _) = cli::cmd_fit(&cfg.0)?;
        if !out.is_null() {
            out.write(Box::into_raw(Box::new(FsSamples(samples))));
        }
        Ok(())
    })
}

/// Reads a samples directory.
///
/// # Safety
/// `dir` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_samples_read(dir: *const c_char, out: *mut *mut FsSamples) -> FsStatus {
    guard(|| {
        let samples = read_samples(str_arg(dir, "dir")?)?;
        write_out(out, Box::into_raw(Box::new(FsSamples(samples))))
    })
}

/// Number of retained draws, 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_samples_n_draws(s: *const FsSamples) -> usize {
    s.as_ref().map_or(0, |s| s.0.n_draws())
}

/// Number of modeled outcomes, 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_samples_n_outcomes(s: *const FsSamples) -> usize {
    s.as_ref().map_or(0, |s| s.0.m())
}

/// Effective range (km) of modeled outcome `outcome` at draw `draw` of a
/// spatial fit.
///
/// # Safety
/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_samples_effective_range(
    s: *const FsSamples,
    draw: usize,
    outcome: usize,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        let s = &ref_arg(s, "samples")?.0;
        if draw >= s.n_draws() || outcome >= s.m() {
            return Err(invalid("draw or outcome index out of range"));
        }
        let lmc = s.lmc(draw).ok_or_else(|| invalid("samples are from a non-spatial family"))?;
        write_out(out, effective_range_mv(outcome, &lmc)?)
    })
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_samples_free(s: *mut FsSamples) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Predicts every stand from the configured samples directory and writes
/// the stand outputs. `out` may be null.
///
/// # Safety
/// `cfg` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fs_predict(cfg: *const FsConfig, out: *mut *mut FsPrediction) -> FsStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "config")?;
        let res = cli::cmd_predict(&cfg.0)?;
        if !out.is_null() {
            out.write(Box::into_raw(Box::new(FsPrediction(res.stands))));
        }
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_prediction_n_stands(p: *const FsPrediction) -> usize {
    p.as_ref().map_or(0, |p| p.0.len())
}

/// Copies the id of stand `stand` into `buf` (NUL-terminated). `needed`, if
/// not null, receives the buffer size required including the terminator.
///
/// # Safety
/// `p` must be a live handle; `buf` must hold `len` bytes or be null with
/// `len` 0.
#[no_mangle]
pub unsafe extern "C" fn fs_prediction_stand_id(
    p: *const FsPrediction,
    stand: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> FsStatus {
    guard(|| {
        let p = &ref_arg(p, "prediction")?.0;
        let id = p.get(stand).ok_or_else(|| invalid("stand index out of range"))?.stand_id.as_bytes();
        if !needed.is_null() {
            needed.write(id.len() + 1);
        }
        if len < id.len() + 1 || buf.is_null() {
            return Err(Fail(FsStatus::BufferTooSmall, format!("stand id needs {} bytes", id.len() + 1)));
        }
        ptr::copy_nonoverlapping(id.as_ptr(), buf.cast::<u8>(), id.len());
        buf.add(id.len()).write(0);
        Ok(())
    })
}

/// Summary of `outcome` (an `FsOutcome` value) for stand `stand`.
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_prediction_summary(
    p: *const FsPrediction,
    stand: usize,
    outcome: u32,
    out: *mut FsSummary,
) -> FsStatus {
    guard(|| {
        let p = &ref_arg(p, "prediction")?.0;
        let s = p.get(stand).ok_or_else(|| invalid("stand index out of range"))?;
        let outcome = outcome_of(outcome)?;
        let k = s
            .outcomes
            .iter()
            .position(|&o| o == outcome)
            .ok_or_else(|| invalid("outcome was not predicted"))?;
        let v = &s.summaries[k];
        write_out(
            out,
            FsSummary {
                mean: v.mean,
                sd: v.sd,
                cv_pct: v.cv_pct,
                q025: v.q025,
                q50: v.q50,
                q975: v.q975,
            },
        )
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_prediction_free(p: *mut FsPrediction) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Runs blocked cross-validation of the configured models and writes the
/// reports under the output directory.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_cv(cfg: *const FsConfig) -> FsStatus {
    guard(|| {
        cli::cmd_cv(&ref_arg(cfg, "config")?.0)?;
        Ok(())
    })
}

/// Writes a synthetic dataset from a simulation config file into `out_dir`.
///
/// # Safety
/// Both arguments must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn fs_simulate(config_path: *const c_char, out_dir: *const c_char) -> FsStatus {
    guard(|| {
        let (cfg, _) = cli::load_sim_config(str_arg(config_path, "config_path")?, None)?;
        cli::cmd_simulate(&cfg, str_arg(out_dir, "out_dir")?.as_ref())?;
        Ok(())
    })
}

/// Writes the built-in mountain-forest synthetic dataset into `out_dir`.
///
/// # Safety
/// `out_dir` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fs_simulate_brixen_like(seed: u64, out_dir: *const c_char) -> FsStatus {
    guard(|| {
        cli::cmd_simulate(&SimConfig::brixen_like(seed), str_arg(out_dir, "out_dir")?.as_ref())?;
        Ok(())
    })
}

/// Stems per hectare from basal area (m²/ha) and quadratic mean diameter (cm).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_derive_stem_density(ba: f64, qmd: f64, out: *mut f64) -> FsStatus {
    guard(|| write_out(out, forest_sae::data::derive_stem_density(ba, qmd)?))
}

/// Effective range (km) of an exponential correlation with decay `phi` (1/km).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_effective_range(phi: f64, out: *mut f64) -> FsStatus {
    guard(|| write_out(out, effective_range_uni(phi)?))
}
