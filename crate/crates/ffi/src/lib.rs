//! C interface to the CARMA indirect-inference library.
//!
//! Series and estimates live behind opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`CarmaStatus`]; on failure the message is available from
//! [`carma_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use carma_indirect::contamination::{self, OutlierConfig, OutlierMode};
use carma_indirect::experiment::{self, ConfigFile};
use carma_indirect::gm::{self, GmConfig};
use carma_indirect::indirect::{self, DataLeg, IndirectConfig, ThetaEstimate};
use carma_indirect::levy::{self, DriverConfig, SampledSeries};
use carma_indirect::model::{self, DriverScale, ModelFamily};
use carma_indirect::qmle::{self, QmleConfig};
use carma_indirect::report;
use carma_indirect::rng::{stream, StreamRole};
use carma_indirect::Error;

/// Result codes of the C interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarmaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The model violates stationarity or identifiability, or a solve failed.
    Numerical = 3,
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarmaFamily {
    /// CARMA(1,0) with parameter `a`: `A = [a]`, `c = [1]`.
    Car1 = 0,
    /// CARMA(3,1) with parameter `(a1, a2, a3, c1, c0)`.
    Carma31 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarmaEstimator {
    /// GM data leg, least-squares simulation leg.
    Indirect = 0,
    /// Least-squares data leg.
    Ls = 1,
    Qmle = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarmaOutlierMode {
    Replacement = 0,
    Additive = 1,
}

/// Opaque sampled series.
pub struct CarmaSeries {
    inner: SampledSeries,
}

/// Opaque parameter estimate.
pub struct CarmaEstimate {
    inner: ThetaEstimate,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CarmaStatus {
    match e {
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::SeriesTooShort { .. } | Error::Config(_) => {
            CarmaStatus::InvalidArgument
        }
        Error::Io(_) => CarmaStatus::Io,
        _ => CarmaStatus::Numerical,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard<F>(f: F) -> CarmaStatus
where
    F: FnOnce() -> Result<(), (CarmaStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CarmaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside carma_indirect");
            CarmaStatus::Panic
        }
    }
}

fn lib<T>(r: carma_indirect::Result<T>) -> Result<T, (CarmaStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CarmaStatus, String) {
    (CarmaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (CarmaStatus, String) {
    (CarmaStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], (CarmaStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, (CarmaStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn family(f: CarmaFamily, nuisance_scale: bool, sigma_l2: f64) -> ModelFamily {
    let fam = match f {
        CarmaFamily::Car1 => ModelFamily::car1(),
        CarmaFamily::Carma31 => ModelFamily::carma31(),
    };
    let scale = if nuisance_scale {
        DriverScale::Nuisance
    } else {
        DriverScale::Known
    };
    fam.with_scale(scale).with_sigma_l2(sigma_l2)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn carma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn carma_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Wraps `n` observations on a grid of step `h`.
///
/// # Safety
/// `values` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn carma_series_from_values(
    values: *const f64,
    n: usize,
    h: f64,
    out: *mut *mut CarmaSeries,
) -> CarmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v = slice(values, n, "values")?.to_vec();
        let inner = lib(SampledSeries::new(h, v))?;
        *out = Box::into_raw(Box::new(CarmaSeries { inner }));
        Ok(())
    })
}

/// Simulates `n` observations of a Brownian-driven CARMA process with driver variance `sigma_l2`.
///
/// # Safety
/// `theta` must point to `dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn carma_series_simulate(
    fam: CarmaFamily,
    theta: *const f64,
    dim: usize,
    n: usize,
    h: f64,
    sigma_l2: f64,
    seed: u64,
    out: *mut *mut CarmaSeries,
) -> CarmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let th = slice(theta, dim, "theta")?;
        let spec = lib(model::build_state_space_raw(th, &family(fam, false, sigma_l2)))?;
        let mut rng = stream(seed, 0, StreamRole::Data);
        let inner = lib(levy::simulate_carma_path(&spec, n, h, &DriverConfig::brownian(sigma_l2), &mut rng))?;
        *out = Box::into_raw(Box::new(CarmaSeries { inner }));
        Ok(())
    })
}

/// Replaces the series by a copy with isolated outliers of constant value `xi`
/// occurring with probability `gamma`.
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn carma_series_contaminate(
    series: *mut CarmaSeries,
    mode: CarmaOutlierMode,
    gamma: f64,
    xi: f64,
    seed: u64,
) -> CarmaStatus {
    guard(|| {
        let s = series.as_mut().ok_or_else(|| null("series"))?;
        let mut cfg = OutlierConfig::additive(xi, gamma);
        if mode == CarmaOutlierMode::Replacement {
            cfg.mode = OutlierMode::Replacement;
        }
        let mut rng = stream(seed, 0, StreamRole::Contamination);
        s.inner = lib(contamination::contaminate(&s.inner, &cfg, &mut rng))?;
        Ok(())
    })
}

/// Number of observations, or 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn carma_series_len(series: *const CarmaSeries) -> usize {
    series.as_ref().map_or(0, |s| s.inner.len())
}

/// Copies up to `len` observations into `buf`.
///
/// # Safety
/// `series` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn carma_series_values(series: *const CarmaSeries, buf: *mut f64, len: usize) -> CarmaStatus {
    guard(|| {
        let s = series.as_ref().ok_or_else(|| null("series"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let k = len.min(s.inner.len());
        std::ptr::copy_nonoverlapping(s.inner.values.as_ptr(), buf, k);
        Ok(())
    })
}

/// # Safety
/// `series` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn carma_series_free(series: *mut CarmaSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Estimates the CARMA parameter of a series. `r` and `s` are ignored by the
/// QMLE. With `nuisance_scale` nonzero the driver variance is not used to
/// identify the parameter (only sensible for CARMA(1,0)).
///
/// # Safety
/// `series` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn carma_estimate(
    series: *const CarmaSeries,
    fam: CarmaFamily,
    estimator: CarmaEstimator,
    r: usize,
    s: usize,
    sigma_l2: f64,
    nuisance_scale: i32,
    seed: u64,
    out: *mut *mut CarmaEstimate,
) -> CarmaStatus {
    guard(|| {
        let x = series.as_ref().ok_or_else(|| null("series"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let fam = family(fam, nuisance_scale != 0, sigma_l2);
        let inner = match estimator {
            CarmaEstimator::Qmle => {
                let cfg = QmleConfig {
                    master_seed: seed,
                    ..QmleConfig::default()
                };
                lib(qmle::qmle_estimate(&x.inner, &fam, &cfg))?
            }
            CarmaEstimator::Indirect | CarmaEstimator::Ls => {
                let mut cfg = IndirectConfig::new(r, s, DriverConfig::brownian(sigma_l2)).with_seed(seed, 0);
                if estimator == CarmaEstimator::Ls {
                    cfg.data_leg = DataLeg::Ls;
                }
                lib(indirect::indirect_estimate(&x.inner, &fam, &cfg))?
            }
        };
        *out = Box::into_raw(Box::new(CarmaEstimate { inner }));
        Ok(())
    })
}

/// Dimension of the estimated parameter, or 0 for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn carma_estimate_dim(est: *const CarmaEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.inner.theta_hat.dim())
}

/// Copies up to `len` parameter components into `buf`.
///
/// # Safety
/// `est` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn carma_estimate_values(est: *const CarmaEstimate, buf: *mut f64, len: usize) -> CarmaStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let v = &e.inner.theta_hat.values;
        std::ptr::copy_nonoverlapping(v.as_ptr(), buf, len.min(v.len()));
        Ok(())
    })
}

/// Objective value at the estimate; NaN for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn carma_estimate_objective(est: *const CarmaEstimate) -> f64 {
    est.as_ref().map_or(f64::NAN, |e| e.inner.objective)
}

/// 1 when the fit counts as failed (non-convergence or boundary optimum), 0 otherwise, -1 for null.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn carma_estimate_failed(est: *const CarmaEstimate) -> i32 {
    est.as_ref().map_or(-1, |e| e.inner.failed() as i32)
}

/// # Safety
/// `est` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn carma_estimate_free(est: *mut CarmaEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Robust GM fit of an AR(`r`) model: writes `r` coefficients to `pis` and the scale to `sigma`.
///
/// # Safety
/// `series` must be a live handle, `pis` must have room for `r` doubles and `sigma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn carma_gm_fit(series: *const CarmaSeries, r: usize, pis: *mut f64, sigma: *mut f64) -> CarmaStatus {
    guard(|| {
        let x = series.as_ref().ok_or_else(|| null("series"))?;
        if pis.is_null() || sigma.is_null() {
            return Err(null("output buffer"));
        }
        let e = lib(gm::gm_estimate(&x.inner, r, &GmConfig::default()))?;
        std::ptr::copy_nonoverlapping(e.aux.pis.as_ptr(), pis, r);
        *sigma = e.aux.sigma;
        Ok(())
    })
}

/// Runs every experiment of a TOML or JSON config file and writes one CSV
/// table per experiment into `out_dir`; when null, the config's `out_dir` or `out`.
/// `threads == 0` picks the default worker count.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` must be null or one.
#[no_mangle]
pub unsafe extern "C" fn carma_run_config(config_path: *const c_char, threads: usize, out_dir: *const c_char) -> CarmaStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let out = if out_dir.is_null() {
            None
        } else {
            Some(path_arg(out_dir, "out_dir")?)
        };
        let threads = if threads == 0 { experiment::default_threads() } else { threads };
        for spec in lib(lib(ConfigFile::load(&path))?.expand())? {
            let res = lib(experiment::run_experiment(&spec, threads))?;
            let dir = out
                .clone()
                .or_else(|| spec.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            lib(report::emit_csv(&res.table, &dir.join(format!("{}.csv", spec.name))))?;
        }
        Ok(())
    })
}
