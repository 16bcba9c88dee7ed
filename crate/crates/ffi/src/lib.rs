//! C ABI over the `riskneutral` crate.
//!
//! Objects cross the boundary as opaque handles created by `rn_*_new`-style
//! constructors and released with the matching `rn_*_free`. Every fallible
//! call returns an [`RnStatus`]; on failure the message is available from
//! [`rn_last_error`] on the same thread until the next failing call.
//!
//! Handles are not synchronised. A handle may be moved between threads but
//! must not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use riskneutral::diagnostics::{diagnose, DiagnosticsConfig};
use riskneutral::experiment::{to_densities, CallSpec};
use riskneutral::limit_law::{estimate_limit_law, log_mgf};
use riskneutral::market_sim::{gen_gbm, gen_jump_diffusion, read_ensemble, write_csv, JumpSize};
use riskneutral::pricing::{oracle_bsm, price_noncalm, Branch};
use riskneutral::{DensityExperiment, Error, LimitLaw, Mesh, PathEnsemble, PriceMode, StrategyTag};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    InputError = 3,
    NumericalError = 4,
    Panic = 5,
}

/// Price ensemble on a time mesh.
pub struct RnEnsemble(PathEnsemble);

/// Price densities of an ensemble.
pub struct RnExperiment(DensityExperiment);

/// Infinitely divisible limit law of the log-likelihood process.
pub struct RnLaw(LimitLaw);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RnStrategy {
    Trader = 0,
    Buyer = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RnPriceMode {
    Raw = 0,
    Fair = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RnLawSummary {
    pub mu: f64,
    pub sigma2: f64,
    pub mu_interval: f64,
    pub sigma2_interval: f64,
    pub n_atoms_t0: usize,
    pub n_atoms_t: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RnQuote {
    pub trader_price: f64,
    pub buyer_lower_bound: f64,
    pub fair_trader_price: f64,
    pub fair_buyer_lower_bound: f64,
    /// 1 when priced with the calm formulas.
    pub calm: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RnStatus {
    match e {
        Error::Quadrature(_) => RnStatus::NumericalError,
        e if e.is_input_error() => RnStatus::InputError,
        _ => RnStatus::InvalidParameter,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), RnStatusError>>(f: F) -> RnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RnStatus::Ok,
        Ok(Err(RnStatusError(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            RnStatus::Panic
        }
    }
}

struct RnStatusError(RnStatus, String);

impl From<Error> for RnStatusError {
    fn from(e: Error) -> Self {
        RnStatusError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> RnStatusError {
    RnStatusError(RnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, RnStatusError> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), RnStatusError> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, RnStatusError> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| RnStatusError(RnStatus::InvalidParameter, "path is not UTF-8".into()))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], RnStatusError> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulates GBM paths on a uniform mesh of `k` intervals over `[t0, t_end]`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rn_ensemble_gbm(
    s0: f64,
    mu: f64,
    sigma: f64,
    t0: f64,
    t_end: f64,
    k: usize,
    n_paths: usize,
    seed: u64,
    out: *mut *mut RnEnsemble,
) -> RnStatus {
    guard(|| {
        let mesh = Mesh::uniform(t0, t_end, k)?;
        let ens = gen_gbm(s0, mu, sigma, &mesh, n_paths, seed)?;
        write_out(out, Box::into_raw(Box::new(RnEnsemble(ens))))
    })
}

/// Simulates a jump diffusion; jump `i` has log size `log_jumps[i]` with
/// probability `probs[i]`.
///
/// # Safety
/// `log_jumps` and `probs` must point to `n_jumps` readable doubles and
/// `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rn_ensemble_jump_diffusion(
    s0: f64,
    mu: f64,
    sigma: f64,
    intensity: f64,
    log_jumps: *const f64,
    probs: *const f64,
    n_jumps: usize,
    t0: f64,
    t_end: f64,
    k: usize,
    n_paths: usize,
    seed: u64,
    out: *mut *mut RnEnsemble,
) -> RnStatus {
    guard(|| {
        let sizes: Vec<JumpSize> = slice_arg(log_jumps, n_jumps, "log_jumps")?
            .iter()
            .zip(slice_arg(probs, n_jumps, "probs")?)
            .map(|(&log_jump, &prob)| JumpSize { log_jump, prob })
            .collect();
        let mesh = Mesh::uniform(t0, t_end, k)?;
        let ens = gen_jump_diffusion(s0, mu, sigma, intensity, &sizes, &mesh, n_paths, seed)?;
        write_out(out, Box::into_raw(Box::new(RnEnsemble(ens))))
    })
}

/// Reads a CSV or binary ensemble file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_ensemble_read(path: *const c_char, out: *mut *mut RnEnsemble) -> RnStatus {
    guard(|| {
        let ens = read_ensemble(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(RnEnsemble(ens))))
    })
}

/// # Safety
/// `ens` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rn_ensemble_write_csv(ens: *const RnEnsemble, path: *const c_char) -> RnStatus {
    guard(|| {
        let ens = borrow(ens, "ensemble")?;
        write_csv(&ens.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of paths; 0 for a null handle.
///
/// # Safety
/// `ens` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_ensemble_n_paths(ens: *const RnEnsemble) -> usize {
    ens.as_ref().map_or(0, |e| e.0.n_paths())
}

/// Number of mesh intervals; 0 for a null handle.
///
/// # Safety
/// `ens` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_ensemble_k(ens: *const RnEnsemble) -> usize {
    ens.as_ref().map_or(0, |e| e.0.k())
}

/// # Safety
/// `ens` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rn_ensemble_free(ens: *mut RnEnsemble) {
    if !ens.is_null() {
        drop(Box::from_raw(ens));
    }
}

/// # Safety
/// `ens` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_experiment_new(ens: *const RnEnsemble, out: *mut *mut RnExperiment) -> RnStatus {
    guard(|| {
        let exp = to_densities(&borrow(ens, "ensemble")?.0)?;
        write_out(out, Box::into_raw(Box::new(RnExperiment(exp))))
    })
}

/// Largest in-sample martingale deviation over the intervals.
///
/// # Safety
/// `exp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_experiment_martingale_deviation(exp: *const RnExperiment, out: *mut f64) -> RnStatus {
    guard(|| write_out(out, borrow(exp, "experiment")?.0.martingale_check().max_deviation))
}

/// `log(E S_T / E S_t0)`.
///
/// # Safety
/// `exp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_experiment_log_a(exp: *const RnExperiment, out: *mut f64) -> RnStatus {
    guard(|| write_out(out, borrow(exp, "experiment")?.0.a_factor.ln()))
}

/// Runs the diagnostics with default settings and returns the report as a
/// JSON string, to be released with [`rn_string_free`].
///
/// # Safety
/// `exp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_diagnose_json(exp: *const RnExperiment, out: *mut *mut c_char) -> RnStatus {
    guard(|| {
        let report = diagnose(&borrow(exp, "experiment")?.0, &DiagnosticsConfig::default())?;
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        let c = CString::new(json).expect("json has no nul");
        write_out(out, c.into_raw())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `exp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_experiment_free(exp: *mut RnExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Estimates the limit law with truncation level `tau`.
///
/// # Safety
/// `exp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_law_estimate(exp: *const RnExperiment, tau: f64, out: *mut *mut RnLaw) -> RnStatus {
    guard(|| {
        let law = estimate_limit_law(&borrow(exp, "experiment")?.0, tau)?;
        write_out(out, Box::into_raw(Box::new(RnLaw(law))))
    })
}

/// Normal limit law with variance `sigma2_interval` and mean `-sigma2_interval / 2`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rn_law_calm(sigma2_interval: f64, out: *mut *mut RnLaw) -> RnStatus {
    guard(|| write_out(out, Box::into_raw(Box::new(RnLaw(LimitLaw::calm(sigma2_interval)?)))))
}

/// Law with unit exponential moment under the trader strategy, with
/// trader-side atoms at `ys[i]` of intensity `intensities[i]`.
///
/// # Safety
/// `ys` and `intensities` must point to `n_atoms` readable doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rn_law_martingale(
    sigma2_interval: f64,
    ys: *const f64,
    intensities: *const f64,
    n_atoms: usize,
    out: *mut *mut RnLaw,
) -> RnStatus {
    guard(|| {
        let atoms: Vec<(f64, f64)> = slice_arg(ys, n_atoms, "ys")?
            .iter()
            .cloned()
            .zip(slice_arg(intensities, n_atoms, "intensities")?.iter().cloned())
            .collect();
        let law = LimitLaw::martingale(sigma2_interval, &atoms)?;
        write_out(out, Box::into_raw(Box::new(RnLaw(law))))
    })
}

/// # Safety
/// `law` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_law_summary(law: *const RnLaw, out: *mut RnLawSummary) -> RnStatus {
    guard(|| {
        let l = &borrow(law, "law")?.0;
        write_out(
            out,
            RnLawSummary {
                mu: l.mu,
                sigma2: l.sigma2,
                mu_interval: l.mu_interval,
                sigma2_interval: l.sigma2_interval,
                n_atoms_t0: l.atoms_t0.len(),
                n_atoms_t: l.atoms_t.len(),
            },
        )
    })
}

/// Log moment generating function of the limit law at `s`.
///
/// # Safety
/// `law` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_law_log_mgf(law: *const RnLaw, s: f64, strategy: RnStrategy, out: *mut f64) -> RnStatus {
    guard(|| {
        let tag = match strategy {
            RnStrategy::Trader => StrategyTag::Trader,
            RnStrategy::Buyer => StrategyTag::Buyer,
        };
        write_out(out, log_mgf(&borrow(law, "law")?.0, s, tag))
    })
}

/// # Safety
/// `law` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rn_law_free(law: *mut RnLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// Prices a European call from a limit law. `log_a` is `log(E S_T / E S_t0)`.
///
/// # Safety
/// `law` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_price_call(
    law: *const RnLaw,
    spot: f64,
    strike: f64,
    rate: f64,
    delta_t: f64,
    log_a: f64,
    mode: RnPriceMode,
    out: *mut RnQuote,
) -> RnStatus {
    guard(|| {
        let call = CallSpec {
            spot,
            strike,
            rate,
            delta_t,
        };
        let mode = match mode {
            RnPriceMode::Raw => PriceMode::Raw,
            RnPriceMode::Fair => PriceMode::Fair,
        };
        let q = price_noncalm(&call, &borrow(law, "law")?.0, log_a, mode)?;
        write_out(
            out,
            RnQuote {
                trader_price: q.trader_price,
                buyer_lower_bound: q.buyer_lower_bound,
                fair_trader_price: q.fair_trader_price,
                fair_buyer_lower_bound: q.fair_buyer_lower_bound,
                calm: (q.branch == Branch::Calm) as i32,
            },
        )
    })
}

/// Black-Scholes-Merton call price; `sigma_total = sigma * sqrt(delta_t)`.
#[no_mangle]
pub extern "C" fn rn_bsm(spot: f64, strike: f64, rate: f64, sigma_total: f64, delta_t: f64) -> f64 {
    oracle_bsm(spot, strike, rate, sigma_total, delta_t)
}
