use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use riskneutral_ffi::*;

fn last_error() -> String {
    let p = rn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn gbm(k: usize, n: usize, seed: u64) -> *mut RnEnsemble {
    let mut ens = ptr::null_mut();
    let st = unsafe { rn_ensemble_gbm(100.0, 0.08, 0.2, 0.0, 1.0, k, n, seed, &mut ens) };
    assert_eq!(st, RnStatus::Ok);
    ens
}

#[test]
fn gbm_round_trip_prices_near_bsm() {
    let ens = gbm(32, 20_000, 11);
    unsafe {
        assert_eq!(rn_ensemble_n_paths(ens), 20_000);
        assert_eq!(rn_ensemble_k(ens), 32);
        let mut exp = ptr::null_mut();
        assert_eq!(rn_experiment_new(ens, &mut exp), RnStatus::Ok);
        let mut dev = f64::NAN;
        assert_eq!(rn_experiment_martingale_deviation(exp, &mut dev), RnStatus::Ok);
        assert!(dev < 1e-12, "{dev}");
        let mut log_a = f64::NAN;
        assert_eq!(rn_experiment_log_a(exp, &mut log_a), RnStatus::Ok);
        let mut law = ptr::null_mut();
        assert_eq!(rn_law_estimate(exp, 0.05, &mut law), RnStatus::Ok);
        let mut s = RnLawSummary::default();
        assert_eq!(rn_law_summary(law, &mut s), RnStatus::Ok);
        assert!((s.sigma2_interval - 0.04).abs() < 0.003, "{s:?}");
        let mut q = RnQuote::default();
        assert_eq!(
            rn_price_call(law, 100.0, 100.0, 0.05, 1.0, log_a, RnPriceMode::Fair, &mut q),
            RnStatus::Ok
        );
        let bsm = rn_bsm(100.0, 100.0, 0.05, 0.2, 1.0);
        assert!((q.fair_trader_price - bsm).abs() < 0.02 * bsm, "{q:?} vs {bsm}");
        assert!(q.fair_buyer_lower_bound > q.fair_trader_price);
        rn_law_free(law);
        rn_experiment_free(exp);
        rn_ensemble_free(ens);
    }
}

#[test]
fn martingale_law_has_unit_trader_moment() {
    let ys = [-0.15];
    let nus = [0.5];
    unsafe {
        let mut law = ptr::null_mut();
        assert_eq!(rn_law_martingale(0.04, ys.as_ptr(), nus.as_ptr(), 1, &mut law), RnStatus::Ok);
        let mut v = f64::NAN;
        assert_eq!(rn_law_log_mgf(law, 1.0, RnStrategy::Trader, &mut v), RnStatus::Ok);
        assert!(v.abs() < 1e-12);
        let mut s = RnLawSummary::default();
        rn_law_summary(law, &mut s);
        assert_eq!(s.n_atoms_t0, 1);
        rn_law_free(law);

        assert_eq!(rn_law_calm(0.04, &mut law), RnStatus::Ok);
        let mut q = RnQuote::default();
        rn_price_call(law, 100.0, 100.0, 0.05, 1.0, 0.0, RnPriceMode::Fair, &mut q);
        assert_eq!(q.calm, 1);
        assert!((q.fair_trader_price - 10.450583572185567).abs() < 1e-9);
        rn_law_free(law);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut ens = ptr::null_mut();
        let st = rn_ensemble_gbm(-1.0, 0.0, 0.2, 0.0, 1.0, 4, 10, 1, &mut ens);
        assert_eq!(st, RnStatus::InvalidParameter);
        assert!(ens.is_null());
        assert!(!last_error().is_empty());

        let mut out = f64::NAN;
        assert_eq!(rn_experiment_log_a(ptr::null(), &mut out), RnStatus::NullPointer);
        assert!(last_error().contains("null"));

        let ens = gbm(4, 10, 1);
        assert_eq!(rn_experiment_new(ens, ptr::null_mut()), RnStatus::NullPointer);
        rn_ensemble_free(ens);

        let missing = CString::new("/nonexistent/ensemble.csv").unwrap();
        let mut e = ptr::null_mut();
        assert_eq!(rn_ensemble_read(missing.as_ptr(), &mut e), RnStatus::InputError);

        // Freeing null is a no-op.
        rn_ensemble_free(ptr::null_mut());
        rn_experiment_free(ptr::null_mut());
        rn_law_free(ptr::null_mut());
        rn_string_free(ptr::null_mut());
        assert_eq!(rn_ensemble_n_paths(ptr::null()), 0);
    }
}

#[test]
fn csv_write_read_and_diagnose_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("e.csv").to_str().unwrap()).unwrap();
    let ens = gbm(16, 500, 3);
    unsafe {
        assert_eq!(rn_ensemble_write_csv(ens, path.as_ptr()), RnStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(rn_ensemble_read(path.as_ptr(), &mut back), RnStatus::Ok);
        assert_eq!(rn_ensemble_n_paths(back), 500);
        assert_eq!(rn_ensemble_k(back), 16);

        let mut exp = ptr::null_mut();
        assert_eq!(rn_experiment_new(back, &mut exp), RnStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(rn_diagnose_json(exp, &mut json), RnStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        rn_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v.is_object());
        rn_experiment_free(exp);
        rn_ensemble_free(back);
        rn_ensemble_free(ens);
    }
}

#[test]
fn jump_diffusion_arrays_are_checked() {
    let lj = [-0.4];
    let pr = [1.0];
    unsafe {
        let mut ens = ptr::null_mut();
        let st = rn_ensemble_jump_diffusion(
            100.0, 0.08, 0.2, 1.0, lj.as_ptr(), pr.as_ptr(), 1, 0.0, 1.0, 8, 100, 9, &mut ens,
        );
        assert_eq!(st, RnStatus::Ok);
        rn_ensemble_free(ens);
        let st = rn_ensemble_jump_diffusion(
            100.0, 0.08, 0.2, 1.0, ptr::null(), pr.as_ptr(), 1, 0.0, 1.0, 8, 100, 9, &mut ens,
        );
        assert_eq!(st, RnStatus::NullPointer);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(rn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/riskneutral.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    assert!(h.starts_with("#ifndef RISKNEUTRAL_H"));
    for name in [
        "rn_last_error",
        "rn_version",
        "rn_ensemble_gbm",
        "rn_ensemble_jump_diffusion",
        "rn_ensemble_read",
        "rn_ensemble_write_csv",
        "rn_ensemble_free",
        "rn_experiment_new",
        "rn_experiment_free",
        "rn_diagnose_json",
        "rn_string_free",
        "rn_law_estimate",
        "rn_law_calm",
        "rn_law_martingale",
        "rn_law_summary",
        "rn_law_log_mgf",
        "rn_law_free",
        "rn_price_call",
        "rn_bsm",
        "typedef struct RnEnsemble RnEnsemble;",
        "RN_STATUS_NULL_POINTER = 1",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}

/// Compiles the C smoke test against the static library and runs it.
#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler found as `{cc}`; skipping");
        return;
    }
    // Integration tests live in target/<profile>/deps; the static library
    // sits one level up.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libriskneutral_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let out = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status, String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
