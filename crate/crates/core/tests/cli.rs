use std::path::Path;
use std::process::{Command, Output};

use riskneutral::report::sha256_file;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskneutral"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_GBM: &str = r#"
[generator]
s0 = 100.0
mu = 0.08
sigma = 0.2
seed = 3
n_paths = 4000

[mesh]
k = 64

[pricing]
convergence_k = [16, 64]
n_draws = 10000
mc_draws = 0
bsm_rel_tol = 0.02
"#;

#[test]
fn simulate_writes_ensemble_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_GBM);
    let out = dir.path().join("a");
    let o = bin(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("ensemble.csv")).unwrap();
    // Metadata line, time header, one row per path.
    assert_eq!(text.lines().count(), 2 + 4000);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"], "simulate");
}

#[test]
fn repeated_seed_gives_identical_digests_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_GBM);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(bin(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"]).status.success());
    assert!(bin(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "3"]).status.success());
    assert_eq!(
        sha256_file(&a.join("ensemble.csv")).unwrap(),
        sha256_file(&b.join("ensemble.csv")).unwrap()
    );
}

#[test]
fn malformed_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[generator]\nsigmma = 0.2\n");
    let o = bin(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigmma"));
    let o = bin(&["simulate", "--set", "mesh.kk=4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kk"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin(&[]).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["diagnose"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_or_empty_ensemble_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = bin(&["diagnose", "--ensemble", "/nonexistent/e.csv", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = bin(&["diagnose", "--ensemble", empty.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn non_positive_prices_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let e = dir.path().join("e.csv");
    std::fs::write(&e, "0,1\n100,0\n100,101\n").unwrap();
    let o = bin(&["price", "--ensemble", e.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diagnose_estimate_and_price_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_GBM);
    let out = dir.path().join("o");
    let outs = out.to_str().unwrap();
    assert!(bin(&["simulate", "--config", &cfg, "--out", outs]).status.success());
    let ens = out.join("ensemble.csv");
    let ens = ens.to_str().unwrap();

    let o = bin(&["diagnose", "--config", &cfg, "--ensemble", ens, "--out", outs]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("verdict: calm="));
    assert!(out.join("lindeberg.csv").exists());

    let o = bin(&["estimate", "--config", &cfg, "--ensemble", ens, "--out", outs]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let law = out.join("limit_law.json");
    assert!(out.join("experiment_summary.csv").exists());

    let o = bin(&["price", "--config", &cfg, "--law", law.to_str().unwrap(), "--out", outs]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let quotes: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("quotes.json")).unwrap()).unwrap();
    assert_eq!(quotes.as_array().unwrap().len(), 3);
}

#[test]
fn validate_passes_on_gbm_and_tables_match_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_GBM);
    let out = dir.path().join("v");
    let o = bin(&["price", "--validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("price_report.json")).unwrap()).unwrap();
    for q in report["quotes"].as_array().unwrap() {
        let printed = q["fair_trader_price"].as_f64().unwrap().to_string();
        assert!(stdout.contains(&printed), "{printed} missing from stdout");
    }
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("strike,k_n,n_paths,finite_n_price"));
}

#[test]
fn validation_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_GBM);
    let o = bin(&[
        "validate",
        "--config",
        &cfg,
        "--set",
        "pricing.bsm_rel_tol=1e-9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn forced_calm_on_jump_bed_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[generator]
model = "jump_diffusion"
n_paths = 3000
jump_intensity = 1.0
jumps = [{ log_jump = -0.4, prob = 1.0 }]

[mesh]
k = 256

[pricing]
convergence_k = []
mc_draws = 0
"#,
    );
    let o = bin(&["price", "--calm-only", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("non-calm branch is recommended"), "{err}");
}
