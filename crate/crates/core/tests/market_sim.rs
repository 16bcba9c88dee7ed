use proptest::prelude::*;
use riskneutral::market_sim::{
    gen_gbm, gen_jump_diffusion, read_binary, read_csv, read_ensemble, write_binary, write_csv,
    JumpSize,
};
use riskneutral::{Mesh, MeshKind, ModelTag, PathEnsemble};

fn small_gbm(seed: u64) -> PathEnsemble {
    let mesh = Mesh::uniform(0.0, 1.0, 8).unwrap();
    gen_gbm(100.0, 0.08, 0.2, &mesh, 40, seed).unwrap()
}

#[test]
fn gbm_shape_and_positivity() {
    let ens = small_gbm(1);
    assert_eq!(ens.n_paths(), 40);
    assert_eq!(ens.k(), 8);
    assert!(ens.prices.iter().all(|p| *p > 0.0));
    assert!(ens.prices.column(0).iter().all(|p| *p == 100.0));
    assert_eq!(ens.model.gbm_sigma(), Some(0.2));
}

#[test]
fn seeds_are_reproducible() {
    assert_eq!(small_gbm(7), small_gbm(7));
    assert_ne!(small_gbm(7).prices, small_gbm(8).prices);
}

#[test]
fn paths_do_not_depend_on_ensemble_size() {
    let mesh = Mesh::uniform(0.0, 1.0, 8).unwrap();
    let a = gen_gbm(100.0, 0.08, 0.2, &mesh, 10, 3).unwrap();
    let b = gen_gbm(100.0, 0.08, 0.2, &mesh, 25, 3).unwrap();
    assert_eq!(a.prices, b.slice_paths(0..10).unwrap().prices);
}

#[test]
fn gbm_log_return_moments() {
    let mesh = Mesh::uniform(0.0, 1.0, 4).unwrap();
    let n = 20_000;
    let ens = gen_gbm(100.0, 0.08, 0.2, &mesh, n, 11).unwrap();
    let lr: Vec<f64> = (0..n).map(|i| (ens.row(i)[4] / 100.0).ln()).collect();
    let mean = lr.iter().sum::<f64>() / n as f64;
    let var = lr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - 0.06).abs() < 4.0 * se, "mean {mean}");
    assert!((var - 0.04).abs() < 0.04 * 0.05, "var {var}");
}

#[test]
fn zero_intensity_jump_model_is_gbm() {
    let mesh = Mesh::uniform(0.0, 1.0, 8).unwrap();
    let jumps = [JumpSize {
        log_jump: -0.4,
        prob: 1.0,
    }];
    let a = gen_jump_diffusion(100.0, 0.08, 0.2, 0.0, &jumps, &mesh, 30, 5).unwrap();
    let b = gen_gbm(100.0, 0.08, 0.2, &mesh, 30, 5).unwrap();
    assert_eq!(a.prices, b.prices);
}

#[test]
fn jump_bed_has_jumps() {
    let mesh = Mesh::uniform(0.0, 1.0, 64).unwrap();
    let jumps = [JumpSize {
        log_jump: -0.4,
        prob: 1.0,
    }];
    let ens = gen_jump_diffusion(100.0, 0.08, 0.2, 1.0, &jumps, &mesh, 500, 5).unwrap();
    let big_drops = (0..ens.n_paths())
        .filter(|&i| ens.row(i).windows(2).any(|w| (w[1] / w[0]).ln() < -0.25))
        .count();
    // P(at least one jump) = 1 - e^{-1}.
    let frac = big_drops as f64 / 500.0;
    assert!((frac - 0.632).abs() < 0.07, "{frac}");
}

#[test]
fn generator_rejects_bad_parameters() {
    let mesh = Mesh::uniform(0.0, 1.0, 4).unwrap();
    assert!(gen_gbm(0.0, 0.0, 0.2, &mesh, 1, 0).is_err());
    assert!(gen_gbm(1.0, 0.0, -0.2, &mesh, 1, 0).is_err());
    assert!(gen_gbm(1.0, 0.0, 0.2, &mesh, 0, 0).is_err());
    let half = [JumpSize {
        log_jump: 0.1,
        prob: 0.5,
    }];
    assert!(gen_jump_diffusion(1.0, 0.0, 0.2, 1.0, &half, &mesh, 1, 0).is_err());
    assert!(gen_jump_diffusion(1.0, 0.0, 0.2, 1.0, &[], &mesh, 1, 0).is_err());
}

#[test]
fn csv_and_binary_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ens = small_gbm(2);
    let c = dir.path().join("e.csv");
    let b = dir.path().join("e.bin");
    write_csv(&ens, &c).unwrap();
    write_binary(&ens, &b).unwrap();
    assert_eq!(read_csv(&c).unwrap(), ens);
    assert_eq!(read_binary(&b).unwrap(), ens);
    assert_eq!(read_ensemble(&c).unwrap(), ens);
    assert_eq!(read_ensemble(&b).unwrap(), ens);
}

#[test]
fn plain_csv_is_ingested() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("plain.csv");
    std::fs::write(&p, "0,0.5,1\n100,101,99.5\n100,98,102\n").unwrap();
    let ens = read_csv(&p).unwrap();
    assert_eq!(ens.model, ModelTag::Ingested);
    assert_eq!(ens.n_paths(), 2);
    assert_eq!(ens.mesh.times, vec![0.0, 0.5, 1.0]);
}

#[test]
fn bad_files_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert!(read_csv(&empty).unwrap_err().is_input_error());
    let neg = dir.path().join("neg.csv");
    std::fs::write(&neg, "0,1\n100,-1\n").unwrap();
    assert!(read_csv(&neg).unwrap_err().is_input_error());
    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "0,1\n100\n").unwrap();
    assert!(read_csv(&ragged).is_err());
    assert!(read_ensemble(&dir.path().join("missing.csv")).unwrap_err().is_input_error());
}

#[test]
fn geometric_mesh_example() {
    let m = Mesh::geometric(1.0, 2.0, 0.1).unwrap();
    assert!(matches!(m.kind, MeshKind::Geometric { .. }));
    assert_eq!(m.t0(), 1.0);
    assert_eq!(m.t_end(), 2.0);
    for w in m.times.windows(2) {
        assert!(w[1] > w[0]);
    }
    assert!(Mesh::geometric(0.0, 2.0, 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_mesh_invariants(t0 in -5.0f64..5.0, span in 0.01f64..10.0, k in 1usize..200) {
        let m = Mesh::uniform(t0, t0 + span, k).unwrap();
        prop_assert_eq!(m.k(), k);
        prop_assert_eq!(m.t0(), t0);
        prop_assert_eq!(m.t_end(), t0 + span);
        prop_assert!(m.times.windows(2).all(|w| w[1] > w[0]));
        prop_assert!((m.mesh_size() - span / k as f64).abs() < 1e-9 * span);
    }

    #[test]
    fn coarsen_keeps_endpoints(k in 1usize..40, f in 1usize..5) {
        let m = Mesh::uniform(0.0, 1.0, k * f).unwrap();
        let c = m.coarsen(f).unwrap();
        prop_assert_eq!(c.k(), k);
        prop_assert_eq!(c.t0(), 0.0);
        prop_assert_eq!(c.t_end(), 1.0);
    }

    #[test]
    fn csv_roundtrip_is_bit_exact(seed in any::<u64>(), n in 1usize..20, k in 1usize..10, sigma in 0.0f64..1.0) {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::uniform(0.0, 1.0, k).unwrap();
        let ens = gen_gbm(50.0, 0.1, sigma, &mesh, n, seed).unwrap();
        let p = dir.path().join("e.csv");
        write_csv(&ens, &p).unwrap();
        prop_assert_eq!(read_csv(&p).unwrap(), ens);
    }
}
