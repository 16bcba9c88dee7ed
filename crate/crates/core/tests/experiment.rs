use ndarray::Array2;
use proptest::prelude::*;
use riskneutral::experiment::{
    finite_n_price, holdout_martingale_deviation, to_densities, CallSpec, Weighting,
};
use riskneutral::market_sim::gen_gbm;
use riskneutral::pricing::oracle_bsm;
use riskneutral::{Mesh, ModelTag, PathEnsemble, Sampler, StrategyTag, Variant};

fn gbm(k: usize, n: usize, seed: u64) -> PathEnsemble {
    let mesh = Mesh::uniform(0.0, 1.0, k).unwrap();
    gen_gbm(100.0, 0.08, 0.2, &mesh, n, seed).unwrap()
}

#[test]
fn exact_identities_hold() {
    let exp = to_densities(&gbm(32, 3000, 1)).unwrap();
    assert!(exp.max_column_mean_error() <= 1e-12);
    assert!(exp.martingale_check().max_deviation <= 1e-12);
    let a = exp.lambda_per_path();
    let b = exp.lambda_direct();
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-10, "{worst}");
    for i in 0..exp.n_paths() {
        for j in 1..=exp.k() {
            let c = exp.cell(i, j);
            assert!(((1.0 + c.y()) * (1.0 + c.u()) - 1.0).abs() <= 1e-12);
            // p_j U^2 = p_{j-1} Y^2 pointwise.
            let lhs = c.p_next * c.u() * c.u();
            let rhs = c.p_prev * c.y() * c.y();
            assert!((lhs - rhs).abs() <= 1e-14 * (1.0 + rhs));
        }
    }
}

#[test]
fn raw_weighting_mean_identity() {
    // With mean-one columns, E[Y] = -E[Y^2] / 2 exactly under the trader weights.
    let exp = to_densities(&gbm(16, 2000, 4)).unwrap().with_weighting(Weighting::Raw);
    for m in exp.interval_means(StrategyTag::Trader, |c| [c.y(), c.y() * c.y()]) {
        assert!((m[0] + 0.5 * m[1]).abs() < 1e-14, "{m:?}");
    }
}

#[test]
fn forward_expect_matches_interval_means() {
    let exp = to_densities(&gbm(8, 500, 2)).unwrap();
    let means = exp.interval_means(StrategyTag::Buyer, |c| [c.u()]);
    for j in 1..=8 {
        let v = exp.forward_expect(j, StrategyTag::Buyer, |c| c.u()).unwrap();
        assert!((v - means[j - 1][0]).abs() < 1e-15);
    }
    assert!(exp.forward_expect(0, StrategyTag::Trader, |c| c.y()).is_err());
    assert!(exp.forward_expect(9, StrategyTag::Trader, |c| c.y()).is_err());
}

#[test]
fn single_path_densities_are_one() {
    let exp = to_densities(&gbm(4, 1, 3)).unwrap();
    assert!(exp.is_single_path());
    assert!(exp.p.iter().all(|v| *v == 1.0));
}

#[test]
fn holdout_martingale_error_is_monte_carlo_sized() {
    let dev = holdout_martingale_deviation(&gbm(8, 4000, 5)).unwrap();
    assert!(dev > 0.0 && dev < 0.05, "{dev}");
}

#[test]
fn resampler_is_deterministic() {
    let exp = to_densities(&gbm(16, 1000, 6)).unwrap();
    let s = Sampler::Resample {
        n_draws: 5000,
        seed: 9,
    };
    let a = exp.strategy_sample(StrategyTag::Trader, Variant::P1, &s).unwrap();
    let b = exp.strategy_sample(StrategyTag::Trader, Variant::P1, &s).unwrap();
    assert_eq!(a.lambda, b.lambda);
    assert!(exp
        .strategy_sample(StrategyTag::Trader, Variant::P2, &s)
        .is_ok());
}

#[test]
fn finite_n_price_near_closed_form() {
    let exp = to_densities(&gbm(64, 20_000, 7)).unwrap();
    let call = CallSpec {
        spot: 100.0,
        strike: 100.0,
        rate: 0.05,
        delta_t: 1.0,
    };
    // Calm limit with mu_int = -sigma2_int / 2: the fair shift is r Delta.
    let fin = finite_n_price(
        &exp,
        StrategyTag::Trader,
        &call,
        Variant::P1,
        0.05,
        &Sampler::Resample {
            n_draws: 50_000,
            seed: 1,
        },
    )
    .unwrap();
    let bsm = oracle_bsm(100.0, 100.0, 0.05, 0.2, 1.0);
    assert!((fin.price - bsm).abs() / bsm < 0.03, "{} vs {bsm}", fin.price);
    assert!(!fin.degenerate);
}

#[test]
fn path_product_sampler_warns_on_degeneracy() {
    let exp = to_densities(&gbm(64, 2000, 8)).unwrap();
    let s = exp
        .strategy_sample(StrategyTag::Buyer, Variant::P1, &Sampler::PathProduct { ess_floor: 0.5 })
        .unwrap();
    assert!(s.ess < 2000.0);
    let w: f64 = s.weights.as_ref().unwrap().iter().sum();
    assert!((w - 1.0).abs() < 1e-12);
}

#[test]
fn summary_rows_cover_every_interval() {
    let exp = to_densities(&gbm(8, 300, 9)).unwrap();
    let rows = exp.summary();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0].t_start, 0.0);
    assert_eq!(rows[7].t_end, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identities_on_arbitrary_positive_prices(
        n in 2usize..12,
        k in 1usize..8,
        raw in proptest::collection::vec(0.01f64..100.0, 96),
    ) {
        let w = k + 1;
        let prices = Array2::from_shape_fn((n, w), |(i, j)| raw[(i * w + j) % raw.len()] * (1.0 + i as f64));
        let mesh = Mesh::uniform(0.0, 1.0, k).unwrap();
        let ens = PathEnsemble::new(mesh, prices, 0, ModelTag::Ingested).unwrap();
        let exp = to_densities(&ens).unwrap();
        prop_assert!(exp.max_column_mean_error() <= 1e-12);
        prop_assert!(exp.martingale_check().max_deviation <= 1e-12);
        for i in 0..n {
            for j in 1..=k {
                let c = exp.cell(i, j);
                prop_assert!(((1.0 + c.y()) * (1.0 + c.u()) - 1.0).abs() <= 1e-12);
            }
        }
        let a = exp.lambda_per_path();
        let b = exp.lambda_direct();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }
}
