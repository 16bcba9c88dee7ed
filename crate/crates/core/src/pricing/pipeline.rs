use serde::{Deserialize, Serialize};

use super::{
    expected_growth, monte_carlo_price, oracle_bsm, oracle_quadrature_price, price_calm,
    price_noncalm, structural_trader_price, Branch, PriceMode, Quote,
};
use crate::diagnostics::{diagnose, DiagnosticsConfig, DiagnosticsReport};
use crate::error::{invalid, Result};
use crate::experiment::{price_from_sample, to_densities, CallSpec, Sampler, StrategyTag, Variant};
use crate::limit_law::{estimate_limit_law_variant, translation_spec, LimitLaw, TranslationSpec};
use crate::market_sim::PathEnsemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PricingConfig {
    pub strikes: Vec<f64>,
    pub rate: f64,
    pub mode: PriceMode,
    /// Spot at t0; defaults to the mean of the first price column.
    pub spot: Option<f64>,
    /// Price with the calm formulas even when the Lindeberg proxy disagrees.
    pub calm_only: bool,
    /// Meshes for the finite-n convergence table.
    pub convergence_k: Vec<usize>,
    pub n_draws: usize,
    pub sampler_seed: u64,
    /// Draws for the Monte-Carlo repricing oracle (0 disables it).
    pub mc_draws: usize,
    /// Relative tolerance against the closed form when the generator is a known GBM.
    pub bsm_rel_tol: f64,
    /// Absolute tolerance between the quoted fair price and quadrature.
    pub quadrature_tol: f64,
    pub growth_tol: f64,
    pub mc_sigmas: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig {
            strikes: vec![80.0, 100.0, 120.0],
            rate: 0.05,
            mode: PriceMode::Fair,
            spot: None,
            calm_only: false,
            convergence_k: vec![16, 64, 256],
            n_draws: 100_000,
            sampler_seed: 0x5EED,
            mc_draws: 1_000_000,
            bsm_rel_tol: 0.005,
            quadrature_tol: 1e-6,
            growth_tol: 1e-8,
            mc_sigmas: 3.0,
        }
    }
}

impl PricingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strikes.is_empty() || self.strikes.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(invalid("strikes must be a non-empty list of positive numbers"));
        }
        if !self.rate.is_finite() {
            return Err(invalid("rate must be finite"));
        }
        if let Some(s) = self.spot {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("spot must be positive"));
            }
        }
        if self.n_draws == 0 {
            return Err(invalid("n_draws must be >= 1"));
        }
        if self.convergence_k.contains(&0) {
            return Err(invalid("convergence_k entries must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub strike: f64,
    pub k_n: usize,
    pub n_paths: usize,
    /// Trader price from strategy draws on this mesh, fair shift.
    pub finite_n_price: f64,
    pub finite_n_se: f64,
    /// The same price in the limit, from the law estimated on this mesh.
    pub limit_price: f64,
    pub oracle_price: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Row {
    pub strike: f64,
    pub p1_fair: f64,
    pub p2_fair: f64,
    pub rel_gap: f64,
}

/// One independent check of a quote; `passed` is `value <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub strike: Option<f64>,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: &str, strike: Option<f64>, value: f64, tolerance: f64) -> OracleCheck {
        OracleCheck {
            name: name.to_string(),
            strike,
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub spot: f64,
    pub log_a: f64,
    pub delta_t: f64,
    pub k: usize,
    pub n_paths: usize,
    pub diagnostics: DiagnosticsReport,
    pub law: LimitLaw,
    pub translation: TranslationSpec,
    pub branch: Branch,
    pub quotes: Vec<Quote>,
    pub p2: Vec<P2Row>,
    pub convergence: Vec<ConvergenceRow>,
    pub oracle_checks: Vec<OracleCheck>,
    pub warnings: Vec<String>,
}

impl PipelineReport {
    pub fn all_checks_pass(&self) -> bool {
        self.oracle_checks.iter().all(|c| c.passed)
    }
}

fn quote_for(call: &CallSpec, law: &LimitLaw, log_a: f64, mode: PriceMode, calm: bool) -> Result<Quote> {
    if calm {
        let mut q = price_calm(call, law.sigma2_interval, log_a, mode)?;
        q.law = law.clone();
        Ok(q)
    } else {
        price_noncalm(call, law, log_a, mode)
    }
}

/// Ensemble to quotes: densities, diagnostics, limit law, translation, then
/// the calm or non-calm price per the diagnostics verdict, with a finite-n
/// convergence table, the P2 comparison and oracle checks.
pub fn pricing_pipeline(
    ens: &PathEnsemble,
    diag_cfg: &DiagnosticsConfig,
    cfg: &PricingConfig,
) -> Result<PipelineReport> {
    cfg.validate()?;
    diag_cfg.validate()?;
    let exp = to_densities(ens)?;
    let diagnostics = diagnose(&exp, diag_cfg)?;
    let mut warnings = diagnostics.warnings.clone();
    let calm_verdict = diagnostics.verdicts.calm;
    let use_calm = if calm_verdict {
        true
    } else if cfg.calm_only {
        warnings.push(
            "calm-only pricing forced although the Lindeberg proxy rejects calmness; the non-calm branch is recommended"
                .into(),
        );
        true
    } else {
        warnings.push("calmness not established; pricing with the non-calm branch".into());
        false
    };

    let spot = cfg.spot.unwrap_or(exp.es[0]);
    let log_a = exp.a_factor.ln();
    let delta_t = exp.mesh.span();
    let estimated = estimate_limit_law_variant(&exp, diag_cfg.tau, Variant::P1)?;
    // Forced calm pricing drops the atoms, and every oracle then checks the
    // law that was actually priced.
    let law = if use_calm && !estimated.is_calm() {
        LimitLaw::calm(estimated.sigma2_interval)?
    } else {
        estimated.clone()
    };
    let translation = translation_spec(&law, cfg.rate, delta_t, log_a)?;
    let law_p2 = if exp.k() >= 2 {
        Some(estimate_limit_law_variant(&exp, diag_cfg.tau, Variant::P2)?)
    } else {
        warnings.push("single interval: the P2 variant is undefined".into());
        None
    };
    let gbm_sigma = ens.model.gbm_sigma();

    let mut quotes = Vec::new();
    let mut p2 = Vec::new();
    let mut checks = Vec::new();
    let growth = expected_growth(&law, &translation)?;
    checks.push(OracleCheck::new(
        "risk_neutral_growth",
        None,
        (growth - (cfg.rate * delta_t).exp()).abs(),
        cfg.growth_tol,
    ));
    for &strike in &cfg.strikes {
        let call = CallSpec {
            spot,
            strike,
            rate: cfg.rate,
            delta_t,
        };
        let q = quote_for(&call, &law, log_a, cfg.mode, use_calm)?;
        let quad = oracle_quadrature_price(&law, &translation, &call)?;
        checks.push(OracleCheck::new(
            "fair_price_vs_quadrature",
            Some(strike),
            (q.fair_trader_price - quad).abs(),
            cfg.quadrature_tol,
        ));
        if let Some(sigma) = gbm_sigma {
            let bsm = oracle_bsm(spot, strike, cfg.rate, sigma * delta_t.sqrt(), delta_t);
            checks.push(OracleCheck::new(
                "fair_price_vs_bsm_rel",
                Some(strike),
                (q.fair_trader_price - bsm).abs() / bsm,
                cfg.bsm_rel_tol,
            ));
        }
        if cfg.mc_draws >= 2 && !law.is_calm() {
            let (mc, se) = monte_carlo_price(&law, &translation, &call, cfg.mc_draws, cfg.sampler_seed)?;
            checks.push(OracleCheck::new(
                "fair_price_vs_monte_carlo_se",
                Some(strike),
                (q.fair_trader_price - mc).abs() / se.max(f64::MIN_POSITIVE),
                cfg.mc_sigmas,
            ));
        }
        if let Some(l2) = &law_p2 {
            let q2 = quote_for(&call, l2, log_a, PriceMode::Fair, use_calm)?;
            p2.push(P2Row {
                strike,
                p1_fair: q.fair_trader_price,
                p2_fair: q2.fair_trader_price,
                rel_gap: (q2.fair_trader_price - q.fair_trader_price).abs() / q.fair_trader_price,
            });
        }
        quotes.push(q);
    }

    let sampler = Sampler::Resample {
        n_draws: cfg.n_draws,
        seed: cfg.sampler_seed,
    };
    let mut convergence = Vec::new();
    for &k in &cfg.convergence_k {
        if k > exp.k() || exp.k() % k != 0 {
            warnings.push(format!(
                "convergence mesh k = {k} is not a divisor of k = {}; skipped",
                exp.k()
            ));
            continue;
        }
        let ek = exp.coarsen(exp.k() / k)?;
        let law_k = estimate_limit_law_variant(&ek, diag_cfg.tau, Variant::P1)?;
        let tr_k = translation_spec(&law_k, cfg.rate, delta_t, log_a)?;
        let shift = tr_k.replacement();
        let sample = ek.strategy_sample(StrategyTag::Trader, Variant::P1, &sampler)?;
        if let Some(w) = &sample.warning {
            warnings.push(format!("k = {k}: {w}"));
        }
        for &strike in &cfg.strikes {
            let call = CallSpec {
                spot,
                strike,
                rate: cfg.rate,
                delta_t,
            };
            let fin = price_from_sample(&sample, &call, shift);
            let limit_price = structural_trader_price(&law_k, &call, shift)?;
            let oracle_price = match gbm_sigma {
                Some(sigma) => oracle_bsm(spot, strike, cfg.rate, sigma * delta_t.sqrt(), delta_t),
                None => oracle_quadrature_price(&law_k, &tr_k, &call)?,
            };
            convergence.push(ConvergenceRow {
                strike,
                k_n: k,
                n_paths: exp.n_paths(),
                finite_n_price: fin.price,
                finite_n_se: fin.std_error,
                limit_price,
                oracle_price,
                rel_err: (limit_price - oracle_price).abs() / oracle_price,
            });
        }
    }

    Ok(PipelineReport {
        spot,
        log_a,
        delta_t,
        k: exp.k(),
        n_paths: exp.n_paths(),
        diagnostics,
        law: estimated,
        translation,
        branch: if use_calm { Branch::Calm } else { Branch::NonCalm },
        quotes,
        p2,
        convergence,
        oracle_checks: checks,
        warnings,
    })
}
