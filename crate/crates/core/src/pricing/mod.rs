//! European call prices from the limit law: trader prices, buyer lower
//! bounds and fair (translated) prices, plus independent oracles.

mod pipeline;

pub use pipeline::{
    pricing_pipeline, ConvergenceRow, OracleCheck, P2Row, PipelineReport, PricingConfig,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::experiment::{CallSpec, StrategyTag};
use crate::limit_law::{
    translation_spec, CompoundPoissonLaw, LimitLaw, TranslationSpec, DEFAULT_TAIL_TOL,
};
use crate::normal;
use crate::quadrature;
use crate::stats::{self, CHUNK_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceMode {
    /// Untranslated: `log a[t0, T]` enters the strike condition.
    Raw,
    /// Translated to the risk-neutral frame.
    #[default]
    Fair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Calm,
    NonCalm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub delta_t: f64,
    pub log_a: f64,
    pub law: LimitLaw,
    pub trader_price: f64,
    pub buyer_lower_bound: f64,
    pub fair_trader_price: f64,
    pub fair_buyer_lower_bound: f64,
    /// The term standing in for `log a` in fair mode.
    pub fair_shift: f64,
    /// Calm branch only, for the quote's mode. `None` when `sigma = 0`.
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub mode: PriceMode,
    pub branch: Branch,
}

impl Quote {
    /// Trader price in the quote's mode.
    pub fn price(&self) -> f64 {
        match self.mode {
            PriceMode::Raw => self.trader_price,
            PriceMode::Fair => self.fair_trader_price,
        }
    }

    pub fn buyer_bound(&self) -> f64 {
        match self.mode {
            PriceMode::Raw => self.buyer_lower_bound,
            PriceMode::Fair => self.fair_buyer_lower_bound,
        }
    }

    fn shift(&self) -> f64 {
        match self.mode {
            PriceMode::Raw => self.log_a,
            PriceMode::Fair => self.fair_shift,
        }
    }
}

/// `Phi(num / sigma)`, with the `sigma = 0` limit taken as a step (one half
/// exactly at the boundary).
fn phi_over(num: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        normal::cdf(num / sigma)
    } else if num > 0.0 {
        1.0
    } else if num < 0.0 {
        0.0
    } else {
        0.5
    }
}

struct CalmLegs {
    trader: f64,
    buyer: f64,
    d1: Option<f64>,
}

fn calm_legs(call: &CallSpec, sigma2: f64, a: f64) -> CalmLegs {
    let disc = (-call.rate * call.delta_t).exp();
    let sigma = sigma2.sqrt();
    let lm = (call.spot / call.strike).ln() + a;
    if sigma == 0.0 {
        let ind = phi_over(lm, 0.0);
        let v = call.spot * ind - call.strike * disc * ind;
        return CalmLegs {
            trader: v.max(0.0),
            buyer: v,
            d1: None,
        };
    }
    let d1 = (lm + 0.5 * sigma2) / sigma;
    let d2 = d1 - sigma;
    // Rounding can push a far out-of-the-money difference just below zero.
    let trader = (call.spot * normal::cdf(d1) - call.strike * disc * normal::cdf(d2)).max(0.0);
    let buyer = call.spot * sigma2.exp() * normal::cdf(d1 + sigma) - call.strike * disc * normal::cdf(d1);
    CalmLegs {
        trader,
        buyer,
        d1: Some(d1),
    }
}

/// Calm-branch quote: normal limit law with variance `sigma2_interval`.
pub fn price_calm(call: &CallSpec, sigma2_interval: f64, log_a: f64, mode: PriceMode) -> Result<Quote> {
    call.validate()?;
    if !(sigma2_interval >= 0.0 && sigma2_interval.is_finite()) {
        return Err(invalid(format!("sigma2_interval must be >= 0, got {sigma2_interval}")));
    }
    if !log_a.is_finite() {
        return Err(invalid("log_a must be finite"));
    }
    let fair_shift = call.rate * call.delta_t;
    let raw = calm_legs(call, sigma2_interval, log_a);
    let fair = calm_legs(call, sigma2_interval, fair_shift);
    let d1 = match mode {
        PriceMode::Raw => raw.d1,
        PriceMode::Fair => fair.d1,
    };
    let sigma = sigma2_interval.sqrt();
    Ok(Quote {
        spot: call.spot,
        strike: call.strike,
        rate: call.rate,
        delta_t: call.delta_t,
        log_a,
        law: LimitLaw::calm(sigma2_interval)?,
        trader_price: raw.trader,
        buyer_lower_bound: raw.buyer,
        fair_trader_price: fair.trader,
        fair_buyer_lower_bound: fair.buyer,
        fair_shift,
        d1,
        d2: d1.map(|d| d - sigma),
        mode,
        branch: Branch::Calm,
    })
}

/// The mixture laws a non-calm price integrates against.
struct Mixtures {
    cp_t0: CompoundPoissonLaw,
    cp_t: CompoundPoissonLaw,
}

impl Mixtures {
    fn new(law: &LimitLaw) -> Result<Mixtures> {
        Ok(Mixtures {
            cp_t0: law.poisson_law(StrategyTag::Trader, DEFAULT_TAIL_TOL)?,
            cp_t: law.poisson_law(StrategyTag::Buyer, DEFAULT_TAIL_TOL)?,
        })
    }
}

/// Trader price with the limit taken in the untranslated structure and
/// `a` standing in for `log a`:
/// `s int Phi((l + a - mu + y)/sigma) dL*_T - X e^{-r Delta} int Phi((l + a + mu + y)/sigma) dL*_t0`.
pub fn structural_trader_price(law: &LimitLaw, call: &CallSpec, a: f64) -> Result<f64> {
    let mix = Mixtures::new(law)?;
    Ok(structural_trader(law, &mix, call, a))
}

fn structural_trader(law: &LimitLaw, mix: &Mixtures, call: &CallSpec, a: f64) -> f64 {
    let disc = (-call.rate * call.delta_t).exp();
    let sigma = law.sigma_interval();
    let lm = (call.spot / call.strike).ln() + a;
    let mu = law.mu_interval;
    let stock: f64 = mix.cp_t.iter().map(|(y, q)| q * phi_over(lm - mu + y, sigma)).sum();
    let cash: f64 = mix.cp_t0.iter().map(|(y, q)| q * phi_over(lm + mu + y, sigma)).sum();
    call.spot * stock - call.strike * disc * cash
}

fn structural_buyer(law: &LimitLaw, mix: &Mixtures, call: &CallSpec, a: f64) -> f64 {
    let disc = (-call.rate * call.delta_t).exp();
    let sigma = law.sigma_interval();
    let s2 = law.sigma2_interval;
    let lm = (call.spot / call.strike).ln() + a;
    let mu = law.mu_interval;
    let stock: f64 = mix
        .cp_t
        .iter()
        .map(|(y, q)| q * y.exp() * phi_over(lm - mu + s2 + y, sigma))
        .sum();
    let cash: f64 = mix.cp_t.iter().map(|(y, q)| q * phi_over(lm - mu + y, sigma)).sum();
    call.spot * (-mu + 0.5 * s2).exp() * stock - call.strike * disc * cash
}

/// Expected discounted payoff when `log(S_T/s) = R + N(mu_int, sigma2_int) + J`
/// with `J ~ L*_T`, in closed form per support point of `J`.
fn risk_neutral_price(law: &LimitLaw, cp_t: &CompoundPoissonLaw, call: &CallSpec, replacement: f64) -> f64 {
    let disc = (-call.rate * call.delta_t).exp();
    let sigma = law.sigma_interval();
    let m1 = cp_t.mgf(1.0);
    let lm = (call.spot / call.strike).ln() + replacement + law.mu_interval;
    cp_t.iter()
        .map(|(y, q)| {
            let d2 = lm + y;
            q * (call.spot * y.exp() / m1 * phi_over(d2 + law.sigma2_interval, sigma)
                - call.strike * disc * phi_over(d2, sigma))
        })
        .sum::<f64>()
        .max(0.0)
}

/// Non-calm quote from a full limit law. Laws without atoms are priced by
/// [`price_calm`], so both branches agree exactly there.
pub fn price_noncalm(call: &CallSpec, law: &LimitLaw, log_a: f64, mode: PriceMode) -> Result<Quote> {
    call.validate()?;
    if law.is_calm() {
        let mut q = price_calm(call, law.sigma2_interval, log_a, mode)?;
        q.law = law.clone();
        return Ok(q);
    }
    if !log_a.is_finite() {
        return Err(invalid("log_a must be finite"));
    }
    let mix = Mixtures::new(law)?;
    let tr = translation_spec(law, call.rate, call.delta_t, log_a)?;
    let fair_shift = tr.replacement();
    Ok(Quote {
        spot: call.spot,
        strike: call.strike,
        rate: call.rate,
        delta_t: call.delta_t,
        log_a,
        law: law.clone(),
        trader_price: structural_trader(law, &mix, call, log_a),
        buyer_lower_bound: structural_buyer(law, &mix, call, log_a),
        fair_trader_price: risk_neutral_price(law, &mix.cp_t, call, fair_shift),
        fair_buyer_lower_bound: structural_buyer(law, &mix, call, fair_shift),
        fair_shift,
        d1: None,
        d2: None,
        mode,
        branch: Branch::NonCalm,
    })
}

/// Limit probabilities of finishing in the money, `(trader, buyer)`.
pub fn strike_probabilities(quote: &Quote) -> Result<(f64, f64)> {
    let law = &quote.law;
    let mix = Mixtures::new(law)?;
    let sigma = law.sigma_interval();
    let lm = (quote.spot / quote.strike).ln() + quote.shift();
    let mu = law.mu_interval;
    let p_trader = mix.cp_t0.iter().map(|(y, q)| q * phi_over(lm + mu + y, sigma)).sum();
    let p_buyer = mix.cp_t.iter().map(|(y, q)| q * phi_over(lm - mu + y, sigma)).sum();
    Ok((p_trader, p_buyer))
}

/// Textbook Black-Scholes-Merton call price; `sigma_total = sigma sqrt(delta_t)`.
pub fn oracle_bsm(s: f64, x: f64, r: f64, sigma_total: f64, delta_t: f64) -> f64 {
    let disc = (-r * delta_t).exp();
    if x <= 0.0 {
        return s;
    }
    if sigma_total <= 0.0 {
        return (s - x * disc).max(0.0);
    }
    let d1 = ((s / x).ln() + r * delta_t + 0.5 * sigma_total * sigma_total) / sigma_total;
    let d2 = d1 - sigma_total;
    s * normal::cdf(d1) - x * disc * normal::cdf(d2)
}

const QUAD_WIDTH: f64 = 14.0;

/// `E*[e^{-r Delta} (S_T - X)^+]` under the translated law by adaptive
/// quadrature over the normal component and exact summation over the
/// Poisson support.
pub fn oracle_quadrature_price(law: &LimitLaw, tr: &TranslationSpec, call: &CallSpec) -> Result<f64> {
    call.validate()?;
    let cp = law.poisson_law(StrategyTag::Buyer, DEFAULT_TAIL_TOL)?;
    let disc = (-call.rate * call.delta_t).exp();
    let sigma = law.sigma_interval();
    let base = tr.log_a + tr.amount + law.mu_interval;
    let mut total = 0.0;
    for (y, q) in cp.iter() {
        let m = base + y;
        if sigma == 0.0 {
            total += q * disc * (call.spot * m.exp() - call.strike).max(0.0);
            continue;
        }
        let z_star = ((call.strike / call.spot).ln() - m) / sigma;
        let lo = z_star.max(-QUAD_WIDTH);
        let hi = sigma + QUAD_WIDTH;
        if lo >= hi {
            continue;
        }
        let r = quadrature::integrate(
            |z| (call.spot * (m + sigma * z).exp() - call.strike).max(0.0) * normal::pdf(z),
            lo,
            hi,
            1e-10,
        )?;
        total += q * disc * r.value;
    }
    Ok(total)
}

/// `E*[S_T / s]` under the translated law, by quadrature.
pub fn expected_growth(law: &LimitLaw, tr: &TranslationSpec) -> Result<f64> {
    let cp = law.poisson_law(StrategyTag::Buyer, DEFAULT_TAIL_TOL)?;
    let sigma = law.sigma_interval();
    let base = tr.log_a + tr.amount + law.mu_interval;
    let mut total = 0.0;
    for (y, q) in cp.iter() {
        let m = base + y;
        if sigma == 0.0 {
            total += q * m.exp();
            continue;
        }
        let r = quadrature::integrate(
            |z| (m + sigma * z).exp() * normal::pdf(z),
            sigma - QUAD_WIDTH,
            sigma + QUAD_WIDTH,
            1e-12,
        )?;
        total += q * r.value;
    }
    if !total.is_finite() {
        return Err(Error::Quadrature("non-finite expected growth".into()));
    }
    Ok(total)
}

/// Monte-Carlo price under the translated law; returns `(price, std_error)`.
pub fn monte_carlo_price(
    law: &LimitLaw,
    tr: &TranslationSpec,
    call: &CallSpec,
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    call.validate()?;
    if n_draws < 2 {
        return Err(invalid("need at least two Monte-Carlo draws"));
    }
    let cp = law.poisson_law(StrategyTag::Buyer, DEFAULT_TAIL_TOL)?;
    let alias = WeightedAliasIndex::new(cp.probs.clone()).map_err(|e| invalid(e.to_string()))?;
    let disc = (-call.rate * call.delta_t).exp();
    let sigma = law.sigma_interval();
    let base = tr.log_a + tr.amount + law.mu_interval;
    let mut payoffs = vec![0.0; n_draws];
    payoffs.par_chunks_mut(CHUNK_ROWS).enumerate().for_each(|(c, chunk)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        for v in chunk.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            let y = cp.support[alias.sample(&mut rng)];
            *v = disc * (call.spot * (base + sigma * z + y).exp() - call.strike).max(0.0);
        }
    });
    Ok(stats::mean_se(&payoffs))
}
