//! The infinitely divisible limit law of `Lambda`: a normal component plus
//! a compound-Poisson component, estimated from an experiment.
//!
//! Conventions. An atom at `y` (Y scale, `y > -1`) with intensity `nu`
//! contributes Poisson(`nu`) jumps of size `z = 2 log(1 + y)` to `Lambda`,
//! compensated by the deterministic shift `-nu * kappa`. On the trader side
//! `kappa = 2y`; on the buyer side `kappa = 2y / (1 + y)`. The log-mgf of
//! `Lambda` is then
//!
//! ```text
//! trader: mu_int s + sigma2_int s^2 / 2 + sum nu [(1+y)^{2s} - 1 - s kappa]
//! buyer: -mu_int s + sigma2_int s^2 / 2 + sum nu [(1+y)^{2s} - 1 - s kappa]
//! ```
//!
//! which the represented laws reproduce exactly up to truncation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::experiment::{DensityExperiment, StrategyTag, Variant};
use crate::normal;
use crate::stats::CHUNK_ROWS;

pub const DEFAULT_TAIL_TOL: f64 = 1e-12;
pub const MAX_ATOMS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Jump location on the Y scale.
    pub y: f64,
    /// `y^2`-weighted Levy mass, `intensity * y^2`.
    pub mass: f64,
    pub intensity: f64,
    /// Compensator per unit intensity.
    pub centering: f64,
}

impl Atom {
    pub fn trader(y: f64, intensity: f64) -> Atom {
        Atom {
            y,
            mass: intensity * y * y,
            intensity,
            centering: 2.0 * y,
        }
    }

    pub fn buyer(y: f64, intensity: f64) -> Atom {
        Atom {
            y,
            mass: intensity * y * y,
            intensity,
            centering: 2.0 * y / (1.0 + y),
        }
    }

    /// Jump of `Lambda` caused by one event.
    pub fn jump(&self) -> f64 {
        2.0 * self.y.ln_1p()
    }

    fn log_mgf_term(&self, s: f64) -> f64 {
        self.intensity * ((2.0 * s * self.y.ln_1p()).exp() - 1.0 - s * self.centering)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLaw {
    /// Limit of `sum E Y`.
    pub mu: f64,
    /// Limit of the truncated second moments `sum E Y^2 I(|Y| <= tau)`.
    pub sigma2: f64,
    /// `2 mu - sigma2`
    pub mu_interval: f64,
    /// `4 sigma2`
    pub sigma2_interval: f64,
    pub atoms_t0: Vec<Atom>,
    pub atoms_t: Vec<Atom>,
    /// Truncation level used by the estimator; `None` for analytic laws.
    pub tau: Option<f64>,
    /// `sigma2` recomputed at `tau / 2`, to gauge truncation sensitivity.
    pub sigma2_half_tau: Option<f64>,
}

impl LimitLaw {
    pub fn new(mu: f64, sigma2: f64, atoms_t0: Vec<Atom>, atoms_t: Vec<Atom>, tau: Option<f64>) -> Result<LimitLaw> {
        if !(sigma2 >= 0.0 && sigma2.is_finite() && mu.is_finite()) {
            return Err(invalid(format!("need finite mu and sigma2 >= 0, got {mu}, {sigma2}")));
        }
        for a in atoms_t0.iter().chain(&atoms_t) {
            if !(a.y > -1.0 && a.y.is_finite() && a.intensity >= 0.0 && a.intensity.is_finite()) {
                return Err(invalid(format!("invalid atom {a:?}")));
            }
        }
        Ok(LimitLaw {
            mu,
            sigma2,
            mu_interval: 2.0 * mu - sigma2,
            sigma2_interval: 4.0 * sigma2,
            atoms_t0,
            atoms_t,
            tau,
            sigma2_half_tau: None,
        })
    }

    /// The calm law with `mu_interval = -sigma2_interval / 2`.
    pub fn calm(sigma2_interval: f64) -> Result<LimitLaw> {
        let sigma2 = sigma2_interval / 4.0;
        LimitLaw::new(-0.5 * sigma2, sigma2, vec![], vec![], None)
    }

    /// A law whose trader side satisfies `E e^Lambda = 1` and whose buyer side
    /// is the `e^Lambda`-tilt of the trader side, the relations the in-sample
    /// estimator reproduces. `atoms` are trader-side `(y, intensity)` pairs.
    pub fn martingale(sigma2_interval: f64, atoms: &[(f64, f64)]) -> Result<LimitLaw> {
        let sigma2 = sigma2_interval / 4.0;
        let atoms_t0: Vec<Atom> = atoms.iter().map(|&(y, nu)| Atom::trader(y, nu)).collect();
        let atoms_t = atoms
            .iter()
            .map(|&(y, nu)| Atom::buyer(y, nu * (1.0 + y) * (1.0 + y)))
            .collect();
        let levy: f64 = atoms_t0.iter().map(|a| a.mass).sum();
        let mu_interval = -0.5 * sigma2_interval - levy;
        LimitLaw::new(0.5 * (mu_interval + sigma2), sigma2, atoms_t0, atoms_t, None)
    }

    pub fn is_calm(&self) -> bool {
        self.atoms_t0.is_empty() && self.atoms_t.is_empty()
    }

    pub fn sigma_interval(&self) -> f64 {
        self.sigma2_interval.sqrt()
    }

    pub fn atoms(&self, tag: StrategyTag) -> &[Atom] {
        match tag {
            StrategyTag::Trader => &self.atoms_t0,
            StrategyTag::Buyer => &self.atoms_t,
        }
    }

    /// Mean of the normal component on the given side.
    pub fn normal_mean(&self, tag: StrategyTag) -> f64 {
        match tag {
            StrategyTag::Trader => self.mu_interval,
            StrategyTag::Buyer => -self.mu_interval,
        }
    }

    pub fn poisson_law(&self, tag: StrategyTag, tail_tol: f64) -> Result<CompoundPoissonLaw> {
        poisson_component_law(self.atoms(tag), tail_tol)
    }

    /// Draws from the represented law: normal component plus an independent
    /// draw from the compound-Poisson component.
    pub fn sample(&self, tag: StrategyTag, n: usize, seed: u64) -> Result<Vec<f64>> {
        let cp = self.poisson_law(tag, DEFAULT_TAIL_TOL)?;
        let m = self.normal_mean(tag);
        let sd = self.sigma_interval();
        let alias = WeightedAliasIndex::new(cp.probs.clone()).map_err(|e| invalid(e.to_string()))?;
        let mut out = vec![0.0; n];
        out.par_chunks_mut(CHUNK_ROWS).enumerate().for_each(|(c, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            for v in chunk.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = m + sd * z + cp.support[alias.sample(&mut rng)];
            }
        });
        Ok(out)
    }
}

/// Discrete law of the compound-Poisson component's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundPoissonLaw {
    /// Sorted, distinct support points.
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
    pub tail_tol: f64,
}

impl CompoundPoissonLaw {
    pub fn point_mass() -> CompoundPoissonLaw {
        CompoundPoissonLaw {
            support: vec![0.0],
            probs: vec![1.0],
            tail_tol: 0.0,
        }
    }

    pub fn total_prob(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mgf(&self, s: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(v, q)| q * (s * v).exp())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().cloned().zip(self.probs.iter().cloned())
    }
}

fn poisson_counts(intensity: f64, budget: f64) -> Vec<f64> {
    let mut pmf = vec![(-intensity).exp()];
    let mut cum = pmf[0];
    let mut n = 0usize;
    // Stop once past the mode and the remaining tail is within budget.
    while (1.0 - cum > budget || (n as f64) < intensity) && n < 100_000 {
        let next = pmf[n] * intensity / (n + 1) as f64;
        n += 1;
        pmf.push(next);
        cum += next;
    }
    pmf
}

/// Convolution of the per-atom compound-Poisson laws, counts truncated once
/// the residual Poisson mass is negligible.
pub fn poisson_component_law(atoms: &[Atom], tail_tol: f64) -> Result<CompoundPoissonLaw> {
    if !(tail_tol > 0.0 && tail_tol <= 1e-6) {
        return Err(invalid(format!("tail_tol must lie in (0, 1e-6], got {tail_tol}")));
    }
    let mut law = CompoundPoissonLaw::point_mass();
    law.tail_tol = tail_tol;
    if atoms.is_empty() {
        return Ok(law);
    }
    let budget = tail_tol / (2.0 * atoms.len() as f64);
    for a in atoms {
        if a.y <= -1.0 {
            return Err(invalid(format!(
                "atom at y = {} implies a zero price ratio; its log jump is undefined",
                a.y
            )));
        }
        if !(a.intensity >= 0.0 && a.intensity.is_finite() && a.y.is_finite()) {
            return Err(invalid(format!("invalid atom {a:?}")));
        }
        let z = a.jump();
        let shift = -a.intensity * a.centering;
        let pmf = poisson_counts(a.intensity, budget);
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(law.support.len() * pmf.len());
        for (v, q) in law.iter() {
            for (n, pn) in pmf.iter().enumerate() {
                pts.push((v + n as f64 * z + shift, q * pn));
            }
        }
        law = merge_and_prune(pts, budget, tail_tol);
    }
    Ok(law)
}

fn merge_and_prune(mut pts: Vec<(f64, f64)>, budget: f64, tail_tol: f64) -> CompoundPoissonLaw {
    // Drop the smallest probabilities while the dropped total stays in budget.
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut dropped = 0.0;
    let mut keep_from = 0;
    for (i, p) in pts.iter().enumerate() {
        if dropped + p.1 > budget {
            keep_from = i;
            break;
        }
        dropped += p.1;
        keep_from = i + 1;
    }
    let mut pts = pts.split_off(keep_from.min(pts.len().saturating_sub(1)));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut support: Vec<f64> = Vec::with_capacity(pts.len());
    let mut probs: Vec<f64> = Vec::with_capacity(pts.len());
    for (v, q) in pts {
        match support.last() {
            Some(&last) if (v - last).abs() <= 1e-12 * last.abs().max(1.0) => {
                *probs.last_mut().unwrap() += q;
            }
            _ => {
                support.push(v);
                probs.push(q);
            }
        }
    }
    CompoundPoissonLaw {
        support,
        probs,
        tail_tol,
    }
}

/// Log-mgf of `Lambda` under the limit law. `s` must lie in (0, 1).
pub fn mgf_lambda(law: &LimitLaw, s: f64, tag: StrategyTag) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid(format!("s must lie in (0, 1), got {s}")));
    }
    Ok(log_mgf(law, s, tag))
}

/// Log-mgf without the range restriction (used at `s = 1` by the translation).
pub fn log_mgf(law: &LimitLaw, s: f64, tag: StrategyTag) -> f64 {
    law.normal_mean(tag) * s
        + 0.5 * law.sigma2_interval * s * s
        + law.atoms(tag).iter().map(|a| a.log_mgf_term(s)).sum::<f64>()
}

/// Mixture cdf of `Lambda` for evaluation at many points.
#[derive(Debug, Clone)]
pub struct MixtureCdf {
    mean: f64,
    sd: f64,
    cp: CompoundPoissonLaw,
}

impl MixtureCdf {
    pub fn new(law: &LimitLaw, tag: StrategyTag, tail_tol: f64) -> Result<MixtureCdf> {
        Ok(MixtureCdf {
            mean: law.normal_mean(tag),
            sd: law.sigma_interval(),
            cp: law.poisson_law(tag, tail_tol)?,
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.cp
            .iter()
            .map(|(y, q)| {
                let c = x - y - self.mean;
                if self.sd > 0.0 {
                    q * normal::cdf(c / self.sd)
                } else if c >= 0.0 {
                    q
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Density; zero for the degenerate (sd = 0) case.
    pub fn pdf(&self, x: f64) -> f64 {
        if self.sd == 0.0 {
            return 0.0;
        }
        self.cp
            .iter()
            .map(|(y, q)| q * normal::pdf((x - y - self.mean) / self.sd) / self.sd)
            .sum()
    }
}

/// Limit cdf of `Lambda` under the trader (t0) or buyer (T) strategy.
pub fn limit_cdf(law: &LimitLaw, tag: StrategyTag, x: f64) -> Result<f64> {
    Ok(MixtureCdf::new(law, tag, DEFAULT_TAIL_TOL)?.cdf(x))
}

/// Deterministic shift of the limit log-ratio law onto the risk-neutral frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationSpec {
    /// `r * delta_t`
    pub rate_term: f64,
    pub log_a: f64,
    pub mu_interval: f64,
    pub half_sigma2_interval: f64,
    /// `log M_{L*_T}(1)`
    pub log_mgf_t: f64,
    /// `rate_term - log_a - mu_interval - half_sigma2_interval - log_mgf_t`
    pub amount: f64,
}

impl TranslationSpec {
    /// The term that replaces `log a` in fair pricing: `log a + amount`.
    pub fn replacement(&self) -> f64 {
        self.rate_term - self.mu_interval - self.half_sigma2_interval - self.log_mgf_t
    }

    /// Mean of the normal component of the translated `log(S_T / s)`.
    pub fn translated_normal_mean(&self) -> f64 {
        self.replacement() + self.mu_interval
    }
}

pub fn translation_spec(law: &LimitLaw, r: f64, delta_t: f64, log_a: f64) -> Result<TranslationSpec> {
    if !(delta_t > 0.0) {
        return Err(invalid("delta_t must be > 0"));
    }
    let cp = law.poisson_law(StrategyTag::Buyer, DEFAULT_TAIL_TOL)?;
    let m1 = cp.mgf(1.0);
    if !(m1.is_finite() && m1 > 0.0) {
        return Err(invalid("M_{L*_T}(1) is not finite"));
    }
    let rate_term = r * delta_t;
    let half = 0.5 * law.sigma2_interval;
    let log_mgf_t = m1.ln();
    Ok(TranslationSpec {
        rate_term,
        log_a,
        mu_interval: law.mu_interval,
        half_sigma2_interval: half,
        log_mgf_t,
        amount: rate_term - log_a - law.mu_interval - half - log_mgf_t,
    })
}

/// Mean shift of a normal law under an exponential tilt `e^{A x}`.
pub fn normal_tilt(m: f64, sigma2: f64, a: f64) -> Result<(f64, f64)> {
    if !(sigma2 >= 0.0) {
        return Err(invalid("Sigma2 must be >= 0"));
    }
    Ok((m + a * sigma2, sigma2))
}

/// `sigma2_int = 4 delta (T - t0) c` on a geometric mesh with `E U_t^2 = c / t`.
pub fn sigma2_geometric(delta: f64, c: f64, delta_t: f64) -> Result<f64> {
    if !(delta > 0.0 && c > 0.0 && delta_t > 0.0) {
        return Err(invalid("delta, c and delta_t must be > 0"));
    }
    Ok(4.0 * delta * delta_t * c)
}

pub fn estimate_limit_law(exp: &DensityExperiment, tau: f64) -> Result<LimitLaw> {
    estimate_limit_law_variant(exp, tau, Variant::P1)
}

/// Estimates the limit law from the intervals used by `variant`.
pub fn estimate_limit_law_variant(exp: &DensityExperiment, tau: f64, variant: Variant) -> Result<LimitLaw> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("tau must be > 0, got {tau}")));
    }
    if variant == Variant::P2 && exp.k() < 2 {
        return Err(invalid("the P2 variant needs at least two intervals"));
    }
    let half = 0.5 * tau;
    let means = exp.interval_means(StrategyTag::Trader, |c| {
        let y = c.y();
        let y2 = y * y;
        [
            y,
            if y.abs() <= tau { y2 } else { 0.0 },
            if y.abs() <= half { y2 } else { 0.0 },
        ]
    });
    let js = variant.intervals(exp.k());
    let (j0, j1) = (*js.start(), *js.end());
    let sel = &means[j0 - 1..j1];
    let mu: f64 = sel.iter().map(|m| m[0]).sum();
    let sigma2: f64 = sel.iter().map(|m| m[1]).sum();
    let sigma2_half: f64 = sel.iter().map(|m| m[2]).sum();

    let atoms_t0 = cluster(exceedances(exp, StrategyTag::Trader, tau, j0, j1))
        .into_iter()
        .map(|(y, mass)| Atom::trader(y, mass / (y * y)))
        .collect();
    let atoms_t = cluster(exceedances(exp, StrategyTag::Buyer, tau, j0, j1))
        .into_iter()
        .map(|(u, mass_u)| {
            let nu = mass_u / (u * u);
            Atom::buyer(1.0 / (1.0 + u) - 1.0, nu)
        })
        .collect();
    let mut law = LimitLaw::new(mu, sigma2, atoms_t0, atoms_t, Some(tau))?;
    law.sigma2_half_tau = Some(sigma2_half);
    Ok(law)
}

/// Histogram of weighted exceedances: bin index -> (sum w x^2, sum w x^3),
/// normalised by the path count. `x` is Y (trader) or U (buyer).
fn exceedances(exp: &DensityExperiment, tag: StrategyTag, tau: f64, j0: usize, j1: usize) -> BTreeMap<i64, (f64, f64)> {
    let n = exp.n_paths();
    let width = 0.5 * tau;
    let n_chunks = n.div_ceil(CHUNK_ROWS);
    let parts: Vec<BTreeMap<i64, (f64, f64)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut bins = BTreeMap::new();
            for i in c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n) {
                for j in j0..=j1 {
                    let cell = exp.cell(i, j);
                    let x = match tag {
                        StrategyTag::Trader => cell.y(),
                        StrategyTag::Buyer => cell.u(),
                    };
                    if x.abs() > tau {
                        let w = cell.weight(tag);
                        let e: &mut (f64, f64) = bins.entry((x / width).floor() as i64).or_default();
                        e.0 += w * x * x;
                        e.1 += w * x * x * x;
                    }
                }
            }
            bins
        })
        .collect();
    let mut out: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for part in parts {
        for (b, (m, m3)) in part {
            let e = out.entry(b).or_default();
            e.0 += m;
            e.1 += m3;
        }
    }
    for v in out.values_mut() {
        v.0 /= n as f64;
        v.1 /= n as f64;
    }
    out
}

/// Turns histogram bins into at most `MAX_ATOMS` (location, mass) clusters;
/// the lightest cluster is merged into its nearest neighbour until few enough
/// remain.
fn cluster(bins: BTreeMap<i64, (f64, f64)>) -> Vec<(f64, f64)> {
    let mut cl: Vec<(f64, f64)> = bins
        .values()
        .filter(|(m, _)| *m > 0.0)
        .map(|&(m, m3)| (m3 / m, m))
        .collect();
    while cl.len() > MAX_ATOMS {
        let (i, _) = cl
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        let nb = if i == 0 {
            1
        } else if i == cl.len() - 1 || (cl[i].0 - cl[i - 1].0) <= (cl[i + 1].0 - cl[i].0) {
            i - 1
        } else {
            i + 1
        };
        let (a, b) = (cl[i], cl[nb]);
        let mass = a.1 + b.1;
        cl[nb] = ((a.0 * a.1 + b.0 * b.1) / mass, mass);
        cl.remove(i);
    }
    cl
}
