//! Data-driven checks of the structural assumptions: Hellinger summability,
//! calmness (Lindeberg), asymptotic negligibility, the Y/U sandwich and the
//! contiguity indicators.
//!
//! Every verdict is recomputable from the raw sums and thresholds stored in
//! the report.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::experiment::{Cell, DensityExperiment, StrategyTag, Weighting};
use crate::stats;

/// Increment used by a Lindeberg sum: `Y` under trader weights or `U` under
/// buyer weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Y,
    U,
}

impl Side {
    fn tag(self) -> StrategyTag {
        match self {
            Side::Y => StrategyTag::Trader,
            Side::U => StrategyTag::Buyer,
        }
    }

    fn inc(self, c: &Cell) -> f64 {
        match self {
            Side::Y => c.y(),
            Side::U => c.u(),
        }
    }
}

pub const SANDWICH_EPS_CEILING: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub eps_grid: Vec<f64>,
    /// An eps is calm when the fine-mesh sum is below this fraction of the
    /// coarse-mesh sum.
    pub calm_ratio: f64,
    /// The coarse mesh keeps every `refine_factor`-th time.
    pub refine_factor: usize,
    /// Fine-mesh sums below this are treated as zero (calm regardless of ratio).
    pub calm_floor: f64,
    pub tau: f64,
    /// A3 bound on the summed Hellinger distances; defaults to 10x the coarse value.
    pub bound_b: Option<f64>,
    pub neg1_margin: f64,
    pub levy_neg1_tol: f64,
    pub variance_tol_rel: f64,
    pub sandwich_eps: f64,
    pub uan_thresholds: Vec<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            eps_grid: vec![0.2, 0.1, 0.05, 0.02, 0.01],
            calm_ratio: 0.25,
            refine_factor: 4,
            calm_floor: 1e-9,
            tau: 0.05,
            bound_b: None,
            neg1_margin: 0.001,
            levy_neg1_tol: 1e-4,
            variance_tol_rel: 0.05,
            sandwich_eps: 0.05,
            uan_thresholds: vec![0.01, 0.02, 0.05, 0.1, 0.2],
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("eps_grid must be non-empty with positive entries"));
        }
        if !(self.calm_ratio > 0.0 && self.calm_ratio < 1.0) {
            return Err(invalid("calm_ratio must lie in (0, 1)"));
        }
        if self.refine_factor < 2 {
            return Err(invalid("refine_factor must be >= 2"));
        }
        if !(self.tau > 0.0) {
            return Err(invalid("tau must be > 0"));
        }
        if !(self.sandwich_eps > 0.0 && self.sandwich_eps <= SANDWICH_EPS_CEILING) {
            return Err(invalid(format!(
                "sandwich_eps must lie in (0, {SANDWICH_EPS_CEILING}]"
            )));
        }
        if !(self.neg1_margin > 0.0 && self.neg1_margin < 1.0) {
            return Err(invalid("neg1_margin must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HellingerProfile {
    pub h2: Vec<f64>,
    /// Standard error of each `2 h^2` estimate.
    pub two_h2_se: Vec<f64>,
    pub sup_h2: f64,
    pub sum_2h2: f64,
}

/// `h^2_j = E_{P_{t_{j-1}}} Y_j^2 / 2` per interval.
pub fn hellinger_profile(exp: &DensityExperiment) -> HellingerProfile {
    let n = exp.n_paths() as f64;
    let m = exp.interval_means(StrategyTag::Trader, |c| {
        let y2 = c.y() * c.y();
        [y2, c.p_prev * y2 * y2]
    });
    let h2: Vec<f64> = m.iter().map(|v| 0.5 * v[0]).collect();
    // Under the path measure the summand is w Y^2; its variance is
    // E[w^2 Y^4] - (E[w Y^2])^2, and E[w^2 Y^4] is the w-weighted mean of w Y^4.
    let two_h2_se = m
        .iter()
        .map(|v| 2.0 * ((v[1] - v[0] * v[0]).max(0.0) / n).sqrt())
        .collect();
    HellingerProfile {
        sup_h2: h2.iter().cloned().fold(0.0, f64::max),
        sum_2h2: 2.0 * h2.iter().sum::<f64>(),
        h2,
        two_h2_se,
    }
}

/// Tail sums `sum_j E[inc^2 I(|inc| > eps)]` for every threshold plus the
/// untruncated total, in one pass.
pub fn tail_sums(exp: &DensityExperiment, side: Side, thresholds: &[f64]) -> (Vec<f64>, f64) {
    let k = exp.k();
    let m = thresholds.len();
    let stride = m + 2;
    let tag = side.tag();
    let acc = stats::chunked_accumulate(exp.n_paths(), k * stride, |i, acc| {
        let row = exp.row(i);
        for j in 1..=k {
            let c = Cell {
                path: i,
                p_prev: row[j - 1],
                p_next: row[j],
            };
            let w = c.weight(tag);
            let x = side.inc(&c);
            let wx2 = w * x * x;
            let base = (j - 1) * stride;
            for (e, thr) in thresholds.iter().enumerate() {
                if x.abs() > *thr {
                    acc[base + e] += wx2;
                }
            }
            acc[base + m] += wx2;
            acc[base + m + 1] += w;
        }
    });
    let norm = |num: f64, den: f64| match exp.weighting {
        Weighting::SelfNormalized => num / den,
        Weighting::Raw => num / exp.n_paths() as f64,
    };
    let mut tails = vec![0.0; m];
    let mut total = 0.0;
    for j in 0..k {
        let base = j * stride;
        let den = acc[base + m + 1];
        for (e, t) in tails.iter_mut().enumerate() {
            *t += norm(acc[base + e], den);
        }
        total += norm(acc[base + m], den);
    }
    (tails, total)
}

/// Lindeberg sum `sum_j E[inc^2 I(|inc| > eps)]`.
pub fn lindeberg_sum(exp: &DensityExperiment, eps: f64, side: Side) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid("eps must be > 0"));
    }
    Ok(tail_sums(exp, side, &[eps]).0[0])
}

/// The complementary truncated part `sum_j E[inc^2 I(|inc| <= eps)]`.
pub fn truncated_sum(exp: &DensityExperiment, eps: f64, side: Side) -> f64 {
    let (tails, total) = tail_sums(exp, side, &[eps]);
    total - tails[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub eps: f64,
    /// Y-side sum at `eps / (1 - 2 eps)`.
    pub y_outer: f64,
    /// U-side sum at `eps / (1 - eps)`.
    pub u_middle: f64,
    /// Y-side sum at `eps`.
    pub y_inner: f64,
    pub holds: bool,
}

pub fn yu_sandwich_check(exp: &DensityExperiment, eps: f64) -> Result<SandwichCheck> {
    if !(eps > 0.0 && eps <= SANDWICH_EPS_CEILING) {
        return Err(invalid(format!(
            "sandwich eps must lie in (0, {SANDWICH_EPS_CEILING}], got {eps}"
        )));
    }
    let (y, _) = tail_sums(exp, Side::Y, &[eps / (1.0 - 2.0 * eps), eps]);
    let (u, _) = tail_sums(exp, Side::U, &[eps / (1.0 - eps)]);
    // The weighted summands coincide cell by cell (p_j U^2 = p_{j-1} Y^2), so
    // only rounding separates the three sums.
    let slack = 1e-12 * y[1].abs() + 1e-15;
    Ok(SandwichCheck {
        eps,
        y_outer: y[0],
        u_middle: u[0],
        y_inner: y[1],
        holds: y[0] <= u[0] + slack && u[0] <= y[1] + slack,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UanSummary {
    pub median_sup: f64,
    pub mean_sup: f64,
    pub p90_sup: f64,
    pub max_sup: f64,
    pub thresholds: Vec<f64>,
    /// Fraction of paths (physical measure) whose `max_j |Y_j|` exceeds each threshold.
    pub physical_fraction: Vec<f64>,
    /// `sum_j P_{t_{j-1}}(|Y_j| > thr)`, a union bound under the trader strategy.
    pub trader_union_bound: Vec<f64>,
}

pub fn uan_check(exp: &DensityExperiment, thresholds: &[f64]) -> UanSummary {
    let k = exp.k();
    let mut sups: Vec<f64> = (0..exp.n_paths())
        .map(|i| {
            let row = exp.row(i);
            (1..=k)
                .map(|j| ((row[j] / row[j - 1]).sqrt() - 1.0).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let n = sups.len() as f64;
    let physical_fraction = thresholds
        .iter()
        .map(|t| sups.iter().filter(|s| *s > t).count() as f64 / n)
        .collect();
    // Trader-weighted exceedance counts, sum_j E[I(|Y_j| > thr)].
    let counts = stats::chunked_accumulate(exp.n_paths(), thresholds.len(), |i, acc| {
        let row = exp.row(i);
        for j in 1..=k {
            let y = ((row[j] / row[j - 1]).sqrt() - 1.0).abs();
            for (e, t) in thresholds.iter().enumerate() {
                if y > *t {
                    acc[e] += row[j - 1];
                }
            }
        }
    });
    let tails: Vec<f64> = counts.iter().map(|v| v / n).collect();
    let mean_sup = stats::mean(&sups);
    sups.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| sups[((p * (n - 1.0)).round() as usize).min(sups.len() - 1)];
    UanSummary {
        median_sup: median_sorted(&sups),
        mean_sup,
        p90_sup: q(0.9),
        max_sup: *sups.last().unwrap(),
        thresholds: thresholds.to_vec(),
        physical_fraction,
        trader_union_bound: tails,
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContiguityReport {
    pub tau: f64,
    /// `sum_j Var_{P_{t_{j-1}}}(Y_j)`.
    pub total_variance: f64,
    /// Truncated second moment plus the mass of the exceedances above `tau`
    /// (the normal part plus the Levy part of the limit).
    pub limit_variance: f64,
    pub variance_match: f64,
    pub levy_neg1_mass: f64,
    pub margin: f64,
    pub variance_tol: f64,
    pub levy_neg1_tol: f64,
    pub contiguous_both_ways: bool,
}

pub fn contiguity_report(exp: &DensityExperiment, cfg: &DiagnosticsConfig) -> Result<ContiguityReport> {
    if !(cfg.tau > 0.0) {
        return Err(invalid("tau must be > 0"));
    }
    let edge = -1.0 + cfg.neg1_margin;
    let m = exp.interval_means(StrategyTag::Trader, |c| {
        let y = c.y();
        let y2 = y * y;
        [
            y,
            y2,
            if y.abs() <= cfg.tau { y2 } else { 0.0 },
            if y <= edge { y2 } else { 0.0 },
        ]
    });
    let total_variance: f64 = m.iter().map(|v| v[1] - v[0] * v[0]).sum();
    let truncated: f64 = m.iter().map(|v| v[2]).sum();
    let tail: f64 = m.iter().map(|v| v[1] - v[2]).sum();
    let limit_variance = truncated + tail;
    let levy_neg1_mass: f64 = m.iter().map(|v| v[3]).sum();
    let variance_match = (total_variance - limit_variance).abs();
    let variance_tol = cfg.variance_tol_rel * limit_variance + 1e-12;
    Ok(ContiguityReport {
        tau: cfg.tau,
        total_variance,
        limit_variance,
        variance_match,
        levy_neg1_mass,
        margin: cfg.neg1_margin,
        variance_tol,
        levy_neg1_tol: cfg.levy_neg1_tol,
        contiguous_both_ways: variance_match <= variance_tol && levy_neg1_mass <= cfg.levy_neg1_tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LindebergRow {
    pub eps: f64,
    pub y_fine: f64,
    pub y_coarse: f64,
    pub u_fine: f64,
    pub u_coarse: f64,
    pub y_calm: bool,
    pub u_calm: bool,
    /// Calm at this eps only if both sides vanish under refinement.
    pub calm: bool,
}

fn eps_calm(fine: f64, coarse: f64, cfg: &DiagnosticsConfig) -> bool {
    fine <= cfg.calm_floor || fine < cfg.calm_ratio * coarse
}

/// Compares Lindeberg sums on the experiment's mesh with those on the mesh
/// coarsened by `refine_factor`.
pub fn lindeberg_table(
    fine: &DensityExperiment,
    coarse: &DensityExperiment,
    cfg: &DiagnosticsConfig,
) -> Vec<LindebergRow> {
    let (yf, _) = tail_sums(fine, Side::Y, &cfg.eps_grid);
    let (uf, _) = tail_sums(fine, Side::U, &cfg.eps_grid);
    let (yc, _) = tail_sums(coarse, Side::Y, &cfg.eps_grid);
    let (uc, _) = tail_sums(coarse, Side::U, &cfg.eps_grid);
    cfg.eps_grid
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            let y_calm = eps_calm(yf[e], yc[e], cfg);
            let u_calm = eps_calm(uf[e], uc[e], cfg);
            LindebergRow {
                eps,
                y_fine: yf[e],
                y_coarse: yc[e],
                u_fine: uf[e],
                u_coarse: uc[e],
                y_calm,
                u_calm,
                calm: y_calm && u_calm,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub calm: bool,
    /// Calm judged from the Y side alone / the U side alone.
    pub calm_y: bool,
    pub calm_u: bool,
    pub a3: bool,
    pub contiguous_both_ways: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub k: usize,
    pub coarse_k: usize,
    pub n_paths: usize,
    pub hellinger: HellingerProfile,
    pub coarse_sup_h2: f64,
    pub coarse_sum_2h2: f64,
    pub bound_b: f64,
    pub lindeberg: Vec<LindebergRow>,
    pub uan: UanSummary,
    pub sandwich: SandwichCheck,
    pub contiguity: ContiguityReport,
    /// Spearman correlation between `S_{t0}` and the first density ratio;
    /// the ratios should not depend on the starting price.
    pub a5_rank_correlation: f64,
    pub config: DiagnosticsConfig,
    pub verdicts: Verdicts,
    pub warnings: Vec<String>,
}

pub fn diagnose(exp: &DensityExperiment, cfg: &DiagnosticsConfig) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    if exp.is_single_path() {
        warnings.push("single path: densities are identically one".to_string());
    }
    let coarse = if exp.k() >= cfg.refine_factor {
        exp.coarsen(cfg.refine_factor)?
    } else {
        warnings.push(format!(
            "k = {} is too small to refine by {}; calmness cannot be assessed",
            exp.k(),
            cfg.refine_factor
        ));
        exp.clone()
    };
    let refinable = coarse.k() < exp.k();
    let hellinger = hellinger_profile(exp);
    let coarse_h = hellinger_profile(&coarse);
    let bound_b = cfg.bound_b.unwrap_or(10.0 * coarse_h.sum_2h2);
    let a3 = refinable && hellinger.sup_h2 <= coarse_h.sup_h2 && hellinger.sum_2h2 <= bound_b;
    let lindeberg = lindeberg_table(exp, &coarse, cfg);
    let calm_y = refinable && lindeberg.iter().all(|r| r.y_calm);
    let calm_u = refinable && lindeberg.iter().all(|r| r.u_calm);
    let calm = refinable && lindeberg.iter().all(|r| r.calm);
    if calm_y != calm_u {
        warnings.push("Y-side and U-side calmness verdicts disagree".to_string());
    }
    let contiguity = contiguity_report(exp, cfg)?;
    if !contiguity.contiguous_both_ways {
        warnings.push("contiguity indicators failed; trader and buyer limits may not be linked".into());
    }
    let n = exp.n_paths();
    let s0: Vec<f64> = (0..n).map(|i| exp.row(i)[0]).collect();
    let r1: Vec<f64> = (0..n).map(|i| exp.row(i)[1] / exp.row(i)[0]).collect();
    let a5 = stats::spearman(&s0, &r1);
    if n >= 30 && a5.abs() > 3.0 / (n as f64 - 1.0).sqrt() {
        warnings.push(format!(
            "first density ratio is rank-correlated with the starting price (rho = {a5:.3})"
        ));
    }
    Ok(DiagnosticsReport {
        k: exp.k(),
        coarse_k: coarse.k(),
        n_paths: n,
        coarse_sup_h2: coarse_h.sup_h2,
        coarse_sum_2h2: coarse_h.sum_2h2,
        bound_b,
        hellinger,
        lindeberg,
        uan: uan_check(exp, &cfg.uan_thresholds),
        sandwich: yu_sandwich_check(exp, cfg.sandwich_eps)?,
        contiguity,
        a5_rank_correlation: a5,
        config: cfg.clone(),
        verdicts: Verdicts {
            calm,
            calm_y,
            calm_u,
            a3,
            contiguous_both_ways: contiguity.contiguous_both_ways,
        },
        warnings,
    })
}
