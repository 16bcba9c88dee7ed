//! Prices-densities, Y/U increments and the trader/buyer strategy measures.
//!
//! `ES_t` is estimated by the cross-path sample mean, so every column of the
//! density matrix has mean one and the in-sample martingale identities hold
//! to rounding. `Y` and `U` are derived from the densities on demand instead
//! of being stored, which keeps a 10^5 x 1025 experiment under 1 GB.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market_sim::{Mesh, PathEnsemble};
use crate::stats;

/// Which product measure an expectation is taken under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyTag {
    /// Interval j weighted by the density at its left end, `p_{t_{j-1}}`.
    Trader,
    /// Interval j weighted by the density at its right end, `p_{t_j}`.
    Buyer,
}

/// P1 uses every interval; P2 omits the first one (pricing from `t_1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    P1,
    P2,
}

impl Variant {
    /// 1-based interval indices included by the variant.
    pub fn intervals(self, k: usize) -> std::ops::RangeInclusive<usize> {
        match self {
            Variant::P1 => 1..=k,
            Variant::P2 => 2..=k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Divide by the realised weight sum.
    #[default]
    SelfNormalized,
    /// Divide by the path count; the weights have mean one by construction.
    Raw,
}

/// One path on one interval.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub path: usize,
    pub p_prev: f64,
    pub p_next: f64,
}

impl Cell {
    pub fn ratio(&self) -> f64 {
        self.p_next / self.p_prev
    }

    /// `Y = sqrt(p_j / p_{j-1}) - 1`
    pub fn y(&self) -> f64 {
        (self.p_next / self.p_prev).sqrt() - 1.0
    }

    /// `U = sqrt(p_{j-1} / p_j) - 1`
    pub fn u(&self) -> f64 {
        (self.p_prev / self.p_next).sqrt() - 1.0
    }

    pub fn weight(&self, tag: StrategyTag) -> f64 {
        match tag {
            StrategyTag::Trader => self.p_prev,
            StrategyTag::Buyer => self.p_next,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityExperiment {
    pub mesh: Mesh,
    /// `n_paths x (k+1)` prices-densities; every column has mean one.
    pub p: Array2<f64>,
    /// Cross-path means of the prices, the in-sample `ES_t`.
    pub es: Vec<f64>,
    pub a_factor: f64,
    pub weighting: Weighting,
}

pub fn to_densities(ens: &PathEnsemble) -> Result<DensityExperiment> {
    let n = ens.n_paths();
    let w = ens.mesh.times.len();
    let s = ens.prices.as_slice().expect("standard layout");
    if s.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN price in ensemble".into()));
    }
    let sums = stats::chunked_accumulate(n, w, |i, acc| {
        for (a, v) in acc.iter_mut().zip(&s[i * w..(i + 1) * w]) {
            *a += v;
        }
    });
    let es: Vec<f64> = sums.iter().map(|v| v / n as f64).collect();
    if es.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidInput("non-positive or infinite column mean".into()));
    }
    let mut p = vec![0.0; n * w];
    p.par_chunks_mut(w).enumerate().for_each(|(i, row)| {
        for j in 0..w {
            row[j] = s[i * w + j] / es[j];
        }
    });
    Ok(DensityExperiment {
        mesh: ens.mesh.clone(),
        p: Array2::from_shape_vec((n, w), p).expect("shape"),
        a_factor: es[w - 1] / es[0],
        es,
        weighting: Weighting::SelfNormalized,
    })
}

impl DensityExperiment {
    pub fn n_paths(&self) -> usize {
        self.p.nrows()
    }

    pub fn k(&self) -> usize {
        self.mesh.k()
    }

    /// A single path is its own mean, so every density is one.
    pub fn is_single_path(&self) -> bool {
        self.n_paths() == 1
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.k() + 1;
        &self.p.as_slice().expect("standard layout")[i * w..(i + 1) * w]
    }

    pub fn cell(&self, i: usize, j: usize) -> Cell {
        let row = self.row(i);
        Cell {
            path: i,
            p_prev: row[j - 1],
            p_next: row[j],
        }
    }

    fn check_interval(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.k() {
            return Err(invalid(format!("interval index {j} outside 1..={}", self.k())));
        }
        Ok(())
    }

    fn normalise(&self, num: f64, den: f64) -> f64 {
        match self.weighting {
            Weighting::SelfNormalized => num / den,
            Weighting::Raw => num / self.n_paths() as f64,
        }
    }

    /// Empirical `E_{P_{t_{j-1}}} f` (trader) or `E_{P_{t_j}} f` (buyer) on
    /// interval `j` (1-based).
    pub fn forward_expect<F>(&self, j: usize, tag: StrategyTag, f: F) -> Result<f64>
    where
        F: Fn(&Cell) -> f64 + Sync,
    {
        self.check_interval(j)?;
        let acc = stats::chunked_accumulate(self.n_paths(), 2, |i, acc| {
            let c = self.cell(i, j);
            let w = c.weight(tag);
            acc[0] += w * f(&c);
            acc[1] += w;
        });
        Ok(self.normalise(acc[0], acc[1]))
    }

    /// Strategy expectations of `M` functionals on every interval in one pass.
    /// Entry `j - 1` holds interval `j`.
    pub fn interval_means<const M: usize, F>(&self, tag: StrategyTag, f: F) -> Vec<[f64; M]>
    where
        F: Fn(&Cell) -> [f64; M] + Sync,
    {
        let k = self.k();
        let stride = M + 1;
        let acc = stats::chunked_accumulate(self.n_paths(), k * stride, |i, acc| {
            let row = self.row(i);
            for j in 1..=k {
                let c = Cell {
                    path: i,
                    p_prev: row[j - 1],
                    p_next: row[j],
                };
                let w = c.weight(tag);
                let vals = f(&c);
                let base = (j - 1) * stride;
                for m in 0..M {
                    acc[base + m] += w * vals[m];
                }
                acc[base + M] += w;
            }
        });
        (0..k)
            .map(|j| {
                let base = j * stride;
                let mut out = [0.0; M];
                for m in 0..M {
                    out[m] = self.normalise(acc[base + m], acc[base + M]);
                }
                out
            })
            .collect()
    }

    /// The same paths observed on every `factor`-th mesh time. Column means
    /// stay exactly one because each column keeps its own `ES_t`.
    pub fn coarsen(&self, factor: usize) -> Result<DensityExperiment> {
        let mesh = self.mesh.coarsen(factor)?;
        let idx: Vec<usize> = mesh
            .times
            .iter()
            .map(|t| self.mesh.times.iter().position(|s| s == t).expect("coarse time"))
            .collect();
        Ok(DensityExperiment {
            p: self.p.select(ndarray::Axis(1), &idx).as_standard_layout().into_owned(),
            es: idx.iter().map(|&j| self.es[j]).collect(),
            a_factor: self.a_factor,
            weighting: self.weighting,
            mesh,
        })
    }

    /// Per-path `Lambda = 2 sum_j log(1 + Y_j)`.
    pub fn lambda_per_path(&self) -> Vec<f64> {
        let k = self.k();
        (0..self.n_paths())
            .into_par_iter()
            .map(|i| {
                let row = self.row(i);
                (1..=k)
                    .map(|j| 2.0 * ((row[j] / row[j - 1]).sqrt() - 1.0).ln_1p())
                    .sum()
            })
            .collect()
    }

    /// Per-path `log(p_T / p_{t0})`.
    pub fn lambda_direct(&self) -> Vec<f64> {
        let k = self.k();
        (0..self.n_paths())
            .map(|i| {
                let row = self.row(i);
                (row[k] / row[0]).ln()
            })
            .collect()
    }

    /// `|E_{P_{t_{j-1}}}[p_j / p_{j-1}] - 1|` for each interval.
    pub fn martingale_check(&self) -> MartingaleCheck {
        let dev: Vec<f64> = self
            .interval_means(StrategyTag::Trader, |c| [c.ratio()])
            .iter()
            .map(|m| (m[0] - 1.0).abs())
            .collect();
        let max = dev.iter().cloned().fold(0.0, f64::max);
        MartingaleCheck {
            deviations: dev,
            max_deviation: max,
        }
    }

    /// Largest deviation of a density column mean from one.
    pub fn max_column_mean_error(&self) -> f64 {
        let w = self.k() + 1;
        let sums = stats::chunked_accumulate(self.n_paths(), w, |i, acc| {
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v;
            }
        });
        sums.iter()
            .map(|s| (s / self.n_paths() as f64 - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Draws `Lambda` under a strategy measure.
    pub fn strategy_sample(
        &self,
        tag: StrategyTag,
        variant: Variant,
        sampler: &Sampler,
    ) -> Result<StrategySample> {
        if variant == Variant::P2 && self.k() < 2 {
            return Err(invalid("the P2 variant needs at least two intervals"));
        }
        match *sampler {
            Sampler::Resample { n_draws, seed } => self.resample(tag, variant, n_draws, seed),
            Sampler::PathProduct { ess_floor } => Ok(self.path_product(tag, variant, ess_floor)),
        }
    }

    fn resample(
        &self,
        tag: StrategyTag,
        variant: Variant,
        n_draws: usize,
        seed: u64,
    ) -> Result<StrategySample> {
        if n_draws == 0 {
            return Err(invalid("resampling needs n_draws >= 1"));
        }
        let js: Vec<usize> = variant.intervals(self.k()).collect();
        let n = self.n_paths();
        let col = |j: usize| -> Vec<f64> { (0..n).map(|i| self.row(i)[j]).collect() };
        let blocks: Vec<Vec<f64>> = js
            .par_chunks(16)
            .map(|block| {
                let mut acc = vec![0.0; n_draws];
                for &j in block {
                    let wcol = col(if tag == StrategyTag::Trader { j - 1 } else { j });
                    let alias = WeightedAliasIndex::new(wcol).expect("positive densities");
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(j as u64);
                    for a in acc.iter_mut() {
                        let i = alias.sample(&mut rng);
                        let row = self.row(i);
                        *a += 2.0 * ((row[j] / row[j - 1]).sqrt() - 1.0).ln_1p();
                    }
                }
                acc
            })
            .collect();
        let mut lambda = vec![0.0; n_draws];
        for b in blocks {
            for (l, v) in lambda.iter_mut().zip(b) {
                *l += v;
            }
        }
        Ok(StrategySample {
            lambda,
            weights: None,
            ess: n_draws as f64,
            warning: None,
        })
    }

    fn path_product(&self, tag: StrategyTag, variant: Variant, ess_floor: f64) -> StrategySample {
        let js: Vec<usize> = variant.intervals(self.k()).collect();
        let (lambda, logw): (Vec<f64>, Vec<f64>) = (0..self.n_paths())
            .into_par_iter()
            .map(|i| {
                let row = self.row(i);
                let mut lam = 0.0;
                let mut lw = 0.0;
                for &j in &js {
                    lam += 2.0 * ((row[j] / row[j - 1]).sqrt() - 1.0).ln_1p();
                    lw += match tag {
                        StrategyTag::Trader => row[j - 1].ln(),
                        StrategyTag::Buyer => row[j].ln(),
                    };
                }
                (lam, lw)
            })
            .unzip();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let ess = stats::ess(&weights);
        let warning = (ess < ess_floor).then(|| {
            format!(
                "effective sample size {ess:.1} below floor {ess_floor:.1}; product weights have degenerated"
            )
        });
        StrategySample {
            lambda,
            weights: Some(weights),
            ess,
            warning,
        }
    }

    /// Step cdf of `Lambda` under a strategy measure.
    pub fn empirical_cdf(
        &self,
        tag: StrategyTag,
        variant: Variant,
        sampler: &Sampler,
    ) -> Result<StepCdf> {
        let s = self.strategy_sample(tag, variant, sampler)?;
        Ok(StepCdf::new(&s))
    }

    /// Per-interval summary rows for export.
    pub fn summary(&self) -> Vec<IntervalSummary> {
        let trader = self.interval_means(StrategyTag::Trader, |c| {
            let y = c.y();
            [y, y * y, c.p_prev]
        });
        let buyer = self.interval_means(StrategyTag::Buyer, |c| [c.p_next]);
        // mean of w^2 under the w-weighted mean is sum(w^2)/sum(w), and sum(w) = n
        let n = self.n_paths() as f64;
        let ess = |m: f64| n / m;
        (0..self.k())
            .map(|j| IntervalSummary {
                interval: j + 1,
                t_start: self.mesh.times[j],
                t_end: self.mesh.times[j + 1],
                h2: 0.5 * trader[j][1],
                mean_y: trader[j][0],
                mean_y2: trader[j][1],
                trader_weight_ess: ess(trader[j][2]),
                buyer_weight_ess: ess(buyer[j][0]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub interval: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub h2: f64,
    pub mean_y: f64,
    pub mean_y2: f64,
    pub trader_weight_ess: f64,
    pub buyer_weight_ess: f64,
}

/// How to draw `Lambda` under a strategy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "snake_case")]
pub enum Sampler {
    /// Independent per-interval draws of a path index with probability
    /// proportional to the strategy weight, i.e. sampling the product
    /// measure directly.
    Resample { n_draws: usize, seed: u64 },
    /// Each path weighted by its own product of densities (self-normalised,
    /// in log space). Degenerates quickly as the mesh is refined.
    PathProduct { ess_floor: f64 },
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Resample {
            n_draws: 100_000,
            seed: 0x5EED,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrategySample {
    pub lambda: Vec<f64>,
    /// Normalised weights; `None` means equal weights.
    pub weights: Option<Vec<f64>>,
    pub ess: f64,
    pub warning: Option<String>,
}

impl StrategySample {
    fn weight(&self, d: usize) -> f64 {
        match &self.weights {
            Some(w) => w[d],
            None => 1.0 / self.lambda.len() as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepCdf {
    pub points: Vec<f64>,
    /// Cumulative probability at and below each point.
    pub cum: Vec<f64>,
    pub ess: f64,
    pub warning: Option<String>,
}

impl StepCdf {
    fn new(s: &StrategySample) -> StepCdf {
        let mut idx: Vec<usize> = (0..s.lambda.len()).collect();
        idx.sort_by(|&a, &b| s.lambda[a].total_cmp(&s.lambda[b]));
        let mut points = Vec::with_capacity(idx.len());
        let mut cum: Vec<f64> = Vec::with_capacity(idx.len());
        let mut total = 0.0;
        for &d in &idx {
            total += s.weight(d);
            if points.last() == Some(&s.lambda[d]) {
                *cum.last_mut().unwrap() = total;
            } else {
                points.push(s.lambda[d]);
                cum.push(total);
            }
        }
        cum.iter_mut().for_each(|c| *c /= total);
        StepCdf {
            points,
            cum,
            ess: s.ess,
            warning: s.warning.clone(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.points.partition_point(|p| *p <= x) {
            0 => 0.0,
            n => self.cum[n - 1],
        }
    }

    /// Kolmogorov distance to a continuous cdf.
    pub fn ks_distance<F: Fn(f64) -> f64>(&self, cdf: F) -> f64 {
        let mut d: f64 = 0.0;
        let mut prev = 0.0;
        for (x, c) in self.points.iter().zip(&self.cum) {
            let f = cdf(*x);
            d = d.max((prev - f).abs()).max((c - f).abs());
            prev = *c;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallSpec {
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub delta_t: f64,
}

impl CallSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0 && self.strike > 0.0) {
            return Err(invalid("spot and strike must be positive"));
        }
        if !(self.delta_t > 0.0 && self.rate.is_finite()) {
            return Err(invalid("need delta_t > 0 and a finite rate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteNPrice {
    pub price: f64,
    pub std_error: f64,
    /// No draw finished in the money; the price is reported as zero.
    pub degenerate: bool,
    pub ess: f64,
}

/// Finite-mesh call price from strategy draws of `Lambda`:
/// `s E[e^Lambda I] - X e^{-r Delta} E[I]` with `I = {s e^{A + Lambda} > X}`.
///
/// `log_shift` is `A`: `log a` for the untranslated price, or the
/// translation's replacement term for the fair price.
pub fn finite_n_price(
    exp: &DensityExperiment,
    tag: StrategyTag,
    call: &CallSpec,
    variant: Variant,
    log_shift: f64,
    sampler: &Sampler,
) -> Result<FiniteNPrice> {
    call.validate()?;
    let sample = exp.strategy_sample(tag, variant, sampler)?;
    Ok(price_from_sample(&sample, call, log_shift))
}

pub fn price_from_sample(sample: &StrategySample, call: &CallSpec, log_shift: f64) -> FiniteNPrice {
    let disc = (-call.rate * call.delta_t).exp();
    let threshold = (call.strike / call.spot).ln() - log_shift;
    let payoffs: Vec<f64> = sample
        .lambda
        .iter()
        .map(|&l| {
            if l > threshold {
                call.spot * l.exp() - call.strike * disc
            } else {
                0.0
            }
        })
        .collect();
    if !sample.lambda.iter().any(|&l| l > threshold) {
        return FiniteNPrice {
            price: 0.0,
            std_error: 0.0,
            degenerate: true,
            ess: sample.ess,
        };
    }
    let (price, std_error) = match &sample.weights {
        None => stats::mean_se(&payoffs),
        Some(w) => {
            let m: f64 = payoffs.iter().zip(w).map(|(p, w)| p * w).sum();
            let var: f64 = payoffs.iter().zip(w).map(|(p, w)| w * (p - m) * (p - m)).sum();
            (m, (var / sample.ess).sqrt())
        }
    };
    FiniteNPrice {
        price,
        std_error,
        degenerate: false,
        ess: sample.ess,
    }
}

/// Martingale deviations when `ES_t` comes from one half of the paths and
/// the ratios from the other, i.e. the out-of-sample Monte-Carlo error.
pub fn holdout_martingale_deviation(ens: &PathEnsemble) -> Result<f64> {
    let n = ens.n_paths();
    if n < 4 {
        return Err(invalid("held-out split needs at least 4 paths"));
    }
    let half = n / 2;
    let train = ens.slice_paths(0..half)?;
    let test = ens.slice_paths(half..n)?;
    let es = to_densities(&train)?.es;
    let w = es.len();
    let m = n - half;
    let acc = stats::chunked_accumulate(m, w - 1, |i, acc| {
        let row = test.row(i);
        for j in 1..w {
            let prev = row[j - 1] / es[j - 1];
            let next = row[j] / es[j];
            acc[j - 1] += prev * (next / prev);
        }
    });
    Ok(acc
        .iter()
        .map(|s| (s / m as f64 - 1.0).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_sim::{gen_gbm, ModelTag};

    fn two_path() -> DensityExperiment {
        let mesh = Mesh::uniform(0.0, 1.0, 2).unwrap();
        let prices = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 1.0, 4.0, 1.0]).unwrap();
        let ens = PathEnsemble::new(mesh, prices, 0, ModelTag::Ingested).unwrap();
        to_densities(&ens).unwrap()
    }

    #[test]
    fn two_path_densities() {
        let exp = two_path();
        assert_eq!(exp.p[[0, 1]], 2.0 / 3.0);
        assert_eq!(exp.p[[1, 1]], 4.0 / 3.0);
        assert_eq!(exp.a_factor, 2.0);
    }

    #[test]
    fn single_path_is_flat() {
        let mesh = Mesh::uniform(0.0, 1.0, 3).unwrap();
        let ens = gen_gbm(100.0, 0.1, 0.3, &mesh, 1, 9).unwrap();
        let exp = to_densities(&ens).unwrap();
        assert!(exp.is_single_path());
        assert!(exp.p.iter().all(|v| *v == 1.0));
        for j in 1..=3 {
            let c = exp.cell(0, j);
            assert_eq!((c.y(), c.u()), (0.0, 0.0));
        }
        assert_eq!(exp.lambda_per_path(), vec![0.0]);
    }

    #[test]
    fn forward_expect_of_one_is_one() {
        let exp = two_path();
        for tag in [StrategyTag::Trader, StrategyTag::Buyer] {
            for j in 1..=2 {
                assert_eq!(exp.forward_expect(j, tag, |_| 1.0).unwrap(), 1.0);
            }
        }
        assert!(exp.forward_expect(0, StrategyTag::Trader, |_| 1.0).is_err());
        assert!(exp.forward_expect(3, StrategyTag::Trader, |_| 1.0).is_err());
    }

    #[test]
    fn variant_ranges() {
        assert_eq!(Variant::P1.intervals(4), 1..=4);
        assert_eq!(Variant::P2.intervals(4), 2..=4);
    }

    #[test]
    fn step_cdf_single_point() {
        let s = StrategySample {
            lambda: vec![0.3],
            weights: None,
            ess: 1.0,
            warning: None,
        };
        let c = StepCdf::new(&s);
        assert_eq!(c.eval(0.29), 0.0);
        assert_eq!(c.eval(0.3), 1.0);
    }

    #[test]
    fn degenerate_price_is_flagged() {
        let s = StrategySample {
            lambda: vec![-0.1, 0.0, 0.1],
            weights: None,
            ess: 3.0,
            warning: None,
        };
        let call = CallSpec {
            spot: 100.0,
            strike: 1e6,
            rate: 0.05,
            delta_t: 1.0,
        };
        let p = price_from_sample(&s, &call, 0.05);
        assert!(p.degenerate);
        assert_eq!(p.price, 0.0);
    }
}
