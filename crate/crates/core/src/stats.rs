//! Deterministic reductions and small statistical helpers.
//!
//! Parallel sums are computed over fixed-size row chunks whose partial
//! results are combined in chunk order, so every reduction is bit-identical
//! for any thread count.

use rayon::prelude::*;

pub const CHUNK_ROWS: usize = 2048;

/// Accumulates `width` sums over `n_rows` rows. `f(i, acc)` adds row `i`'s
/// contributions into `acc`.
pub fn chunked_accumulate<F>(n_rows: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let n_chunks = n_rows.div_ceil(CHUNK_ROWS);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let end = ((c + 1) * CHUNK_ROWS).min(n_rows);
            for i in c * CHUNK_ROWS..end {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; width];
    for part in partials {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
    out
}

/// Deterministic sum of `f(i)` for `i < n`.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    chunked_accumulate(n, 1, |i, acc| acc[0] += f(i))[0]
}

pub fn mean(xs: &[f64]) -> f64 {
    chunked_sum(xs.len(), |i| xs[i]) / xs.len() as f64
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let ss = chunked_sum(xs.len(), |i| (xs[i] - m) * (xs[i] - m));
    (m, (ss / (n - 1.0) / n).sqrt())
}

/// Kolmogorov-Smirnov distance between a weighted sample and a continuous cdf.
/// Weights need not be normalised.
pub fn ks_distance<F: Fn(f64) -> f64>(points: &[f64], weights: Option<&[f64]>, cdf: F) -> f64 {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = idx.iter().map(|&i| w(i)).sum();
    let mut cum = 0.0;
    let mut d: f64 = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let x = points[idx[k]];
        let f = cdf(x);
        d = d.max((cum / total - f).abs());
        while k < idx.len() && points[idx[k]] == x {
            cum += w(idx[k]);
            k += 1;
        }
        d = d.max((cum / total - f).abs());
    }
    d
}

/// Average ranks (ties share the mean rank), 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && xs[idx[end + 1]] == xs[idx[k]] {
            end += 1;
        }
        let avg = 0.5 * (k + end) as f64 + 1.0;
        for &i in &idx[k..=end] {
            r[i] = avg;
        }
        k = end + 1;
    }
    r
}

/// Spearman rank correlation. Returns 0 when either input is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, my) = (mean(&rx), mean(&ry));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Effective sample size of a set of non-negative weights.
pub fn ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_closed_form() {
        let n = 10 * CHUNK_ROWS + 17;
        let s = chunked_sum(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
    }

    #[test]
    fn chunked_sum_is_thread_count_independent() {
        let xs: Vec<f64> = (0..50_000).map(|i| ((i * 7919) % 1013) as f64 * 0.1 + 1e-7).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| mean(&xs));
        let b = four.install(|| mean(&xs));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn ks_of_uniform_grid() {
        let pts: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_distance(&pts, None, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.005).abs() < 1e-12);
    }

    #[test]
    fn spearman_monotone_and_constant() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 25.0, 99.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&x, &[1.0; 4]), 0.0);
    }

    #[test]
    fn ess_bounds() {
        assert_eq!(ess(&[1.0; 8]), 8.0);
        assert_eq!(ess(&[0.0, 0.0, 3.0]), 1.0);
    }
}
