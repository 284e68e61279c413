//! Small statistical helpers shared by the regeneration diagnostics and the
//! estimators: moments, autocorrelation, two-sample distance with a
//! permutation p-value, weighted least squares, and bootstrap intervals.
//!
//! Everything here is deterministic given its inputs (and an explicit RNG
//! where randomness is involved); nothing touches global state.

use rand::seq::SliceRandom;
use rand::Rng;

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two points.
pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean and its standard error.
pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let se = (sample_variance(xs) / xs.len() as f64).sqrt();
    (m, se)
}

/// Unbiased sample covariance of two equal-length series.
pub(crate) fn sample_covariance(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = mean(xs);
    let my = mean(ys);
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() - 1) as f64
}

/// Binomial standard error of an empirical frequency.
pub(crate) fn binomial_stderr(p_hat: f64, n: u64) -> f64 {
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// Sample autocorrelation at `lag`; `None` when the series is constant
/// (zero variance) or shorter than `lag + 2`.
pub(crate) fn autocorrelation(xs: &[f64], lag: usize) -> Option<f64> {
    if xs.len() < lag + 2 {
        return None;
    }
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if denom == 0.0 {
        return None;
    }
    let num: f64 = xs[..xs.len() - lag]
        .iter()
        .zip(&xs[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    Some(num / denom)
}

/// Two-sample Kolmogorov-Smirnov statistic: the maximum gap between the
/// empirical CDFs.
pub(crate) fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut gap: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let (x, y) = (a[i], b[j]);
        if x <= y {
            i += 1;
        }
        if y <= x {
            j += 1;
        }
        gap = gap.max((i as f64 / na - j as f64 / nb).abs());
    }
    gap
}

/// Permutation p-value for the KS statistic under the null that both
/// samples share one distribution: pool, reshuffle, resplit. Uses the
/// add-one estimate `(1 + #{perm >= observed}) / (permutations + 1)`.
pub(crate) fn ks_permutation_pvalue<R: Rng>(
    a: &[f64],
    b: &[f64],
    permutations: usize,
    rng: &mut R,
) -> f64 {
    let observed = ks_statistic(a, b);
    let mut pool: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut at_least = 0usize;
    for _ in 0..permutations {
        pool.shuffle(rng);
        if ks_statistic(&pool[..a.len()], &pool[a.len()..]) >= observed {
            at_least += 1;
        }
    }
    (1 + at_least) as f64 / (permutations + 1) as f64
}

/// Weighted least-squares line fit `y ~ intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// Weighted coefficient of determination.
    pub r_squared: f64,
    /// Weighted residual sum of squares.
    pub weighted_rss: f64,
    pub points: usize,
}

/// `None` when fewer than 3 points or degenerate abscissae. Weights must be
/// positive.
pub(crate) fn weighted_least_squares(x: &[f64], y: &[f64], w: &[f64]) -> Option<LineFit> {
    debug_assert_eq!(x.len(), y.len());
    debug_assert_eq!(x.len(), w.len());
    let n = x.len();
    if n < 3 {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    let mut tss = 0.0;
    for ((x, y), w) in x.iter().zip(y).zip(w) {
        let fit = intercept + slope * x;
        rss += w * (y - fit) * (y - fit);
        tss += w * (y - my) * (y - my);
    }
    let dof = (n - 2) as f64;
    let slope_stderr = (rss / dof / sxx).sqrt();
    let r_squared = if tss == 0.0 { 1.0 } else { 1.0 - rss / tss };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        weighted_rss: rss,
        points: n,
    })
}

/// Percentile bootstrap CI for the mean: resample with replacement,
/// `resamples` times, and take the 2.5% / 97.5% quantiles of the resampled
/// means.
pub(crate) fn bootstrap_mean_ci<R: Rng>(
    xs: &[f64],
    resamples: usize,
    rng: &mut R,
) -> (f64, f64) {
    debug_assert!(!xs.is_empty());
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let s: f64 = (0..xs.len())
            .map(|_| xs[rng.random_range(0..xs.len())])
            .sum();
        means.push(s / xs.len() as f64);
    }
    means.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = means[((resamples as f64) * 0.025) as usize];
    let hi = means[(((resamples as f64) * 0.975) as usize).min(resamples - 1)];
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::replica_rng;
    use approx::assert_relative_eq;

    #[test]
    fn moments_of_a_known_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(mean(&xs), 2.5);
        assert_relative_eq!(sample_variance(&xs), 5.0 / 3.0);
        let (m, se) = mean_stderr(&xs);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0 / 12.0f64).sqrt());
        assert_relative_eq!(sample_covariance(&xs, &[2.0, 4.0, 6.0, 8.0]), 10.0 / 3.0);
    }

    #[test]
    fn autocorrelation_of_alternating_series_is_minus_one_ish() {
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r1 = autocorrelation(&xs, 1).unwrap();
        assert!(r1 < -0.95, "r1 = {r1}");
        let r2 = autocorrelation(&xs, 2).unwrap();
        assert!(r2 > 0.95, "r2 = {r2}");
        assert_eq!(autocorrelation(&[5.0; 40], 1), None);
        assert_eq!(autocorrelation(&[1.0, 2.0], 3), None);
    }

    #[test]
    fn ks_statistic_matches_hand_computation() {
        // CDF gap between {1,2} and {3,4} is 1 (disjoint supports).
        assert_relative_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        // Identical samples: gap 0.
        assert_relative_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        // {1,2,3} vs {1,2,4}: gap 1/3 at x = 3.
        assert_relative_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]), 1.0 / 3.0);
    }

    #[test]
    fn permutation_pvalue_separates_shifted_samples() {
        let mut rng = replica_rng(1, 0);
        let a: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.random::<f64>() + 1.5).collect();
        let p = ks_permutation_pvalue(&a, &b, 500, &mut rng);
        assert!(p < 0.01, "p = {p}");
        // Same distribution: p should be comfortably non-small.
        let c: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let p = ks_permutation_pvalue(&a, &c, 500, &mut rng);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn weighted_least_squares_recovers_an_exact_line() {
        let x: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 - 0.25 * x).collect();
        let w = vec![1.0; x.len()];
        let fit = weighted_least_squares(&x, &y, &w).unwrap();
        assert_relative_eq!(fit.slope, -0.25, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 3.0, epsilon = 1e-12);
        assert!(fit.slope_stderr < 1e-9);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert!(weighted_least_squares(&x[..2], &y[..2], &w[..2]).is_none());
        assert!(weighted_least_squares(&[1.0; 5], &y[..5], &w[..5]).is_none());
    }

    #[test]
    fn bootstrap_ci_brackets_the_mean_of_a_clean_sample() {
        let mut rng = replica_rng(2, 0);
        let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = bootstrap_mean_ci(&xs, 1000, &mut rng);
        let m = mean(&xs);
        assert!(lo < m && m < hi);
        assert!(hi - lo < 0.2);
    }
}
