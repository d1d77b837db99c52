//! Summation helpers with reproducible rounding.

/// Sum that does not depend on the order of `terms`.
///
/// Terms are sorted by `f64::total_cmp` before accumulation, so any
/// permutation of the same multiset of values rounds identically. The slice
/// is reordered in place.
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Pairwise (tree) summation in a fixed split order.
///
/// Deterministic for a given input order and more accurate than a running
/// sum for long series.
pub fn pairwise_sum(terms: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if terms.len() <= LEAF {
        return terms.iter().sum();
    }
    let mid = terms.len() / 2;
    pairwise_sum(&terms[..mid]) + pairwise_sum(&terms[mid..])
}

/// Mean via [`pairwise_sum`]. Returns NaN for an empty slice.
pub fn pairwise_mean(terms: &[f64]) -> f64 {
    pairwise_sum(terms) / terms.len() as f64
}

/// Sample mean and standard error of the mean (unbiased variance).
pub fn mean_and_std_err(terms: &[f64]) -> (f64, f64) {
    let n = terms.len();
    let mean = pairwise_mean(terms);
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = terms.iter().map(|t| (t - mean) * (t - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Batch-means standard error for a correlated series.
///
/// The series is cut into `batches` contiguous blocks of equal length (the
/// remainder at the end is dropped); returns the mean of the whole used
/// range and the standard error computed from the block means.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let batches = batches.max(2);
    let len = series.len() / batches;
    if len == 0 {
        return mean_and_std_err(series);
    }
    let means: Vec<f64> = series
        .chunks_exact(len)
        .take(batches)
        .map(pairwise_mean)
        .collect();
    mean_and_std_err(&means)
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_err: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len(), "linear_fit: length mismatch");
    let n = x.len() as f64;
    let mx = pairwise_mean(x);
    let my = pairwise_mean(y);
    let sxx: Vec<f64> = x.iter().map(|a| (a - mx) * (a - mx)).collect();
    let sxy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let syy: Vec<f64> = y.iter().map(|b| (b - my) * (b - my)).collect();
    let (sxx, sxy, syy) = (pairwise_sum(&sxx), pairwise_sum(&sxy), pairwise_sum(&syy));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .collect();
    let sse = pairwise_sum(&resid);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_std_err = if n > 2.0 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_std_err,
        r_squared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sum_ignores_order() {
        let a = [1e16, 1.0, -1e16, 3.5, 1e-3, 7.25];
        let mut fwd = a.to_vec();
        let mut rev: Vec<f64> = a.iter().rev().copied().collect();
        assert_eq!(
            canonical_sum(&mut fwd).to_bits(),
            canonical_sum(&mut rev).to_bits()
        );
    }

    #[test]
    fn linear_fit_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let fit = linear_fit(&x, &y);
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn batch_means_of_constant_series() {
        let s = vec![3.0; 1000];
        let (m, se) = batch_means(&s, 20);
        assert_eq!(m, 3.0);
        assert_eq!(se, 0.0);
    }
}
