//! Compensated sums, bootstrap standard errors and median-of-means.

use rand::Rng;

use crate::rng::substream;

/// Neumaier-compensated sum.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    sum(values.iter().map(|v| (v - m) * (v - m))) / (values.len() - 1) as f64
}

/// `sqrt(variance / len)`.
pub fn analytic_stderr(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (variance(values) / values.len() as f64).sqrt()
}

/// Standard deviation of the resampled mean over `resamples` bootstrap draws.
pub fn bootstrap_stderr(values: &[f64], resamples: usize, seed: u64) -> f64 {
    let reps = bootstrap_replicates(values, resamples, seed, mean);
    if reps.len() < 2 {
        return 0.0;
    }
    variance(&reps).sqrt()
}

/// Statistic evaluated on `resamples` with-replacement resamples of `values`.
pub fn bootstrap_replicates<F>(values: &[f64], resamples: usize, seed: u64, stat: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = substream(seed, 0xb007);
    let mut buf = vec![0.0; n];
    (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect()
}

/// Bootstrap indices (for statistics over several paired arrays).
pub fn bootstrap_indices(n: usize, resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = substream(seed, 0xb008);
    (0..resamples).map(|_| (0..n).map(|_| rng.random_range(0..n)).collect()).collect()
}

/// Median of the means of `groups` contiguous groups.
pub fn median_of_means(values: &[f64], groups: usize) -> f64 {
    let g = groups.clamp(1, values.len().max(1));
    let size = values.len() / g;
    if size == 0 {
        return mean(values);
    }
    let mut means: Vec<f64> = (0..g).map(|i| mean(&values[i * size..(i + 1) * size])).collect();
    means.sort_by(|a, b| a.total_cmp(b));
    if g % 2 == 1 {
        means[g / 2]
    } else {
        0.5 * (means[g / 2 - 1] + means[g / 2])
    }
}

/// Percentile (linear interpolation) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(sum(v), 1.0);
    }

    #[test]
    fn bootstrap_of_constant_is_zero() {
        assert_eq!(bootstrap_stderr(&[1.0; 50], 100, 3), 0.0);
    }

    #[test]
    fn bootstrap_close_to_analytic() {
        let v: Vec<f64> = (0..2000).map(|i| ((i * 7919) % 101) as f64).collect();
        let a = analytic_stderr(&v);
        let b = bootstrap_stderr(&v, 1000, 1);
        assert!((a - b).abs() / a < 0.1);
    }

    #[test]
    fn median_of_means_odd_groups() {
        let v = [1.0, 1.0, 5.0, 5.0, 100.0, 100.0];
        assert_eq!(median_of_means(&v, 3), 5.0);
    }
}
