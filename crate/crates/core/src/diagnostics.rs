//! Summaries of Monte-Carlo output.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean from `n_batches` non-overlapping batch means.
/// Accounts for autocorrelation when batches are long compared to it.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let b = xs.len() / n_batches;
    if b == 0 || n_batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = xs.chunks_exact(b).take(n_batches).map(mean).collect();
    (variance(&means) / n_batches as f64).sqrt()
}

/// Empirical quantile with linear interpolation.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fraction of samples in each bin `[edges[i], edges[i+1])`; samples outside are dropped
/// from the counts but not from the normaliser.
pub fn histogram(xs: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; edges.len() - 1];
    for &x in xs {
        let k = edges.partition_point(|e| *e <= x);
        if k >= 1 && k < edges.len() {
            counts[k - 1] += 1.0;
        }
    }
    let n = xs.len() as f64;
    counts.iter().map(|c| c / n).collect()
}

/// Total-variation distance between two discrete distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Mass of a gridded density (weights at `points`) falling in each bin.
pub fn bin_weights(points: &[f64], weights: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; edges.len() - 1];
    for (&x, &w) in points.iter().zip(weights) {
        let k = edges.partition_point(|e| *e <= x);
        if k >= 1 && k < edges.len() {
            out[k - 1] += w;
        }
    }
    out
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
    }

    #[test]
    fn histogram_and_tv() {
        let h = histogram(&[0.1, 0.2, 0.6, 1.5], &[0.0, 0.5, 1.0]);
        assert_eq!(h, vec![0.5, 0.25]);
        assert_eq!(total_variation(&[0.5, 0.5], &[1.0, 0.0]), 0.5);
    }
}
