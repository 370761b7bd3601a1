use std::ops::Range;

use serde::Serialize;

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se
    }
}

/// Mean and standard error of per-path values.
///
/// With two or more batches the standard error comes from the spread of the
/// batch means, which also captures noise shared by the paths of one batch
/// (regression coefficients); otherwise from the per-path spread.
pub fn estimate(values: &[f64], batches: &[Range<usize>]) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = if batches.len() >= 2 {
        let means: Vec<f64> = batches
            .iter()
            .map(|r| values[r.clone()].iter().sum::<f64>() / r.len() as f64)
            .collect();
        let weights: Vec<f64> = batches.iter().map(|r| r.len() as f64 / n as f64).collect();
        let b = means.len() as f64;
        let var = means
            .iter()
            .zip(&weights)
            .map(|(m, w)| w * b * (m - mean).powi(2))
            .sum::<f64>()
            / (b - 1.0);
        (var / b).sqrt()
    } else if n >= 2 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Estimate { mean, se }
}

/// Splits `count` paths into `batches` contiguous, nearly equal ranges.
pub fn batch_ranges(count: usize, batches: usize) -> Vec<Range<usize>> {
    let b = batches.clamp(1, count.max(1));
    (0..b).map(|k| (k * count / b)..((k + 1) * count / b)).collect()
}

/// Least-squares slope and coefficient of determination of `ys` against `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}
