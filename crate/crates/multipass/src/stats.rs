//! Sample statistics used by the Monte-Carlo checks.

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Slope of `log|y|` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.abs().ln())).collect();
    fit_slope(&logs)
}

/// Mean and unbiased sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Result of a Monte-Carlo zero-mean test `|mean| ≤ k·std/√S`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanTest {
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
    pub bound: f64,
    pub passed: bool,
}

pub fn zero_mean_test(xs: &[f64], k: f64) -> MeanTest {
    let (mean, std) = mean_std(xs);
    let bound = k * std / (xs.len() as f64).sqrt();
    MeanTest { mean, std, samples: xs.len(), bound, passed: mean.abs() <= bound }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        assert!((fit_slope(&pts) + 2.0).abs() < 1e-12);
        let pw: Vec<(f64, f64)> = [1.0, 2.0, 4.0].iter().map(|&x: &f64| (x, 5.0 * x.powi(-3))).collect();
        assert!((log_log_slope(&pw) + 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_and_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
