//! Normal-distribution helpers and the one-sample Kolmogorov–Smirnov test.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(x: f64) -> f64 {
    standard().cdf(x)
}

pub fn normal_pdf(x: f64) -> f64 {
    standard().pdf(x)
}

/// Standard-normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

/// Two-sided critical value `z_{α/2}` for a `level = 1 − α` interval.
pub fn two_sided_z(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

/// Two-sided p-value of a standard-normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * standard().sf(z.abs())).min(1.0)
}

/// `sup |F_n − F|` for the empirical distribution of `samples`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value `P(K > √n·D)` from the Kolmogorov distribution.
pub fn ks_p_value(statistic: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    // Stephens' small-sample correction.
    let t = (sn + 0.12 + 0.11 / sn) * statistic;
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * t * t).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert!((two_sided_z(0.95) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        for p in [1e-8, 0.001, 0.123, 0.5, 0.77, 0.999_999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-10 * p.max(1e-3));
        }
        assert!(two_sided_z(1e-12) < 1e-11);
        assert!((two_sided_p(0.0) - 1.0).abs() < 1e-15);
        assert!((two_sided_p(1.959_963_984_540_054) - 0.05).abs() < 1e-10);
    }

    #[test]
    fn ks_on_uniform_grid() {
        let samples: Vec<f64> = (0..1000)
            .map(|i| normal_quantile((i as f64 + 0.5) / 1000.0))
            .collect();
        let d = ks_statistic(&samples, normal_cdf);
        assert!((d - 0.0005).abs() < 1e-9);
        assert!(ks_p_value(d, 1000) > 0.99);
        let shifted: Vec<f64> = samples.iter().map(|v| v + 0.5).collect();
        assert!(ks_p_value(ks_statistic(&shifted, normal_cdf), 1000) < 1e-6);
    }

    #[test]
    fn kolmogorov_critical_value() {
        // 1% critical value of the Kolmogorov distribution is 1.6276
        let d = 1.6276 / (1000f64).sqrt();
        let p = ks_p_value(d, 1000);
        assert!((p - 0.01).abs() < 0.002, "{p}");
    }
}
