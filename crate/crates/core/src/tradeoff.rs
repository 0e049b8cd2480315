//! Bias–variance decomposition of the de-biased estimator's MSE across k.
//!
//! With `δ = U1'β` and `rᵢ = λ/(dᵢ²+λ)`:
//! `bias²(k) = Σ δᵢ² rᵢ^{2(k+1)}` and `var(k) = σ² Σ (1 − rᵢ^{k+1})² / dᵢ²`.
//! The minimizing k is found by scanning the grid exhaustively.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{correction_filter, ratio_power, SpectralCache};

pub const DEFAULT_K_MAX: usize = 200;
/// Upper bound for the automatic grid extension.
pub const K_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Decreasing,
    InteriorMinimum,
    Increasing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseDecomposition {
    pub ks: Vec<usize>,
    pub bias_sq: Vec<f64>,
    pub variance: Vec<f64>,
    pub total: Vec<f64>,
    /// Smallest k attaining the minimum total.
    pub argmin_k: usize,
    pub regime: Regime,
    /// Closed-form bracket `[⌊k₁⌋, ⌊k₂⌋]`; diagnostic only, never used to pick k.
    pub closed_form_interval: Option<(i64, i64)>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `δᵢ² dᵢ² / σ²` per retained direction.
    pub signal_ratios: Vec<f64>,
    /// `log(1 − ratio)/log(rᵢ) − 1` over the directions with ratio in (0, 1).
    pub k1: Option<f64>,
    pub k2: Option<f64>,
}

struct Direction {
    d2: f64,
    delta2: f64,
}

fn directions(cache: &SpectralCache, beta_true: &nalgebra::DVector<f64>) -> Result<Vec<Direction>> {
    let (n, p, rank) = (cache.n(), cache.p(), cache.rank());
    if beta_true.len() != p {
        return Err(Error::DimensionMismatch {
            what: "beta",
            expected: p,
            found: beta_true.len(),
        });
    }
    if p >= n || rank < p {
        return Err(Error::NotFullRank { rank, p, n });
    }
    let delta = cache.u1().tr_mul(beta_true);
    Ok(cache
        .d1()
        .iter()
        .zip(delta.iter())
        .map(|(d, dl)| Direction {
            d2: d * d,
            delta2: dl * dl,
        })
        .collect())
}

fn evaluate(dirs: &[Direction], lambda: f64, sigma: f64, k: usize) -> (f64, f64) {
    dirs.iter().fold((0.0, 0.0), |(b, v), dir| {
        let bias = ratio_power(dir.d2, lambda, k + 1);
        // (1 − r^{k+1})²/d² = d² · g², g the filter factor
        let g = correction_filter(dir.d2, lambda, k);
        (
            b + dir.delta2 * bias * bias,
            v + sigma * sigma * dir.d2 * g * g,
        )
    })
}

/// Differences larger than this fraction of the curve's scale count as sign changes.
fn significant_signs(total: &[f64]) -> Vec<i8> {
    let scale = total.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    let tol = 1e-13 * scale;
    total
        .windows(2)
        .filter_map(|w| {
            let diff = w[1] - w[0];
            if diff > tol {
                Some(1)
            } else if diff < -tol {
                Some(-1)
            } else {
                None
            }
        })
        .collect()
}

fn classify(signs: &[i8]) -> Regime {
    let any_down = signs.iter().any(|&s| s < 0);
    let any_up = signs.iter().any(|&s| s > 0);
    match (any_down, any_up) {
        (true, true) => Regime::InteriorMinimum,
        (true, false) => Regime::Decreasing,
        _ => Regime::Increasing,
    }
}

/// Analytic MSE curve over k = 0..=k_max for a full-rank p < n design.
///
/// The grid doubles (up to 5000) while the last two non-negligible
/// differences disagree in sign.
pub fn mse_curve(
    cache: &SpectralCache,
    beta_true: &nalgebra::DVector<f64>,
    lambda: f64,
    sigma: f64,
    k_max: usize,
) -> Result<MseDecomposition> {
    if k_max < 1 {
        return Err(Error::InvalidParameter("k_max must be >= 1".into()));
    }
    if !(lambda > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda and sigma must be positive (got {lambda}, {sigma})"
        )));
    }
    let dirs = directions(cache, beta_true)?;

    let mut bias_sq = Vec::new();
    let mut variance = Vec::new();
    let mut k_end = k_max;
    loop {
        for k in bias_sq.len()..=k_end {
            let (b, v) = evaluate(&dirs, lambda, sigma, k);
            bias_sq.push(b);
            variance.push(v);
        }
        let total: Vec<f64> = bias_sq.iter().zip(&variance).map(|(b, v)| b + v).collect();
        let signs = significant_signs(&total);
        let settled = match signs.as_slice() {
            [.., a, b] => a == b,
            _ => true,
        };
        if settled || k_end >= K_CAP {
            break;
        }
        k_end = (k_end * 2).min(K_CAP);
    }

    let total: Vec<f64> = bias_sq.iter().zip(&variance).map(|(b, v)| b + v).collect();
    let argmin_k = total
        .iter()
        .enumerate()
        .fold(0, |best, (k, t)| if *t < total[best] { k } else { best });
    let regime = classify(&significant_signs(&total));
    let diagnostics = diagnostics(&dirs, lambda, sigma);
    let closed_form_interval = match (diagnostics.k1, diagnostics.k2) {
        (Some(a), Some(b)) => Some((a.floor() as i64, b.floor() as i64)),
        _ => None,
    };
    Ok(MseDecomposition {
        ks: (0..total.len()).collect(),
        bias_sq,
        variance,
        total,
        argmin_k,
        regime,
        closed_form_interval,
        diagnostics,
    })
}

fn diagnostics(dirs: &[Direction], lambda: f64, sigma: f64) -> Diagnostics {
    let signal_ratios: Vec<f64> = dirs
        .iter()
        .map(|d| d.delta2 * d.d2 / (sigma * sigma))
        .collect();
    let ks: Vec<f64> = dirs
        .iter()
        .zip(&signal_ratios)
        .filter(|(_, &rho)| rho > 0.0 && rho < 1.0)
        .map(|(d, &rho)| (1.0 - rho).ln() / (lambda / (lambda + d.d2)).ln() - 1.0)
        .collect();
    let k1 = ks.iter().copied().reduce(f64::min);
    let k2 = ks.iter().copied().reduce(f64::max);
    Diagnostics {
        signal_ratios,
        k1,
        k2,
    }
}

/// Regime of the MSE curve on the default grid, with closed-form diagnostics.
pub fn regime_classify(
    cache: &SpectralCache,
    beta_true: &nalgebra::DVector<f64>,
    lambda: f64,
    sigma: f64,
) -> Result<MseDecomposition> {
    mse_curve(cache, beta_true, lambda, sigma, DEFAULT_K_MAX)
}

/// `k, bias_sq, variance, total` rows.
pub fn write_curve_csv<W: Write>(writer: W, curve: &MseDecomposition) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "bias_sq", "variance", "total"])?;
    for (i, k) in curve.ks.iter().enumerate() {
        w.write_record([
            k.to_string(),
            curve.bias_sq[i].to_string(),
            curve.variance[i].to_string(),
            curve.total[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    /// n = 2, p = 1 design with d² = 25.
    fn scalar_cache() -> SpectralCache {
        SpectralCache::new(
            DMatrix::from_column_slice(2, 1, &[3.0, 4.0]),
            DVector::zeros(2),
            1e-12,
        )
        .unwrap()
    }

    /// Exhaustive oracle written directly from the closed form.
    fn scalar_total(k: usize, d2: f64, lambda: f64, delta2: f64, sigma: f64) -> f64 {
        let r = lambda / (lambda + d2);
        delta2 * r.powi(2 * (k as i32 + 1))
            + sigma * sigma * (1.0 - r.powi(k as i32 + 1)).powi(2) / d2
    }

    #[test]
    fn scalar_curve_values() {
        let delta = 1.2f64.sqrt();
        let c = mse_curve(
            &scalar_cache(),
            &DVector::from_element(1, delta),
            25.0,
            1.0,
            50,
        )
        .unwrap();
        assert!((c.total[3] - 0.03984375).abs() < 1e-12);
        assert!((c.total[4] - 0.038711).abs() < 1e-6);
        assert!((c.total[5] - 0.039053).abs() < 1e-6);
        assert_eq!(c.argmin_k, 4);
        let oracle_argmin = (0..=50)
            .min_by(|&a, &b| {
                scalar_total(a, 25.0, 25.0, 1.2, 1.0)
                    .total_cmp(&scalar_total(b, 25.0, 25.0, 1.2, 1.0))
            })
            .unwrap();
        assert_eq!(oracle_argmin, 4);
        for k in 0..=50 {
            assert!((c.total[k] - scalar_total(k, 25.0, 25.0, 1.2, 1.0)).abs() < 1e-14);
            assert_eq!(c.total[k], c.bias_sq[k] + c.variance[k]);
        }
        assert_eq!(c.regime, Regime::InteriorMinimum);
        assert!(c.total[c.argmin_k] < c.total[0]);
    }

    #[test]
    fn zero_signal_is_variance_only() {
        let c = mse_curve(&scalar_cache(), &DVector::zeros(1), 25.0, 1.0, 30).unwrap();
        assert!(c.bias_sq.iter().all(|b| *b == 0.0));
        assert_eq!(c.total, c.variance);
        assert_eq!(c.argmin_k, 0);
        assert_eq!(c.regime, Regime::Increasing);
    }

    #[test]
    fn large_k_limits() {
        let x = DMatrix::from_fn(10, 3, |i, j| ((i * i * (j + 1) + j) as f64 * 0.37).sin());
        let cache = SpectralCache::new(x, DVector::zeros(10), 1e-12).unwrap();
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let c = mse_curve(&cache, &beta, 0.5, 1.3, 500).unwrap();
        let ls_var: f64 = cache.d1().iter().map(|d| 1.3 * 1.3 / (d * d)).sum();
        assert!((c.variance[500] - ls_var).abs() < 1e-8);
        assert!(c.bias_sq[500] < 1e-8);
    }

    #[test]
    fn strong_signal_scan() {
        // δ²d²/σ² = 100 with r = 0.5: the exhaustive scan finds a shallow minimum
        // where r^{k+1} crosses σ²/(δ²d² + σ²) = 1/101, i.e. near k = 5.7.
        let delta = 2.0;
        let c = mse_curve(
            &scalar_cache(),
            &DVector::from_element(1, delta),
            25.0,
            1.0,
            200,
        )
        .unwrap();
        assert!((c.diagnostics.signal_ratios[0] - 100.0).abs() < 1e-10);
        let oracle = (0..=200)
            .min_by(|&a, &b| {
                scalar_total(a, 25.0, 25.0, 4.0, 1.0)
                    .total_cmp(&scalar_total(b, 25.0, 25.0, 4.0, 1.0))
            })
            .unwrap();
        assert_eq!(c.argmin_k, oracle);
        assert!(c.argmin_k == 5 || c.argmin_k == 6);
        assert_eq!(c.regime, Regime::InteriorMinimum);
        assert!(c.closed_form_interval.is_none());
    }

    #[test]
    fn weak_signal_diagnostic() {
        let delta2: f64 = 0.9 / 25.0;
        let c = regime_classify(
            &scalar_cache(),
            &DVector::from_element(1, delta2.sqrt()),
            25.0,
            1.0,
        )
        .unwrap();
        let k1 = c.diagnostics.k1.unwrap();
        assert!((k1 - 2.3219).abs() < 1e-4);
        assert_eq!(c.closed_form_interval, Some((2, 2)));
        let oracle = (0..=200)
            .min_by(|&a, &b| {
                scalar_total(a, 25.0, 25.0, delta2, 1.0)
                    .total_cmp(&scalar_total(b, 25.0, 25.0, delta2, 1.0))
            })
            .unwrap();
        assert_eq!(c.argmin_k, oracle);
    }

    #[test]
    fn rejects_rank_deficient_and_bad_kmax() {
        let wide = SpectralCache::new(
            DMatrix::from_fn(2, 3, |i, j| (i + j) as f64 + 1.0),
            DVector::zeros(2),
            1e-12,
        )
        .unwrap();
        assert!(matches!(
            mse_curve(&wide, &DVector::zeros(3), 1.0, 1.0, 10),
            Err(Error::NotFullRank { .. })
        ));
        assert!(mse_curve(&scalar_cache(), &DVector::zeros(1), 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn csv_rows() {
        let c = mse_curve(
            &scalar_cache(),
            &DVector::from_element(1, 1.0),
            25.0,
            1.0,
            10,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), c.ks.len() + 1);
        assert!(text.starts_with("k,bias_sq,variance,total\n0,"));
    }
}
