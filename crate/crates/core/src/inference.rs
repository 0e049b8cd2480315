//! Exact normal-theory inference for de-biased ridge fits.
//!
//! For Gaussian errors `b̂_k − β ~ N(−bias_k, Σ_k)` with
//! `Σ_k = G X'Σ_εX G` and `G = U1 diag((1 − rᵢ^{k+1})/dᵢ²) U1'`. Because
//! `X U1 = V1 D1`, every quadratic form reduces to the p* coordinates
//! `U1'θ` scaled by `gᵢdᵢ`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screening::TwoStageFit;
use crate::spectral::{DebiasedFit, SpectralCache};
use crate::stats::{two_sided_p, two_sided_z};

/// Error covariance `Σ_ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceModel {
    Homoskedastic {
        sigma: f64,
    },
    /// Known per-observation variances (the diagonal of `Σ_ε`).
    Diagonal {
        variances: Vec<f64>,
    },
}

impl CovarianceModel {
    /// Homoskedastic model with the fit's residual scale plugged in.
    pub fn from_fit(fit: &DebiasedFit) -> Self {
        CovarianceModel::Homoskedastic {
            sigma: fit.sigma_hat,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            CovarianceModel::Homoskedastic { sigma } if *sigma > 0.0 && sigma.is_finite() => Ok(()),
            CovarianceModel::Homoskedastic { sigma } => Err(Error::InvalidParameter(format!(
                "sigma must be positive and finite, got {sigma}"
            ))),
            CovarianceModel::Diagonal { variances } => {
                if variances.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "error variances",
                        expected: n,
                        found: variances.len(),
                    });
                }
                if variances.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(
                        "error variances must be positive and finite".into(),
                    ))
                }
            }
        }
    }

    fn max_sd(&self) -> f64 {
        match self {
            CovarianceModel::Homoskedastic { sigma } => *sigma,
            CovarianceModel::Diagonal { variances } => {
                variances.iter().fold(0.0f64, |a, v| a.max(*v)).sqrt()
            }
        }
    }
}

/// `gᵢ dᵢ = (1 − rᵢ^{k+1}) / dᵢ`: the map from `V1'ε` to `U1'(b̂_k − E b̂_k)`.
fn noise_gains(cache: &SpectralCache, lambda: f64, k: usize) -> DVector<f64> {
    cache.filter_factors(lambda, k).component_mul(cache.d1())
}

/// `θ'Σ_kθ` without forming the p×p covariance.
pub fn contrast_variance(
    cache: &SpectralCache,
    lambda: f64,
    k: usize,
    cov: &CovarianceModel,
    theta: &DVector<f64>,
) -> Result<f64> {
    check_len(theta, cache.p(), "contrast")?;
    cov.validate(cache.n())?;
    let a = cache
        .u1()
        .tr_mul(theta)
        .component_mul(&noise_gains(cache, lambda, k));
    Ok(match cov {
        CovarianceModel::Homoskedastic { sigma } => sigma * sigma * a.norm_squared(),
        CovarianceModel::Diagonal { variances } => {
            let w = cache.v1() * a;
            w.iter().zip(variances).map(|(wi, v)| wi * wi * v).sum()
        }
    })
}

/// Exact covariance of the k-step de-biased estimator (p×p, symmetric PSD).
///
/// Applied to a restricted cache this is the post-screening covariance.
pub fn covariance_debiased(
    cache: &SpectralCache,
    lambda: f64,
    k: usize,
    cov: &CovarianceModel,
) -> Result<DMatrix<f64>> {
    cov.validate(cache.n())?;
    let gains = noise_gains(cache, lambda, k);
    let inner = match cov {
        CovarianceModel::Homoskedastic { sigma } => {
            DMatrix::from_diagonal(&gains.map(|g| sigma * sigma * g * g))
        }
        CovarianceModel::Diagonal { variances } => {
            let mut w = cache.v1().clone();
            for (j, mut col) in w.column_iter_mut().enumerate() {
                col *= gains[j];
            }
            let weighted = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] * variances[i]);
            w.tr_mul(&weighted)
        }
    };
    let full = cache.u1() * inner * cache.u1().transpose();
    Ok((&full + full.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastTest {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Wald test of `θ'β = null_value` using the exact finite-k covariance.
pub fn contrast_test(
    fit: &DebiasedFit,
    cache: &SpectralCache,
    theta: &DVector<f64>,
    null_value: f64,
    cov: &CovarianceModel,
) -> Result<ContrastTest> {
    check_fit(fit, cache)?;
    check_len(theta, cache.p(), "contrast")?;
    if theta.iter().all(|t| *t == 0.0) {
        return Err(Error::DegenerateContrast);
    }
    let se = contrast_variance(cache, fit.lambda, fit.k_used, cov, theta)?.sqrt();
    let scale = cov.max_sd() * theta.norm() * noise_gains(cache, fit.lambda, fit.k_used).amax();
    if se <= 1e-10 * scale {
        return Err(Error::NonEstimableContrast);
    }
    let estimate = theta.dot(&fit.beta);
    let z = (estimate - null_value) / se;
    Ok(ContrastTest {
        estimate,
        se,
        z,
        p_value: two_sided_p(z),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Confidence,
    Prediction,
}

impl IntervalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            IntervalKind::Confidence => "confidence",
            IntervalKind::Prediction => "prediction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    /// Standard error matching `kind`: for prediction intervals it includes the noise term.
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub kind: IntervalKind,
    /// True when the standard error is exactly zero.
    pub degenerate: bool,
}

impl IntervalEstimate {
    fn new(point: f64, se: f64, level: f64, kind: IntervalKind) -> Self {
        let half = two_sided_z(level) * se;
        IntervalEstimate {
            point,
            se,
            lower: point - half,
            upper: point + half,
            level,
            kind,
            degenerate: se == 0.0,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Same interval moved by `offset`, e.g. to add back a response mean.
    pub fn shifted(&self, offset: f64) -> Self {
        IntervalEstimate {
            point: self.point + offset,
            lower: self.lower + offset,
            upper: self.upper + offset,
            ..*self
        }
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(level))
    }
}

fn check_len(v: &DVector<f64>, expected: usize, what: &'static str) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found: v.len(),
        })
    }
}

fn check_fit(fit: &DebiasedFit, cache: &SpectralCache) -> Result<()> {
    if fit.cache_id == cache.id() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(
            "fit was not produced from this spectral cache".into(),
        ))
    }
}

/// Confidence interval for the mean response `x0'β`.
pub fn confidence_interval(
    fit: &DebiasedFit,
    cache: &SpectralCache,
    x0: &DVector<f64>,
    level: f64,
    cov: &CovarianceModel,
) -> Result<IntervalEstimate> {
    check_level(level)?;
    check_fit(fit, cache)?;
    let var = contrast_variance(cache, fit.lambda, fit.k_used, cov, x0)?;
    Ok(IntervalEstimate::new(
        x0.dot(&fit.beta),
        var.sqrt(),
        level,
        IntervalKind::Confidence,
    ))
}

/// Prediction interval for a new response at `x0`, using the fit's own σ̂.
pub fn prediction_interval(
    fit: &DebiasedFit,
    cache: &SpectralCache,
    x0: &DVector<f64>,
    level: f64,
) -> Result<IntervalEstimate> {
    check_level(level)?;
    check_fit(fit, cache)?;
    check_len(x0, cache.p(), "covariate vector")?;
    let a = cache
        .u1()
        .tr_mul(x0)
        .component_mul(&noise_gains(cache, fit.lambda, fit.k_used));
    let s2 = fit.sigma_hat * fit.sigma_hat;
    let se = (s2 * a.norm_squared() + s2).sqrt();
    Ok(IntervalEstimate::new(
        x0.dot(&fit.beta),
        se,
        level,
        IntervalKind::Prediction,
    ))
}

/// Confidence interval from a post-screening fit; `x0` has the full length p.
pub fn confidence_interval_restricted(
    fit: &TwoStageFit,
    x0: &DVector<f64>,
    level: f64,
    cov: &CovarianceModel,
) -> Result<IntervalEstimate> {
    let x0r = fit.selection.restrict(x0)?;
    confidence_interval(&fit.fit, &fit.selection.restricted_cache, &x0r, level, cov)
}

/// Prediction interval from a post-screening fit; `x0` has the full length p.
pub fn prediction_interval_restricted(
    fit: &TwoStageFit,
    x0: &DVector<f64>,
    level: f64,
) -> Result<IntervalEstimate> {
    let x0r = fit.selection.restrict(x0)?;
    prediction_interval(&fit.fit, &fit.selection.restricted_cache, &x0r, level)
}

/// Writes `x0_id, point, se, lower, upper, level, kind` rows.
pub fn write_intervals_csv<W: Write>(writer: W, rows: &[(String, IntervalEstimate)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x0_id", "point", "se", "lower", "upper", "level", "kind"])?;
    for (id, iv) in rows {
        w.write_record([
            id.clone(),
            iv.point.to_string(),
            iv.se.to_string(),
            iv.lower.to_string(),
            iv.upper.to_string(),
            iv.level.to_string(),
            iv.kind.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{debias, RidgeConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> (SpectralCache, DebiasedFit) {
        let cache = SpectralCache::new(
            DMatrix::from_column_slice(2, 1, &[3.0, 4.0]),
            DVector::from_vec(vec![6.0, 8.0]),
            1e-12,
        )
        .unwrap();
        let fit = debias(&cache, &RidgeConfig::fixed(25.0, 1)).unwrap();
        (cache, fit)
    }

    fn unit() -> CovarianceModel {
        CovarianceModel::Homoskedastic { sigma: 1.0 }
    }

    fn random_cache(seed: u64, n: usize, p: usize) -> SpectralCache {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        SpectralCache::new(x, y, 1e-12).unwrap()
    }

    #[test]
    fn scalar_covariance() {
        let (cache, _) = scalar();
        let s = covariance_debiased(&cache, 25.0, 1, &unit()).unwrap();
        assert!((s[(0, 0)] - 0.0225).abs() < 1e-14);
    }

    #[test]
    fn k_zero_matches_dense_product() {
        let cache = random_cache(1, 8, 5);
        let x = cache.x();
        let lambda = 1.3;
        let a = x.transpose() * x + DMatrix::identity(5, 5) * lambda;
        let inv = a.try_inverse().unwrap();
        let dense = &inv * x.transpose() * x * &inv * 4.0;
        let s = covariance_debiased(
            &cache,
            lambda,
            0,
            &CovarianceModel::Homoskedastic { sigma: 2.0 },
        )
        .unwrap();
        assert!((s - dense).amax() < 1e-10);
    }

    #[test]
    fn diagonal_matches_dense_product() {
        let cache = random_cache(2, 8, 5);
        let x = cache.x();
        let lambda = 0.8;
        let k = 3;
        let variances: Vec<f64> = (0..8).map(|i| 0.5 + i as f64 * 0.25).collect();
        let a_inv = (x.transpose() * x + DMatrix::identity(5, 5) * lambda)
            .try_inverse()
            .unwrap();
        let mut g = DMatrix::zeros(5, 5);
        let mut pow = a_inv.clone();
        for _ in 0..=k {
            g += &pow;
            pow = &pow * &a_inv * lambda;
        }
        let dense = &g
            * x.transpose()
            * DMatrix::from_diagonal(&DVector::from_vec(variances.clone()))
            * x
            * &g;
        let s = covariance_debiased(
            &cache,
            lambda,
            k,
            &CovarianceModel::Diagonal {
                variances: variances.clone(),
            },
        )
        .unwrap();
        assert!((&s - &dense).amax() < 1e-10);
        let theta = DVector::from_fn(5, |i, _| i as f64 - 1.5);
        let v = contrast_variance(
            &cache,
            lambda,
            k,
            &CovarianceModel::Diagonal { variances },
            &theta,
        )
        .unwrap();
        assert!((v - (theta.transpose() * &dense * &theta)[(0, 0)]).abs() < 1e-10);
    }

    #[test]
    fn large_k_approaches_least_squares_covariance() {
        let cache = random_cache(3, 40, 4);
        let x = cache.x();
        let ls = (x.transpose() * x).try_inverse().unwrap();
        let s = covariance_debiased(&cache, 0.3 * 40.0, 500, &unit()).unwrap();
        assert!((&s - &ls).amax() <= 1e-6 * ls.amax());
    }

    #[test]
    fn psd_and_trace_identity() {
        for seed in 0..10 {
            let cache = random_cache(seed, 12, 7);
            let (lambda, k, sigma) = (2.0, seed as usize * 3, 1.7);
            let s =
                covariance_debiased(&cache, lambda, k, &CovarianceModel::Homoskedastic { sigma })
                    .unwrap();
            let trace = s.trace();
            let min_eig = s.clone().symmetric_eigen().eigenvalues.min();
            assert!(min_eig >= -1e-10 * trace / 7.0);
            let r = cache.shrinkage_ratios(lambda);
            let expected: f64 = r
                .iter()
                .zip(cache.d1().iter())
                .map(|(ri, d)| sigma * sigma * (1.0 - ri.powi(k as i32 + 1)).powi(2) / (d * d))
                .sum();
            assert!((trace - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_contrast_examples() {
        let (cache, fit) = scalar();
        let t = contrast_test(&fit, &cache, &DVector::from_element(1, 1.0), 1.5, &unit()).unwrap();
        assert!(t.z.abs() < 1e-12 && (t.p_value - 1.0).abs() < 1e-12);
        assert!((t.se - 0.15).abs() < 1e-14);
        assert!(matches!(
            contrast_test(&fit, &cache, &DVector::zeros(1), 0.0, &unit()),
            Err(Error::DegenerateContrast)
        ));
    }

    #[test]
    fn non_estimable_contrast() {
        // p > n: a contrast in the null space of X has zero variance
        let cache = random_cache(4, 3, 6);
        let fit = debias(&cache, &RidgeConfig::fixed(1.0, 5)).unwrap();
        let theta = cache.complement_projection(&DVector::from_fn(6, |i, _| 1.0 + i as f64));
        assert!(matches!(
            contrast_test(&fit, &cache, &theta, 0.0, &unit()),
            Err(Error::NonEstimableContrast)
        ));
    }

    #[test]
    fn scalar_intervals() {
        let (cache, fit) = scalar();
        let x0 = DVector::from_element(1, 1.0);
        let ci = confidence_interval(&fit, &cache, &x0, 0.95, &unit()).unwrap();
        // hand evaluation: 1.5 ± 1.959963984540054 · 0.15
        assert!((ci.lower - 1.206_005_402_318_992).abs() < 1e-12);
        assert!((ci.upper - 1.793_994_597_681_008).abs() < 1e-12);
        assert_eq!(ci.kind, IntervalKind::Confidence);

        let tiny = confidence_interval(&fit, &cache, &x0, 1e-12, &unit()).unwrap();
        assert!(tiny.width() < 1e-11);

        let zero = confidence_interval(&fit, &cache, &DVector::zeros(1), 0.95, &unit()).unwrap();
        assert!(zero.degenerate && zero.lower == 0.0 && zero.upper == 0.0);

        assert!(matches!(
            confidence_interval(&fit, &cache, &x0, 1.0, &unit()),
            Err(Error::InvalidLevel(_))
        ));
        assert!(matches!(
            confidence_interval(&fit, &cache, &x0, 0.0, &unit()),
            Err(Error::InvalidLevel(_))
        ));
    }

    #[test]
    fn scalar_prediction_interval() {
        let (cache, mut fit) = scalar();
        fit.sigma_hat = 1.0;
        let x0 = DVector::from_element(1, 1.0);
        let pi = prediction_interval(&fit, &cache, &x0, 0.95).unwrap();
        let half = (pi.upper - pi.lower) / 2.0;
        assert!((half - 1.959_963_984_540_054 * 1.0225f64.sqrt()).abs() < 1e-12);
        assert!((half - 1.9820).abs() < 2e-4);

        fit.sigma_hat = 0.0;
        let pi = prediction_interval(&fit, &cache, &x0, 0.95).unwrap();
        assert!(pi.degenerate && pi.width() == 0.0);
    }

    #[test]
    fn prediction_contains_confidence() {
        let cache = random_cache(5, 30, 5);
        let fit = debias(&cache, &RidgeConfig::fixed(3.0, 10)).unwrap();
        assert!(fit.sigma_hat > 0.0);
        for i in 0..5 {
            let x0 = DVector::from_fn(5, |j, _| ((i * 5 + j) as f64).cos());
            let ci = confidence_interval(&fit, &cache, &x0, 0.9, &CovarianceModel::from_fit(&fit))
                .unwrap();
            let pi = prediction_interval(&fit, &cache, &x0, 0.9).unwrap();
            assert!(pi.lower < ci.lower && ci.upper < pi.upper);
        }
    }

    #[test]
    fn interval_csv_layout() {
        let (cache, fit) = scalar();
        let ci = confidence_interval(&fit, &cache, &DVector::from_element(1, 1.0), 0.95, &unit())
            .unwrap();
        let mut buf = Vec::new();
        write_intervals_csv(&mut buf, &[("a".into(), ci)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "x0_id,point,se,lower,upper,level,kind"
        );
        assert!(lines.next().unwrap().starts_with("a,1.5,"));
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let (_, fit) = scalar();
        let other = random_cache(9, 5, 1);
        assert!(
            confidence_interval(&fit, &other, &DVector::from_element(1, 1.0), 0.9, &unit())
                .is_err()
        );
    }
}
