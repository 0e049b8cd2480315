//! Seeded Monte Carlo studies under a fixed design.
//!
//! The design and β are drawn once from ChaCha20 stream 0 of the master
//! seed; replication `r` draws its noise from stream `r + 1`. Replications
//! run on the rayon pool and are reduced in replication order, so results do
//! not depend on the number of threads.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    confidence_interval, contrast_variance, prediction_interval, CovarianceModel, IntervalEstimate,
};
use crate::screening::{screen, ScreeningSelection};
use crate::spectral::{
    debias, Iterations, LambdaRule, RidgeConfig, SpectralCache, DEFAULT_RANK_TOL,
};
use crate::stats::normal_pdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Example1,
    Example2,
    Custom,
}

/// Noise law of the data-generating process. `sigma = 0` is allowed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Homoskedastic { sigma: f64 },
    Diagonal { variances: Vec<f64> },
}

impl NoiseModel {
    fn validate(&self, n: usize) -> Result<()> {
        let ok = match self {
            NoiseModel::Homoskedastic { sigma } => *sigma >= 0.0 && sigma.is_finite(),
            NoiseModel::Diagonal { variances } => {
                if variances.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "noise variances",
                        expected: n,
                        found: variances.len(),
                    });
                }
                variances.iter().all(|v| *v >= 0.0 && v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "noise scale must be non-negative and finite".into(),
            ))
        }
    }

    fn sd(&self, i: usize) -> f64 {
        match self {
            NoiseModel::Homoskedastic { sigma } => *sigma,
            NoiseModel::Diagonal { variances } => variances[i].sqrt(),
        }
    }

    /// Scale of a fresh out-of-sample error (root mean variance for the diagonal law).
    fn new_point_sd(&self) -> f64 {
        match self {
            NoiseModel::Homoskedastic { sigma } => *sigma,
            NoiseModel::Diagonal { variances } => {
                (variances.iter().sum::<f64>() / variances.len() as f64).sqrt()
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            NoiseModel::Homoskedastic { sigma } => *sigma == 0.0,
            NoiseModel::Diagonal { variances } => variances.iter().all(|v| *v == 0.0),
        }
    }

    fn covariance(&self) -> Option<CovarianceModel> {
        if self.is_zero() {
            return None;
        }
        Some(match self {
            NoiseModel::Homoskedastic { sigma } => CovarianceModel::Homoskedastic { sigma: *sigma },
            NoiseModel::Diagonal { variances } => CovarianceModel::Diagonal {
                variances: variances.clone(),
            },
        })
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Homoskedastic { sigma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub beta_rule: String,
    pub noise: NoiseModel,
    pub design_rule: String,
    pub seed: u64,
}

/// A fixed design with its true coefficients, reused across replications.
#[derive(Debug, Clone)]
pub struct Design {
    pub spec: DgpSpec,
    pub x: DMatrix<f64>,
    pub beta: DVector<f64>,
    cache: SpectralCache,
}

fn design_rng(seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn replication_rng(seed: u64, replication: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64 + 1);
    rng
}

fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    Uniform::new(lo, hi).expect("finite bounds with lo < hi")
}

impl Design {
    fn build(spec: DgpSpec, x: DMatrix<f64>, beta: DVector<f64>) -> Result<Self> {
        spec.noise.validate(spec.n)?;
        let cache = SpectralCache::new(x.clone(), DVector::zeros(spec.n), DEFAULT_RANK_TOL)?;
        Ok(Design {
            spec,
            x,
            beta,
            cache,
        })
    }

    /// User-supplied design and coefficients.
    pub fn custom(
        x: DMatrix<f64>,
        beta: DVector<f64>,
        noise: NoiseModel,
        seed: u64,
    ) -> Result<Self> {
        if beta.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                what: "beta",
                expected: x.ncols(),
                found: beta.len(),
            });
        }
        let spec = DgpSpec {
            family: Family::Custom,
            n: x.nrows(),
            p: x.ncols(),
            beta_rule: "user supplied".into(),
            noise,
            design_rule: "user supplied".into(),
            seed,
        };
        Design::build(spec, x, beta)
    }

    pub fn cache(&self) -> &SpectralCache {
        &self.cache
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn p(&self) -> usize {
        self.spec.p
    }

    /// Indices of the nonzero true coefficients.
    pub fn support(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.beta[j] != 0.0).collect()
    }

    /// Noise vector of replication `r`.
    pub fn noise(&self, replication: usize) -> DVector<f64> {
        self.noise_and_extra(replication, 0).0
    }

    fn noise_and_extra(&self, replication: usize, extra: usize) -> (DVector<f64>, Vec<f64>) {
        let mut rng = replication_rng(self.spec.seed, replication);
        let eps = DVector::from_fn(self.n(), |i, _| {
            self.spec.noise.sd(i) * rng.sample::<f64, _>(StandardNormal)
        });
        let sd = self.spec.noise.new_point_sd();
        let fresh = (0..extra)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (eps, fresh)
    }

    /// Response of replication `r`: `Xβ + ε_r`.
    pub fn response(&self, replication: usize) -> DVector<f64> {
        &self.x * &self.beta + self.noise(replication)
    }
}

/// Fixed orthonormal-column design `X = MN'` from the SVD of a U(−2, 2) matrix.
///
/// β: first p/2 entries from U(−2, −1), the rest from U(1, 2).
pub fn generate_example1(p: usize, n: usize, seed: u64) -> Result<Design> {
    if p == 0 || !p.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "example 1 needs an even p >= 2, got {p}"
        )));
    }
    if p >= n {
        return Err(Error::Dimensions(format!(
            "example 1 needs p < n, got p = {p}, n = {n}"
        )));
    }
    let mut rng = design_rng(seed);
    let h_dist = uniform(-2.0, 2.0);
    let h = DMatrix::from_fn(n, p, |_, _| rng.sample(h_dist));
    let svd = h.svd(true, true);
    let m = svd.u.expect("left vectors requested");
    let nt = svd.v_t.expect("right vectors requested");
    let x = m * nt;
    let (neg, pos) = (uniform(-2.0, -1.0), uniform(1.0, 2.0));
    let beta = DVector::from_fn(p, |j, _| {
        if j < p / 2 {
            rng.sample(neg)
        } else {
            rng.sample(pos)
        }
    });
    let spec = DgpSpec {
        family: Family::Example1,
        n,
        p,
        beta_rule: "beta[0..p/2] ~ U(-2,-1), beta[p/2..p] ~ U(1,2)".into(),
        noise: NoiseModel::default(),
        design_rule: "X = M N' from the SVD H = M D N', H[i,j] ~ U(-2,2)".into(),
        seed,
    };
    Design::build(spec, x, beta)
}

/// Gaussian design with 10 active coefficients for p > n.
///
/// β: entries 0..5 from U(−5, −2), entries 5..10 from U(2, 5), the rest zero.
pub fn generate_example2(p: usize, n: usize, seed: u64) -> Result<Design> {
    if p <= n {
        return Err(Error::Dimensions(format!(
            "example 2 needs p > n, got p = {p}, n = {n}"
        )));
    }
    if p < 10 {
        return Err(Error::InvalidParameter(format!(
            "example 2 needs p >= 10, got {p}"
        )));
    }
    let mut rng = design_rng(seed);
    // Row-major draw so that row i is the i-th N(0, I_p) vector.
    let x = DMatrix::from_row_iterator(
        n,
        p,
        (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let (neg, pos) = (uniform(-5.0, -2.0), uniform(2.0, 5.0));
    let beta = DVector::from_fn(p, |j, _| match j {
        0..5 => rng.sample(neg),
        5..10 => rng.sample(pos),
        _ => 0.0,
    });
    let spec = DgpSpec {
        family: Family::Example2,
        n,
        p,
        beta_rule: "beta[0..5] ~ U(-5,-2), beta[5..10] ~ U(2,5), rest 0".into(),
        noise: NoiseModel::default(),
        design_rule: "rows of X iid N(0, I_p)".into(),
        seed,
    };
    Design::build(spec, x, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// k-step de-biased ridge on the full design; `k = 0` is plain ridge.
    Debiased { lambda: LambdaRule, k: usize },
    /// Ridge screening at `(λ*, k)` keeping `n_star` columns, then `l` steps at `λ` (default `λ*`).
    Screened {
        lambda_star: LambdaRule,
        k: usize,
        n_star: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<LambdaRule>,
        l: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub kind: EstimatorKind,
}

impl EstimatorSpec {
    pub fn debiased(lambda: LambdaRule, k: usize) -> Self {
        EstimatorSpec {
            label: None,
            kind: EstimatorKind::Debiased { lambda, k },
        }
    }

    pub fn screened(
        lambda_star: LambdaRule,
        k: usize,
        n_star: usize,
        lambda: Option<LambdaRule>,
        l: usize,
    ) -> Self {
        EstimatorSpec {
            label: None,
            kind: EstimatorKind::Screened {
                lambda_star,
                k,
                n_star,
                lambda,
                l,
            },
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match &self.kind {
            EstimatorKind::Debiased { lambda, k } => format!("debiased:lambda={lambda}:k={k}"),
            EstimatorKind::Screened {
                lambda_star,
                k,
                n_star,
                lambda,
                l,
            } => format!(
                "screened:lambda_star={lambda_star}:k={k}:n_star={n_star}:lambda={}:l={l}",
                lambda.unwrap_or(*lambda_star)
            ),
        }
    }

    fn validate(&self, design: &Design) -> Result<()> {
        let positive = |rule: &LambdaRule| {
            let v = rule.resolve(design.n());
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "lambda rule {rule} resolves to {v}"
                )))
            }
        };
        match &self.kind {
            EstimatorKind::Debiased { lambda, .. } => positive(lambda),
            EstimatorKind::Screened {
                lambda_star,
                n_star,
                lambda,
                ..
            } => {
                positive(lambda_star)?;
                if let Some(l) = lambda {
                    positive(l)?;
                }
                if *n_star == 0 || *n_star > design.p() {
                    return Err(Error::InvalidParameter(format!(
                        "n_star must lie in 1..={}, got {n_star}",
                        design.p()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// A linear contrast `θ'β`; a short `theta` is padded with zeros to length p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub label: String,
    pub theta: Vec<f64>,
}

impl Contrast {
    pub fn new(label: impl Into<String>, theta: Vec<f64>) -> Self {
        Contrast {
            label: label.into(),
            theta,
        }
    }

    /// The unit vector on coordinate `j` (0-based), labelled `e{j+1}`.
    pub fn unit(j: usize) -> Self {
        let mut theta = vec![0.0; j + 1];
        theta[j] = 1.0;
        Contrast {
            label: format!("e{}", j + 1),
            theta,
        }
    }

    fn padded(&self, p: usize) -> Result<DVector<f64>> {
        if self.theta.len() > p {
            return Err(Error::DimensionMismatch {
                what: "contrast",
                expected: p,
                found: self.theta.len(),
            });
        }
        let mut v = DVector::zeros(p);
        v.rows_mut(0, self.theta.len()).copy_from_slice(&self.theta);
        Ok(v)
    }
}

/// Optional per-replication metrics beyond MSE, AEE and σ̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSelection {
    /// Nominal level for interval coverage.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Points `x0` at which confidence and prediction intervals are checked.
    #[serde(default)]
    pub interval_points: Vec<Vec<f64>>,
    /// Contrasts whose `√n θ'(β̂ − β)` draws are recorded.
    #[serde(default)]
    pub contrasts: Vec<Contrast>,
}

fn default_level() -> f64 {
    0.95
}

impl Default for MetricSelection {
    fn default() -> Self {
        MetricSelection {
            level: default_level(),
            interval_points: Vec::new(),
            contrasts: Vec::new(),
        }
    }
}

/// Draws of `√n θ'(β̂ − β)` with the limiting normal's standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastSamples {
    pub values: Vec<f64>,
    /// `√n · sd(θ'β̂)` under the true noise law, averaged over selections when screening.
    pub theoretical_sd: f64,
}

impl ContrastSamples {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sample_sd(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self.values.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / (self.values.len() as f64 - 1.0)).sqrt()
    }

    /// Monte Carlo standard error of the mean.
    pub fn mean_se(&self) -> f64 {
        self.sample_sd() / (self.values.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub spec: EstimatorSpec,
    /// Mean of `‖β̂ − β‖²` over replications.
    pub mse: f64,
    pub mse_se: f64,
    /// `‖mean(β̂) − β‖ / √p`.
    pub aee: f64,
    /// Delta-method standard error of `aee`.
    pub aee_se: f64,
    /// `√(mean over replications of ‖y − Xβ̂‖² / n)`.
    pub sigma_hat: f64,
    /// Mean fraction of the true support kept by screening.
    pub ep: Option<f64>,
    pub ci_coverage: Option<f64>,
    pub pi_coverage: Option<f64>,
    pub mean_error: Vec<f64>,
    pub mean_error_se: Vec<f64>,
    #[serde(skip)]
    pub contrast_samples: BTreeMap<String, ContrastSamples>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub dgp: DgpSpec,
    pub replications: usize,
    pub level: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl StudyResult {
    pub fn estimator(&self, label: &str) -> Result<&EstimatorSummary> {
        self.estimators
            .iter()
            .find(|e| e.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn mse_by_k(&self) -> BTreeMap<String, f64> {
        self.estimators
            .iter()
            .map(|e| (e.label.clone(), e.mse))
            .collect()
    }

    pub fn aee_by_k(&self) -> BTreeMap<String, f64> {
        self.estimators
            .iter()
            .map(|e| (e.label.clone(), e.aee))
            .collect()
    }

    pub fn sigma_hats(&self) -> BTreeMap<String, f64> {
        self.estimators
            .iter()
            .map(|e| (e.label.clone(), e.sigma_hat))
            .collect()
    }

    /// Samples for `"<estimator label>/<contrast label>"`.
    pub fn contrast(&self, key: &str) -> Result<&ContrastSamples> {
        let (est, con) = key
            .rsplit_once('/')
            .ok_or_else(|| Error::UnknownLabel(key.to_string()))?;
        self.estimator(est)?
            .contrast_samples
            .get(con)
            .ok_or_else(|| Error::UnknownLabel(key.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything `run_study` needs, as read from a JSON study config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub family: Family,
    pub p: usize,
    pub n: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    pub replications: usize,
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub metrics: MetricSelection,
}

fn default_seed() -> u64 {
    1234
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn design(&self) -> Result<Design> {
        let mut design = match self.family {
            Family::Example1 => generate_example1(self.p, self.n, self.seed)?,
            Family::Example2 => generate_example2(self.p, self.n, self.seed)?,
            Family::Custom => {
                return Err(Error::InvalidParameter(
                    "custom designs must be built with Design::custom".into(),
                ))
            }
        };
        if let Some(noise) = &self.noise {
            noise.validate(self.n)?;
            design.spec.noise = noise.clone();
        }
        Ok(design)
    }

    pub fn run(&self) -> Result<StudyResult> {
        run_study(
            &self.design()?,
            &self.estimators,
            self.replications,
            &self.metrics,
        )
    }
}

/// One estimator's output in one replication.
struct Draw {
    error: DVector<f64>,
    rss_over_n: f64,
    ep: Option<f64>,
    ci_hits: Vec<bool>,
    pi_hits: Vec<bool>,
    contrasts: Vec<f64>,
    contrast_vars: Vec<f64>,
    inference: bool,
}

struct Prepared {
    contrasts: Vec<DVector<f64>>,
    points: Vec<DVector<f64>>,
    support: Vec<usize>,
    noise_cov: Option<CovarianceModel>,
}

fn hit(
    interval: impl FnOnce() -> Result<IntervalEstimate>,
    point: f64,
    sigma_hat: f64,
    target: f64,
) -> Result<bool> {
    if sigma_hat == 0.0 {
        return Ok(point == target);
    }
    Ok(interval()?.contains(target))
}

fn contrast_var(
    cache: &SpectralCache,
    lambda: f64,
    k: usize,
    cov: &Option<CovarianceModel>,
    theta: &DVector<f64>,
) -> Result<f64> {
    match cov {
        Some(c) => contrast_variance(cache, lambda, k, c, theta),
        None => Ok(0.0),
    }
}

fn run_replication(
    design: &Design,
    estimators: &[EstimatorSpec],
    metrics: &MetricSelection,
    prep: &Prepared,
    r: usize,
) -> Result<Vec<Draw>> {
    let n = design.n();
    let (eps, fresh) = design.noise_and_extra(r, prep.points.len());
    let signal = &design.x * &design.beta;
    let y = &signal + eps;
    let cache = design
        .cache
        .with_response(y)
        .map_err(|e| abort(r, "<design>", e))?;
    let mut selections: Vec<((u64, usize, usize), ScreeningSelection)> = Vec::new();
    let sqrt_n = (n as f64).sqrt();

    let mut draws = Vec::with_capacity(estimators.len());
    for est in estimators {
        let label = est.label();
        let fail = |e: Error| abort(r, &label, e);
        let (beta_full, fit, fit_cache, selection) = match &est.kind {
            EstimatorKind::Debiased { lambda, k } => {
                let fit =
                    debias(&cache, &RidgeConfig::fixed(lambda.resolve(n), *k)).map_err(fail)?;
                (fit.beta.clone(), fit, &cache, None)
            }
            EstimatorKind::Screened {
                lambda_star,
                k,
                n_star,
                lambda,
                l,
            } => {
                let ls = lambda_star.resolve(n);
                let key = (ls.to_bits(), *k, *n_star);
                let pos = match selections.iter().position(|(kk, _)| *kk == key) {
                    Some(i) => i,
                    None => {
                        let sel =
                            screen(&cache, ls, Iterations::Fixed(*k), *n_star).map_err(fail)?;
                        selections.push((key, sel));
                        selections.len() - 1
                    }
                };
                let sel = &selections[pos].1;
                let lam = lambda.unwrap_or(*lambda_star).resolve(n);
                let fit =
                    debias(&sel.restricted_cache, &RidgeConfig::fixed(lam, *l)).map_err(fail)?;
                (
                    sel.scatter(&fit.beta),
                    fit,
                    &sel.restricted_cache,
                    Some(sel),
                )
            }
        };
        if !beta_full.iter().all(|v| v.is_finite()) || !fit.sigma_hat.is_finite() {
            return Err(abort(r, &label, Error::NonFinite("estimate")));
        }
        let error = &beta_full - &design.beta;
        let restrict = |v: &DVector<f64>| -> Result<DVector<f64>> {
            match selection {
                Some(sel) => sel.restrict(v),
                None => Ok(v.clone()),
            }
        };
        let inference = selection.is_none_or(|s| s.supports_inference());

        let ep = match selection {
            Some(sel) if !prep.support.is_empty() => {
                let kept = prep
                    .support
                    .iter()
                    .filter(|j| sel.indices.binary_search(j).is_ok())
                    .count();
                Some(kept as f64 / prep.support.len() as f64)
            }
            _ => None,
        };

        let mut ci_hits = Vec::new();
        let mut pi_hits = Vec::new();
        if inference {
            let cov_hat = CovarianceModel::Homoskedastic {
                sigma: fit.sigma_hat,
            };
            for (x0, extra) in prep.points.iter().zip(&fresh) {
                let x0r = restrict(x0).map_err(fail)?;
                let point = x0r.dot(&fit.beta);
                let mean = x0.dot(&design.beta);
                let ci = || confidence_interval(&fit, fit_cache, &x0r, metrics.level, &cov_hat);
                ci_hits.push(hit(ci, point, fit.sigma_hat, mean).map_err(fail)?);
                let pi = || prediction_interval(&fit, fit_cache, &x0r, metrics.level);
                pi_hits.push(hit(pi, point, fit.sigma_hat, mean + extra).map_err(fail)?);
            }
        }

        let mut contrasts = Vec::with_capacity(prep.contrasts.len());
        let mut contrast_vars = Vec::with_capacity(prep.contrasts.len());
        for theta in &prep.contrasts {
            contrasts.push(sqrt_n * theta.dot(&error));
            let theta_r = restrict(theta).map_err(fail)?;
            let var = if theta_r.iter().all(|v| *v == 0.0) {
                0.0
            } else {
                contrast_var(fit_cache, fit.lambda, fit.k_used, &prep.noise_cov, &theta_r)
                    .map_err(fail)?
            };
            contrast_vars.push(n as f64 * var);
        }

        draws.push(Draw {
            error,
            rss_over_n: fit.sigma_hat * fit.sigma_hat,
            ep,
            ci_hits,
            pi_hits,
            contrasts,
            contrast_vars,
            inference,
        });
    }
    Ok(draws)
}

fn abort(replication: usize, estimator: &str, e: Error) -> Error {
    match e {
        Error::StudyAborted { .. } => e,
        other => Error::StudyAborted {
            replication,
            estimator: estimator.to_string(),
            reason: other.to_string(),
        },
    }
}

/// Runs `replications` seeded replications of every estimator on a fixed design.
pub fn run_study(
    design: &Design,
    estimators: &[EstimatorSpec],
    replications: usize,
    metrics: &MetricSelection,
) -> Result<StudyResult> {
    if replications < 2 {
        return Err(Error::InvalidParameter(
            "a study needs at least 2 replications".into(),
        ));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidParameter("no estimators requested".into()));
    }
    if !(metrics.level > 0.0 && metrics.level < 1.0) {
        return Err(Error::InvalidLevel(metrics.level));
    }
    let mut labels: Vec<String> = Vec::with_capacity(estimators.len());
    for est in estimators {
        est.validate(design)?;
        let label = est.label();
        if labels.contains(&label) {
            return Err(Error::InvalidParameter(format!(
                "duplicate estimator label {label}"
            )));
        }
        labels.push(label);
    }
    let mut contrast_labels: Vec<&str> = Vec::new();
    for c in &metrics.contrasts {
        if contrast_labels.contains(&c.label.as_str()) || c.label.contains('/') {
            return Err(Error::InvalidParameter(format!(
                "bad or duplicate contrast label {}",
                c.label
            )));
        }
        contrast_labels.push(&c.label);
    }
    let p = design.p();
    let prep = Prepared {
        contrasts: metrics
            .contrasts
            .iter()
            .map(|c| c.padded(p))
            .collect::<Result<_>>()?,
        points: metrics
            .interval_points
            .iter()
            .map(|x0| {
                if x0.len() == p {
                    Ok(DVector::from_column_slice(x0))
                } else {
                    Err(Error::DimensionMismatch {
                        what: "interval point",
                        expected: p,
                        found: x0.len(),
                    })
                }
            })
            .collect::<Result<_>>()?,
        support: design.support(),
        noise_cov: design.spec.noise.covariance(),
    };

    let runs: Vec<Result<Vec<Draw>>> = (0..replications)
        .into_par_iter()
        .map(|r| run_replication(design, estimators, metrics, &prep, r))
        .collect();
    let mut draws = Vec::with_capacity(replications);
    for run in runs {
        draws.push(run?);
    }

    let estimators = estimators
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(j, (spec, label))| summarize(j, spec.clone(), label, &draws, metrics, p))
        .collect();
    Ok(StudyResult {
        dgp: design.spec.clone(),
        replications,
        level: metrics.level,
        estimators,
    })
}

fn summarize(
    j: usize,
    spec: EstimatorSpec,
    label: String,
    draws: &[Vec<Draw>],
    metrics: &MetricSelection,
    p: usize,
) -> EstimatorSummary {
    let reps = draws.len() as f64;
    let mut sum = DVector::zeros(p);
    let mut sum_sq = DVector::zeros(p);
    let mut sse = Vec::with_capacity(draws.len());
    let mut rss = 0.0;
    for rep in draws {
        let d = &rep[j];
        sum += &d.error;
        sum_sq += d.error.component_mul(&d.error);
        sse.push(d.error.norm_squared());
        rss += d.rss_over_n;
    }
    let mean = &sum / reps;
    let coord_var = (sum_sq - mean.component_mul(&mean) * reps) / (reps - 1.0);
    let mean_se = coord_var.map(|v| (v.max(0.0) / reps).sqrt());

    let mse = sse.iter().sum::<f64>() / reps;
    let mse_var = sse.iter().map(|s| (s - mse) * (s - mse)).sum::<f64>() / (reps - 1.0);
    let norm = mean.norm();
    let aee = norm / (p as f64).sqrt();
    let aee_se = if norm > 0.0 {
        let num: f64 = mean
            .iter()
            .zip(mean_se.iter())
            .map(|(m, s)| m * m * s * s)
            .sum();
        num.sqrt() / norm / (p as f64).sqrt()
    } else {
        mean_se.norm() / (p as f64).sqrt()
    };

    let ep = draws[0][j].ep.map(|_| {
        draws
            .iter()
            .map(|rep| rep[j].ep.unwrap_or(0.0))
            .sum::<f64>()
            / reps
    });
    let coverage = |pick: fn(&Draw) -> &Vec<bool>| {
        let total: usize = draws.iter().map(|rep| pick(&rep[j]).len()).sum();
        if total == 0 || draws.iter().any(|rep| !rep[j].inference) {
            return None;
        }
        let hits = draws
            .iter()
            .map(|rep| pick(&rep[j]).iter().filter(|h| **h).count())
            .sum::<usize>();
        Some(hits as f64 / total as f64)
    };
    let ci_coverage = coverage(|d| &d.ci_hits);
    let pi_coverage = coverage(|d| &d.pi_hits);

    let contrast_samples = metrics
        .contrasts
        .iter()
        .enumerate()
        .map(|(c, contrast)| {
            let values: Vec<f64> = draws.iter().map(|rep| rep[j].contrasts[c]).collect();
            let var = draws.iter().map(|rep| rep[j].contrast_vars[c]).sum::<f64>() / reps;
            (
                contrast.label.clone(),
                ContrastSamples {
                    values,
                    theoretical_sd: var.sqrt(),
                },
            )
        })
        .collect();

    EstimatorSummary {
        label,
        spec,
        mse,
        mse_se: (mse_var / reps).sqrt(),
        aee,
        aee_se,
        sigma_hat: (rss / reps).sqrt(),
        ep,
        ci_coverage,
        pi_coverage,
        mean_error: mean.iter().copied().collect(),
        mean_error_se: mean_se.iter().copied().collect(),
        contrast_samples,
    }
}

/// Columns available in [`write_table_csv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMetric {
    Mse,
    Aee,
    SigmaHat,
    Ep,
    CiCoverage,
    PiCoverage,
}

impl TableMetric {
    pub fn pick(&self, e: &EstimatorSummary) -> Option<f64> {
        match self {
            TableMetric::Mse => Some(e.mse),
            TableMetric::Aee => Some(e.aee),
            TableMetric::SigmaHat => Some(e.sigma_hat),
            TableMetric::Ep => e.ep,
            TableMetric::CiCoverage => e.ci_coverage,
            TableMetric::PiCoverage => e.pi_coverage,
        }
    }
}

/// One row per study (`p, n`), one column per estimator label in first-seen order.
pub fn write_table_csv<W: Write>(
    writer: W,
    results: &[StudyResult],
    metric: TableMetric,
) -> Result<()> {
    let mut labels: Vec<&str> = Vec::new();
    for res in results {
        for e in &res.estimators {
            if !labels.contains(&e.label.as_str()) {
                labels.push(&e.label);
            }
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["p".to_string(), "n".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    w.write_record(&header)?;
    for res in results {
        let mut row = vec![res.dgp.p.to_string(), res.dgp.n.to_string()];
        for label in &labels {
            let cell = res
                .estimators
                .iter()
                .find(|e| e.label == *label)
                .and_then(|e| metric.pick(e))
                .map(|v| v.to_string())
                .unwrap_or_default();
            row.push(cell);
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// `value, density` rows: each draw and the limiting normal density at it.
pub fn emit_histogram_data<W: Write>(writer: W, result: &StudyResult, key: &str) -> Result<()> {
    let samples = result.contrast(key)?;
    let sd = samples.theoretical_sd;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["value", "density"])?;
    for v in &samples.values {
        let density = if sd > 0.0 {
            normal_pdf(v / sd) / sd
        } else {
            0.0
        };
        w.write_record([v.to_string(), density.to_string()])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(s: &str) -> LambdaRule {
        s.parse().unwrap()
    }

    #[test]
    fn example1_design() {
        let d = generate_example1(10, 30, 1234).unwrap();
        let gram = d.x.tr_mul(&d.x);
        assert!((gram - DMatrix::identity(10, 10)).abs().max() < 1e-10);
        assert!(d.beta.rows(0, 5).iter().all(|b| (-2.0..-1.0).contains(b)));
        assert!(d.beta.rows(5, 5).iter().all(|b| (1.0..2.0).contains(b)));
        let again = generate_example1(10, 30, 1234).unwrap();
        assert_eq!(d.x, again.x);
        assert_eq!(d.beta, again.beta);
        assert!(generate_example1(30, 30, 1).is_err());
        assert!(generate_example1(9, 30, 1).is_err());
    }

    #[test]
    fn example2_design() {
        let d = generate_example2(40, 20, 1234).unwrap();
        assert_eq!(d.support(), (0..10).collect::<Vec<_>>());
        assert!(d.beta.rows(0, 5).iter().all(|b| (-5.0..-2.0).contains(b)));
        assert!(d.beta.rows(5, 5).iter().all(|b| (2.0..5.0).contains(b)));
        let again = generate_example2(40, 20, 1234).unwrap();
        assert_eq!(d.x, again.x);
        assert!(generate_example2(20, 20, 1).is_err());
        assert!(generate_example2(9, 5, 1).is_err());
    }

    #[test]
    fn replication_streams_are_independent_of_order() {
        let d = generate_example1(4, 12, 7).unwrap();
        let late = d.noise(5);
        let _ = d.noise(0);
        assert_eq!(late, d.noise(5));
        assert_ne!(d.noise(4), d.noise(5));
    }

    #[test]
    fn zero_noise_gives_squared_bias() {
        let mut d = generate_example1(6, 20, 3).unwrap();
        d.spec.noise = NoiseModel::Homoskedastic { sigma: 0.0 };
        let est = vec![EstimatorSpec::debiased(rule("0.3n"), 4)];
        let res = run_study(&d, &est, 5, &MetricSelection::default()).unwrap();
        let bias = crate::spectral::bias_oracle(d.cache(), &d.beta, 6.0, 4).unwrap();
        let e = &res.estimators[0];
        assert!((e.mse - bias.norm_squared()).abs() < 1e-12);
        assert!(e.mse_se < 1e-12);
    }

    #[test]
    fn labels_and_lookup() {
        let d = generate_example1(4, 12, 7).unwrap();
        let est = vec![
            EstimatorSpec::debiased(rule("0.05n"), 0),
            EstimatorSpec::debiased(rule("0.05n"), 5),
        ];
        let metrics = MetricSelection {
            contrasts: vec![Contrast::unit(0)],
            ..Default::default()
        };
        let res = run_study(&d, &est, 20, &metrics).unwrap();
        assert_eq!(res.estimators[1].label, "debiased:lambda=0.05n:k=5");
        let key = "debiased:lambda=0.05n:k=5/e1";
        assert_eq!(res.contrast(key).unwrap().values.len(), 20);
        let mut buf = Vec::new();
        emit_histogram_data(&mut buf, &res, key).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 21);
        assert!(matches!(
            emit_histogram_data(Vec::new(), &res, "nope/e1"),
            Err(Error::UnknownLabel(_))
        ));
        let dup = vec![
            EstimatorSpec::debiased(rule("1"), 1),
            EstimatorSpec::debiased(rule("1"), 1),
        ];
        assert!(run_study(&d, &dup, 3, &MetricSelection::default()).is_err());
    }

    #[test]
    fn config_round_trip() {
        let text = r#"{
            "family": "example2", "p": 30, "n": 20, "replications": 4,
            "estimators": [
                {"kind": "debiased", "lambda": "0.1n", "k": 1},
                {"kind": "screened", "lambda_star": "0.1n", "k": 100, "n_star": 12, "l": 1, "label": "rs"}
            ]
        }"#;
        let cfg = StudyConfig::from_json(text).unwrap();
        assert_eq!(cfg.seed, 1234);
        let res = cfg.run().unwrap();
        assert_eq!(res.estimators[1].label, "rs");
        assert!(res.estimators[1].ep.is_some());
        assert!(res.estimators[0].ep.is_none());
        let mut buf = Vec::new();
        write_table_csv(&mut buf, &[res], TableMetric::Mse).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("p,n,debiased:lambda=0.1n:k=1,rs\n30,20,"));
    }
}
