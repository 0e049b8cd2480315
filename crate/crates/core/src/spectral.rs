//! One-time SVD of the design matrix and every ridge / de-biasing
//! computation expressed through it.
//!
//! With `X = V1 D1 U1'` (rank p*), the k-step de-biased ridge estimator
//! `b̂(λ) + Σ_{j=1..k} λ^j (X'X + λI)^{-j} b̂(λ)` acts on each singular
//! direction through the filter factor `(1 − r^{k+1}) / d²` with
//! `r = λ / (d² + λ)`. All iteration arithmetic therefore runs on
//! length-p* vectors; nothing p×p is ever formed, and the orthogonal
//! complement U2 is only touched through `v − U1 (U1' v)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, numerical_rank, thin_svd};

/// Relative cutoff below which singular values are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;
/// Convergence threshold on `‖b̂_k − b̂_{k−1}‖₂` in auto mode.
pub const DEFAULT_ETA: f64 = 1e-2;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug)]
struct Factorization {
    x: DMatrix<f64>,
    u1: DMatrix<f64>,
    d1: DVector<f64>,
    v1: DMatrix<f64>,
    rank_tol: f64,
}

/// SVD of a fixed design together with the response-dependent projections.
///
/// The factorization is shared (`Arc`) between caches created with
/// [`SpectralCache::with_response`], so Monte Carlo replications over a fixed
/// design decompose `X` exactly once.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    fac: Arc<Factorization>,
    y: DVector<f64>,
    xty: DVector<f64>,
    /// U1' X'y, equal to D1 V1'y.
    z: DVector<f64>,
    vty: DVector<f64>,
    /// ‖(I − V1 V1') y‖².
    resid_perp_sq: f64,
    id: u64,
}

/// SVD of a centered dataset; `rank_tol` is relative to the largest singular value.
pub fn decompose(d: &Dataset, rank_tol: f64) -> Result<SpectralCache> {
    if !d.is_centered() {
        return Err(Error::NotCentered);
    }
    SpectralCache::new(d.x().clone(), d.y().clone(), rank_tol)
}

impl SpectralCache {
    /// Decomposes `x` directly, for designs that enter a model without an intercept.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, rank_tol: f64) -> Result<Self> {
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rank_tol must lie in (0, 1), got {rank_tol}"
            )));
        }
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::Dimensions(format!("empty design {n}x{p}")));
        }
        if !all_finite(x.iter()) {
            return Err(Error::NonFinite("design matrix"));
        }
        let (v, s, u) = thin_svd(&x);
        let rank = numerical_rank(&s, rank_tol);
        if rank == 0 {
            return Err(Error::ZeroRank);
        }
        let fac = Factorization {
            u1: u.columns(0, rank).into_owned(),
            d1: s.rows(0, rank).into_owned(),
            v1: v.columns(0, rank).into_owned(),
            x,
            rank_tol,
        };
        Self::assemble(Arc::new(fac), y)
    }

    fn assemble(fac: Arc<Factorization>, y: DVector<f64>) -> Result<Self> {
        let n = fac.x.nrows();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "response",
                expected: n,
                found: y.len(),
            });
        }
        if !all_finite(y.iter()) {
            return Err(Error::NonFinite("response"));
        }
        let xty = fac.x.tr_mul(&y);
        let z = fac.u1.tr_mul(&xty);
        let vty = fac.v1.tr_mul(&y);
        let resid_perp_sq = (&y - &fac.v1 * &vty).norm_squared();
        let id = fingerprint(&fac, &xty);
        Ok(Self {
            fac,
            y,
            xty,
            z,
            vty,
            resid_perp_sq,
            id,
        })
    }

    /// Same design, new response; reuses the factorization.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::assemble(Arc::clone(&self.fac), y)
    }

    /// Decomposes the sub-design made of `columns` (in the given order) with the same response.
    pub fn restrict_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.p()) {
            return Err(Error::InvalidParameter(format!(
                "column index {bad} out of range for p = {}",
                self.p()
            )));
        }
        SpectralCache::new(
            self.fac.x.select_columns(columns),
            self.y.clone(),
            self.fac.rank_tol,
        )
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.fac.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// p×p* right singular vectors.
    pub fn u1(&self) -> &DMatrix<f64> {
        &self.fac.u1
    }

    /// Retained singular values, descending.
    pub fn d1(&self) -> &DVector<f64> {
        &self.fac.d1
    }

    /// n×p* left singular vectors.
    pub fn v1(&self) -> &DMatrix<f64> {
        &self.fac.v1
    }

    pub fn xty(&self) -> &DVector<f64> {
        &self.xty
    }

    pub fn rank(&self) -> usize {
        self.fac.d1.len()
    }

    pub fn rank_tol(&self) -> f64 {
        self.fac.rank_tol
    }

    pub fn n(&self) -> usize {
        self.fac.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.fac.x.ncols()
    }

    /// Deterministic fingerprint of the design spectrum and X'y.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Shrinkage ratios `λ / (dᵢ² + λ)`.
    pub fn shrinkage_ratios(&self, lambda: f64) -> DVector<f64> {
        self.fac.d1.map(|d| lambda / (d * d + lambda))
    }

    /// Per-direction filter factors `(1 − rᵢ^{k+1}) / dᵢ²`.
    pub fn filter_factors(&self, lambda: f64, k: usize) -> DVector<f64> {
        self.fac.d1.map(|d| correction_filter(d * d, lambda, k))
    }

    /// Per-direction factors `rᵢ^{k+1}`.
    pub fn bias_factors(&self, lambda: f64, k: usize) -> DVector<f64> {
        self.fac.d1.map(|d| ratio_power(d * d, lambda, k + 1))
    }

    /// `U1 · diag(w) · U1' v`.
    pub fn apply_filter(&self, weights: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let coords = self.fac.u1.tr_mul(v).component_mul(weights);
        &self.fac.u1 * coords
    }

    /// `U2 U2' v`, computed as `v − U1 (U1' v)`.
    pub fn complement_projection(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.fac.u1 * self.fac.u1.tr_mul(v)
    }

    fn coefficients(&self, weights: &DVector<f64>) -> DVector<f64> {
        &self.fac.u1 * self.z.component_mul(weights)
    }

    /// `√(‖y − Xβ‖² / n)`, evaluated through the factorization.
    pub fn residual_scale(&self, beta: &DVector<f64>) -> f64 {
        let coords = self.fac.u1.tr_mul(beta);
        let in_span: f64 = self
            .vty
            .iter()
            .zip(self.fac.d1.iter().zip(coords.iter()))
            .map(|(vy, (d, c))| (vy - d * c).powi(2))
            .sum();
        ((self.resid_perp_sq + in_span) / self.n() as f64).sqrt()
    }
}

fn fingerprint(fac: &Factorization, xty: &DVector<f64>) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(fac.x.nrows() as u64);
    feed(fac.x.ncols() as u64);
    fac.d1
        .iter()
        .chain(xty.iter())
        .for_each(|v| feed(v.to_bits()));
    h
}

/// `(λ / (d² + λ))^power`, via logs so that ratios near 1 keep full precision.
pub(crate) fn ratio_power(d2: f64, lambda: f64, power: usize) -> f64 {
    let t = d2 / (d2 + lambda);
    (power as f64 * (-t).ln_1p()).exp()
}

/// `(1 − r^{k+1}) / d²` without cancellation when r is close to 1.
pub(crate) fn correction_filter(d2: f64, lambda: f64, k: usize) -> f64 {
    let t = d2 / (d2 + lambda);
    -((k + 1) as f64 * (-t).ln_1p()).exp_m1() / d2
}

/// Penalty given either absolutely or as a multiple of the sample size (`"0.3n"`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LambdaRule {
    Absolute(f64),
    PerObservation(f64),
}

impl LambdaRule {
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            LambdaRule::Absolute(v) => v,
            LambdaRule::PerObservation(c) => c * n as f64,
        }
    }
}

impl FromStr for LambdaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, rule): (&str, fn(f64) -> LambdaRule) = match s.strip_suffix('n') {
            Some(head) => (
                head.trim_end_matches('*').trim(),
                LambdaRule::PerObservation,
            ),
            None => (s, LambdaRule::Absolute),
        };
        match num.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(rule(v)),
            _ => Err(Error::InvalidParameter(format!(
                "invalid lambda {s:?}; expected e.g. 12.5 or 0.3n"
            ))),
        }
    }
}

impl TryFrom<String> for LambdaRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for LambdaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaRule::Absolute(v) => write!(f, "{v}"),
            LambdaRule::PerObservation(c) => write!(f, "{c}n"),
        }
    }
}

impl From<LambdaRule> for String {
    fn from(rule: LambdaRule) -> String {
        rule.to_string()
    }
}

/// Number of bias-correction steps: fixed, or chosen by the step-size criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Iterations {
    Fixed(usize),
    /// Smallest k ≥ 1 with `‖b̂_k − b̂_{k−1}‖₂ ≤ eta`, capped at `max_iter`.
    Auto {
        eta: f64,
        max_iter: usize,
    },
}

impl Default for Iterations {
    fn default() -> Self {
        Iterations::Auto {
            eta: DEFAULT_ETA,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl Iterations {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Iterations::Fixed(_) => Ok(()),
            Iterations::Auto { eta, max_iter } if eta > 0.0 && eta.is_finite() && max_iter >= 1 => {
                Ok(())
            }
            Iterations::Auto { eta, max_iter } => Err(Error::InvalidParameter(format!(
                "auto iterations need eta > 0 and max_iter >= 1 (got {eta}, {max_iter})"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub lambda: f64,
    pub iterations: Iterations,
}

impl RidgeConfig {
    pub fn fixed(lambda: f64, k: usize) -> Self {
        Self {
            lambda,
            iterations: Iterations::Fixed(k),
        }
    }

    pub fn auto(lambda: f64, eta: f64, max_iter: usize) -> Self {
        Self {
            lambda,
            iterations: Iterations::Auto { eta, max_iter },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        self.iterations.validate()
    }
}

/// A (possibly) de-biased ridge fit.
#[derive(Debug, Clone)]
pub struct DebiasedFit {
    pub beta: DVector<f64>,
    pub k_used: usize,
    pub lambda: f64,
    pub sigma_hat: f64,
    /// False only when auto mode hit `max_iter` before the criterion held.
    pub converged: bool,
    pub rank: usize,
    pub cache_id: u64,
    /// Filter factors `(1 − rᵢ^{k+1}) / dᵢ²`, one per retained direction.
    pub shrinkage: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub lambda: f64,
    pub k_used: usize,
    pub converged: bool,
    pub beta: Vec<f64>,
    pub sigma_hat: f64,
    pub rank: usize,
}

impl DebiasedFit {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            lambda: self.lambda,
            k_used: self.k_used,
            converged: self.converged,
            beta: self.beta.iter().copied().collect(),
            sigma_hat: self.sigma_hat,
            rank: self.rank,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

/// Plain ridge estimator `(X'X + λI)⁻¹ X'y`.
pub fn ridge_fit(cache: &SpectralCache, lambda: f64) -> Result<DVector<f64>> {
    RidgeConfig::fixed(lambda, 0).validate()?;
    let w = cache.d1().map(|d| 1.0 / (d * d + lambda));
    Ok(cache.coefficients(&w))
}

/// Minimum-norm least-squares solution `X⁺ y`.
pub fn least_squares_pinv(cache: &SpectralCache) -> DVector<f64> {
    let w = cache.d1().map(|d| 1.0 / (d * d));
    cache.coefficients(&w)
}

/// k-step de-biased ridge estimator; `k = 0` is plain ridge.
pub fn debias(cache: &SpectralCache, cfg: &RidgeConfig) -> Result<DebiasedFit> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    let (k_used, converged) = match cfg.iterations {
        Iterations::Fixed(k) => (k, true),
        Iterations::Auto { eta, max_iter } => auto_iterations(cache, lambda, eta, max_iter),
    };
    let shrinkage = cache.filter_factors(lambda, k_used);
    let beta = cache.coefficients(&shrinkage);
    let sigma_hat = cache.residual_scale(&beta);
    Ok(DebiasedFit {
        beta,
        k_used,
        lambda,
        sigma_hat,
        converged,
        rank: cache.rank(),
        cache_id: cache.id(),
        shrinkage,
    })
}

/// Scans k = 1, 2, … for the first step whose increment has norm ≤ eta.
///
/// The increment `b̂_k − b̂_{k−1}` has coordinates `rᵢ^k zᵢ / (dᵢ² + λ)` in the
/// U1 basis, so each step costs O(p*).
fn auto_iterations(cache: &SpectralCache, lambda: f64, eta: f64, max_iter: usize) -> (usize, bool) {
    let ratios = cache.shrinkage_ratios(lambda);
    let mut terms: Vec<f64> = cache
        .d1()
        .iter()
        .zip(cache.z.iter())
        .map(|(d, z)| z / (d * d + lambda))
        .collect();
    for k in 1..=max_iter {
        let mut sq = 0.0;
        for (t, r) in terms.iter_mut().zip(ratios.iter()) {
            *t *= r;
            sq += *t * *t;
        }
        if sq.sqrt() <= eta {
            return (k, true);
        }
    }
    (max_iter, false)
}

/// Exact bias `β − E b̂_k = λ^{k+1} (X'X + λI)^{−(k+1)} β`.
///
/// Split as `U1 diag(rᵢ^{k+1}) U1'β` plus the uncorrectable component `U2 U2'β`.
pub fn bias_oracle(
    cache: &SpectralCache,
    beta_true: &DVector<f64>,
    lambda: f64,
    k: usize,
) -> Result<DVector<f64>> {
    if beta_true.len() != cache.p() {
        return Err(Error::DimensionMismatch {
            what: "beta",
            expected: cache.p(),
            found: beta_true.len(),
        });
    }
    RidgeConfig::fixed(lambda, k).validate()?;
    let coords = cache.u1().tr_mul(beta_true);
    let in_span = cache.u1() * coords.component_mul(&cache.bias_factors(lambda, k));
    Ok(in_span + cache.complement_projection(beta_true))
}
