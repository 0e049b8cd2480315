//! Ridge screening for p > n: rank covariates by the magnitude of a
//! de-biased ridge fit, keep the top n*, and de-bias again on the
//! restricted design.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::spectral::{
    debias, decompose, ridge_fit, DebiasedFit, Iterations, LambdaRule, RidgeConfig, SpectralCache,
};

#[derive(Debug, Clone)]
pub struct ScreeningSelection {
    /// Selected column indices (0-based), ascending.
    pub indices: Vec<usize>,
    /// The same indices ordered by decreasing stage-one magnitude.
    pub ranked: Vec<usize>,
    pub lambda_star: f64,
    pub k_stage1: usize,
    pub n_star: usize,
    /// Number of columns in the full design.
    pub p: usize,
    pub restricted_cache: SpectralCache,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub lambda_star: f64,
    pub n_star: usize,
    pub k_stage1: usize,
    pub indices: Vec<usize>,
    pub column_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl ScreeningSelection {
    /// False when the restricted Gram matrix cannot be assumed invertible (n* ≥ n with p > n).
    pub fn supports_inference(&self) -> bool {
        self.warning.is_none()
    }

    pub fn summary(&self, column_names: Option<&[String]>) -> SelectionSummary {
        let column_names = self
            .indices
            .iter()
            .map(|&i| {
                column_names
                    .and_then(|names| names.get(i).cloned())
                    .unwrap_or_else(|| format!("x{}", i + 1))
            })
            .collect();
        SelectionSummary {
            lambda_star: self.lambda_star,
            n_star: self.n_star,
            k_stage1: self.k_stage1,
            indices: self.indices.clone(),
            column_names,
            warning: self.warning.clone(),
        }
    }

    /// Picks the selected coordinates out of a full-length vector.
    pub fn restrict(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.p {
            return Err(Error::DimensionMismatch {
                what: "covariate vector",
                expected: self.p,
                found: v.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|&i| v[i]),
        ))
    }

    /// Places a restricted vector back at the selected positions, zeros elsewhere.
    pub fn scatter(&self, restricted: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.p);
        for (&i, &v) in self.indices.iter().zip(restricted.iter()) {
            full[i] = v;
        }
        full
    }
}

/// Positions of the `count` largest magnitudes, largest first; ties go to the lower index.
pub fn top_magnitude(values: &DVector<f64>, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order.truncate(count);
    order
}

pub fn screen(
    cache: &SpectralCache,
    lambda_star: f64,
    k: Iterations,
    n_star: usize,
) -> Result<ScreeningSelection> {
    let (n, p) = (cache.n(), cache.p());
    if n_star == 0 || n_star > p {
        return Err(Error::InvalidParameter(format!(
            "n_star must lie in 1..={p}, got {n_star}"
        )));
    }
    let stage1 = debias(
        cache,
        &RidgeConfig {
            lambda: lambda_star,
            iterations: k,
        },
    )?;
    let ranked = top_magnitude(&stage1.beta, n_star);
    let mut indices = ranked.clone();
    indices.sort_unstable();
    let warning = (p > n && n_star >= n).then(|| {
        format!("n_star = {n_star} >= n = {n}: the restricted Gram matrix is singular, inference disabled")
    });
    let restricted_cache = cache.restrict_columns(&indices)?;
    Ok(ScreeningSelection {
        indices,
        ranked,
        lambda_star,
        k_stage1: stage1.k_used,
        n_star,
        p,
        restricted_cache,
        warning,
    })
}

/// Second-stage de-biased fit on the screened design.
#[derive(Debug, Clone)]
pub struct TwoStageFit {
    pub selection: ScreeningSelection,
    /// Fit on the restricted design; `fit.beta` has length n*.
    pub fit: DebiasedFit,
    /// Restricted coefficients scattered to the original p positions.
    pub beta_full: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStageSummary {
    pub lambda: f64,
    pub l_used: usize,
    pub converged: bool,
    pub sigma_hat: f64,
    pub indices: Vec<usize>,
    pub beta_restricted: Vec<f64>,
    pub beta_full: Vec<f64>,
}

impl TwoStageFit {
    pub fn beta_restricted(&self) -> &DVector<f64> {
        &self.fit.beta
    }

    pub fn l_used(&self) -> usize {
        self.fit.k_used
    }

    pub fn lambda(&self) -> f64 {
        self.fit.lambda
    }

    pub fn sigma_hat(&self) -> f64 {
        self.fit.sigma_hat
    }

    pub fn summary(&self) -> TwoStageSummary {
        TwoStageSummary {
            lambda: self.fit.lambda,
            l_used: self.fit.k_used,
            converged: self.fit.converged,
            sigma_hat: self.fit.sigma_hat,
            indices: self.selection.indices.clone(),
            beta_restricted: self.fit.beta.iter().copied().collect(),
            beta_full: self.beta_full.iter().copied().collect(),
        }
    }
}

pub fn two_stage_fit(sel: &ScreeningSelection, cfg: &RidgeConfig) -> Result<TwoStageFit> {
    let fit = debias(&sel.restricted_cache, cfg)?;
    let beta_full = sel.scatter(&fit.beta);
    Ok(TwoStageFit {
        selection: sel.clone(),
        fit,
        beta_full,
    })
}

/// How `tune` splits the rows into training and validation parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationScheme {
    /// K contiguous folds, no shuffling.
    KFold(usize),
    /// The last `fraction` of the rows (in order) is held out.
    Holdout(f64),
}

impl ValidationScheme {
    /// (training rows, validation rows) per split.
    pub fn splits(&self, n: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        match *self {
            ValidationScheme::KFold(k) => {
                if k < 2 || k > n {
                    return Err(Error::InvalidParameter(format!(
                        "K-fold needs 2 <= K <= n, got K = {k}"
                    )));
                }
                Ok((0..k)
                    .map(|f| {
                        let (lo, hi) = (f * n / k, (f + 1) * n / k);
                        let train = (0..lo).chain(hi..n).collect();
                        (train, (lo..hi).collect())
                    })
                    .collect())
            }
            ValidationScheme::Holdout(frac) => {
                let n_valid = (frac * n as f64).round() as usize;
                if !(frac > 0.0 && frac < 1.0) || n_valid == 0 || n_valid + 2 > n {
                    return Err(Error::InvalidParameter(format!(
                        "holdout fraction {frac} leaves no usable split"
                    )));
                }
                let cut = n - n_valid;
                Ok(vec![((0..cut).collect(), (cut..n).collect())])
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridScore {
    pub lambda: LambdaRule,
    pub n_star: usize,
    /// Pooled validation mean squared prediction error; `None` when skipped.
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub lambda_star: LambdaRule,
    /// `lambda_star` resolved at the full sample size.
    pub lambda_star_value: f64,
    pub n_star: usize,
    pub best_score: f64,
    /// Set when the runner-up scores within 1e-6 of the winner.
    pub near_tie: bool,
    pub scores: Vec<GridScore>,
}

/// Chooses (λ*, n*) by validation error of the restricted ridge estimator.
///
/// For each split the training part is re-centered, screened at every λ in
/// the grid with `k_stage1` correction steps, and the restricted *ridge*
/// estimator (no de-biasing) is scored on the validation rows. λ rules
/// like `0.3n` resolve against the training size. Ties go to the smaller
/// n*, then the smaller λ.
pub fn tune(
    d: &Dataset,
    lambda_grid: &[LambdaRule],
    n_star_grid: &[usize],
    scheme: ValidationScheme,
    k_stage1: Iterations,
    rank_tol: f64,
) -> Result<TuneResult> {
    if lambda_grid.is_empty() || n_star_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "tuning grids must be non-empty".into(),
        ));
    }
    let splits = scheme.splits(d.n())?;
    let min_train = splits.iter().map(|(t, _)| t.len()).min().unwrap_or(0);

    let feasible = |n_star: usize| -> Option<String> {
        if n_star == 0 || n_star > d.p() {
            Some(format!("n_star {n_star} outside 1..={}", d.p()))
        } else if n_star >= min_train {
            Some(format!("n_star {n_star} >= training size {min_train}"))
        } else {
            None
        }
    };

    // sse[split][lambda][n_star]
    let per_split: Vec<Vec<Vec<f64>>> = splits
        .par_iter()
        .map(|(train, valid)| {
            split_errors(
                d,
                train,
                valid,
                lambda_grid,
                n_star_grid,
                k_stage1,
                rank_tol,
                &feasible,
            )
        })
        .collect::<Result<_>>()?;
    let n_valid: usize = splits.iter().map(|(_, v)| v.len()).sum();

    let mut scores = Vec::with_capacity(lambda_grid.len() * n_star_grid.len());
    for (li, &lambda) in lambda_grid.iter().enumerate() {
        for (ni, &n_star) in n_star_grid.iter().enumerate() {
            let note = feasible(n_star);
            let score = note
                .is_none()
                .then(|| per_split.iter().map(|s| s[li][ni]).sum::<f64>() / n_valid as f64);
            scores.push(GridScore {
                lambda,
                n_star,
                score,
                note,
            });
        }
    }

    let mut ranked: Vec<&GridScore> = scores.iter().filter(|s| s.score.is_some()).collect();
    if ranked.is_empty() {
        let reasons: Vec<String> = scores.iter().filter_map(|s| s.note.clone()).collect();
        return Err(Error::AllPairsInfeasible(reasons.join("; ")));
    }
    let lambda_at = |rule: &LambdaRule| rule.resolve(d.n());
    ranked.sort_by(|a, b| {
        a.score
            .unwrap()
            .total_cmp(&b.score.unwrap())
            .then(a.n_star.cmp(&b.n_star))
            .then(lambda_at(&a.lambda).total_cmp(&lambda_at(&b.lambda)))
    });
    let best = ranked[0];
    let best_score = best.score.unwrap();
    let near_tie = ranked
        .get(1)
        .is_some_and(|s| (s.score.unwrap() - best_score).abs() < 1e-6);
    Ok(TuneResult {
        lambda_star: best.lambda,
        lambda_star_value: lambda_at(&best.lambda),
        n_star: best.n_star,
        best_score,
        near_tie,
        scores: scores.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn split_errors(
    d: &Dataset,
    train: &[usize],
    valid: &[usize],
    lambda_grid: &[LambdaRule],
    n_star_grid: &[usize],
    k_stage1: Iterations,
    rank_tol: f64,
    feasible: &(dyn Fn(usize) -> Option<String> + Sync),
) -> Result<Vec<Vec<f64>>> {
    let train_d = d.select_rows(train)?.center()?;
    let means = train_d
        .means()
        .expect("centered dataset keeps its means")
        .clone();
    let x_valid = DMatrix::from_fn(valid.len(), d.p(), |i, j| d.x()[(valid[i], j)] - means.x[j]);
    let y_valid = DVector::from_fn(valid.len(), |i, _| d.y()[valid[i]] - means.y);

    let cache = decompose(&train_d, rank_tol)?;
    let max_star = n_star_grid
        .iter()
        .copied()
        .filter(|&s| feasible(s).is_none())
        .max()
        .unwrap_or(0);
    lambda_grid
        .iter()
        .map(|rule| {
            let lambda = rule.resolve(train_d.n());
            let stage1 = debias(
                &cache,
                &RidgeConfig {
                    lambda,
                    iterations: k_stage1,
                },
            )?;
            let order = top_magnitude(&stage1.beta, max_star);
            n_star_grid
                .iter()
                .map(|&n_star| {
                    if feasible(n_star).is_some() {
                        return Ok(f64::NAN);
                    }
                    let mut cols = order[..n_star].to_vec();
                    cols.sort_unstable();
                    let beta = ridge_fit(&cache.restrict_columns(&cols)?, lambda)?;
                    let pred = x_valid.select_columns(&cols) * beta;
                    Ok((&y_valid - pred).norm_squared())
                })
                .collect()
        })
        .collect()
}
