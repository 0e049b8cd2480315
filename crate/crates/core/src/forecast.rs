//! Out-of-sample forecasting with factor-augmented de-biased ridge regressions.
//!
//! Each forecast origin refits the lag-embedded target, plus principal-component
//! factors of the covariate panel, on the most recent window of rows. The
//! penalty is chosen from a grid by out-of-sample mean squared forecast error.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{lag_embed, pca_factors, Dataset, LagSpec};
use crate::error::{Error, Result};
use crate::inference::{prediction_interval, prediction_interval_restricted};
use crate::screening::{screen, two_stage_fit};
use crate::spectral::{debias, decompose, Iterations, LambdaRule, RidgeConfig, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowScheme {
    /// Fixed length: the oldest row drops out as each new one arrives.
    #[default]
    Rolling,
    /// All rows from the start of the sample.
    Expanding,
}

/// Ridge screening inside each window, with `λ* = λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenSpec {
    /// Stage-one correction steps.
    pub k: usize,
    /// Candidate subset sizes; the MSFE-minimal one is kept.
    pub n_star: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub lags: usize,
    pub factors: usize,
    pub horizon: usize,
    /// Fraction of embedded rows before the first forecast origin.
    pub train_fraction: f64,
    pub window: WindowScheme,
    pub level: f64,
    pub lambda_grid: Vec<LambdaRule>,
    pub iterations: Iterations,
    pub screen: Option<ScreenSpec>,
}

/// Penalty grid `{0.05n, 0.1n, 0.2n, …, 1.5n}`.
pub fn default_lambda_grid() -> Vec<LambdaRule> {
    let mut grid = vec![LambdaRule::PerObservation(0.05)];
    grid.extend((1..=15).map(|i| LambdaRule::PerObservation(i as f64 / 10.0)));
    grid
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            lags: 4,
            factors: 0,
            horizon: 1,
            train_fraction: 0.8,
            window: WindowScheme::Rolling,
            level: 0.95,
            lambda_grid: default_lambda_grid(),
            iterations: Iterations::Fixed(10),
            screen: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastPoint {
    /// Position of the forecast target in the original series.
    pub target_index: usize,
    pub actual: f64,
    pub forecast: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateScore {
    pub lambda: LambdaRule,
    pub n_star: Option<usize>,
    pub msfe: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastReport {
    pub lambda: LambdaRule,
    pub n_star: Option<usize>,
    pub msfe: f64,
    pub coverage: f64,
    /// Training rows per window (the first window for the expanding scheme).
    pub window_rows: usize,
    pub test_points: usize,
    pub points: Vec<ForecastPoint>,
    pub scores: Vec<CandidateScore>,
    /// Origins where screening kept n* ≥ window rows and no interval could be formed.
    pub warnings: Vec<String>,
}

impl ForecastConfig {
    fn validate(&self, len: usize) -> Result<()> {
        LagSpec::new(self.lags, self.horizon)?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidLevel(self.level));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidParameter("empty lambda grid".into()));
        }
        self.iterations.validate()?;
        if let Some(s) = &self.screen {
            let p = self.lags + self.factors;
            if s.n_star.is_empty() || s.n_star.iter().any(|&m| m == 0 || m > p) {
                return Err(Error::InvalidParameter(format!(
                    "n_star candidates must lie in 1..={p}"
                )));
            }
        }
        if self.lags + self.horizon >= len {
            return Err(Error::SeriesTooShort {
                len,
                order: self.lags,
                horizon: self.horizon,
            });
        }
        Ok(())
    }
}

/// One fitted origin: forecasts and intervals for every candidate.
struct Origin {
    target_index: usize,
    actual: f64,
    per_candidate: Vec<Option<(f64, f64, f64)>>,
    warning: Option<String>,
}

struct Candidate {
    lambda: LambdaRule,
    n_star: Option<usize>,
}

/// Regressor block for embedded rows `rows` plus the test row: lags, then factors
/// estimated from the panel rows of the training window only.
fn regressors(
    lags: &DMatrix<f64>,
    panel: Option<&DMatrix<f64>>,
    factors: usize,
    q: usize,
    rows: std::ops::Range<usize>,
    test_row: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let w = rows.len();
    let train_lags = lags.rows(rows.start, w).into_owned();
    let test_lags = lags.row(test_row).transpose();
    if factors == 0 {
        return Ok((train_lags, test_lags));
    }
    let panel = panel.ok_or_else(|| {
        Error::InvalidParameter("factors requested without a covariate panel".into())
    })?;
    // Regressors of embedded row r are observed at time r + q − 1.
    let block = panel.rows(rows.start + q - 1, w).into_owned();
    let means = block.row_mean();
    let centered = DMatrix::from_fn(w, block.ncols(), |i, j| block[(i, j)] - means[j]);
    let pca = pca_factors(&centered, factors)?;
    let test_panel = panel.row(test_row + q - 1) - &means;
    let test_scores = (test_panel * &pca.loadings).transpose();

    let p = lags.ncols() + factors;
    let mut x = DMatrix::zeros(w, p);
    x.columns_mut(0, lags.ncols()).copy_from(&train_lags);
    x.columns_mut(lags.ncols(), factors).copy_from(&pca.scores);
    let mut x0 = DVector::zeros(p);
    x0.rows_mut(0, lags.ncols()).copy_from(&test_lags);
    x0.rows_mut(lags.ncols(), factors).copy_from(&test_scores);
    Ok((x, x0))
}

fn fit_origin(
    cfg: &ForecastConfig,
    embedded: &Dataset,
    panel: Option<&DMatrix<f64>>,
    candidates: &[Candidate],
    rows: std::ops::Range<usize>,
    test_row: usize,
) -> Result<Origin> {
    let (x, x0) = regressors(
        embedded.x(),
        panel,
        cfg.factors,
        cfg.lags,
        rows.clone(),
        test_row,
    )?;
    let y = embedded.y().rows(rows.start, rows.len()).into_owned();
    let raw = Dataset::new(x, y, None)?;
    let data = raw.center()?;
    let x0c = data.center_row(&x0)?;
    let y_mean = data.means().map_or(0.0, |m| m.y);
    let cache = decompose(&data, DEFAULT_RANK_TOL)?;
    let n = data.n();

    let mut warning = None;
    let mut per_candidate = Vec::with_capacity(candidates.len());
    for c in candidates {
        let lambda = c.lambda.resolve(n);
        let cfg_fit = RidgeConfig {
            lambda,
            iterations: cfg.iterations,
        };
        let interval = match c.n_star {
            None => {
                let fit = debias(&cache, &cfg_fit)?;
                Some(prediction_interval(&fit, &cache, &x0c, cfg.level)?)
            }
            Some(m) => {
                let sel = screen(
                    &cache,
                    lambda,
                    Iterations::Fixed(cfg.screen.as_ref().map_or(0, |s| s.k)),
                    m,
                )?;
                if let Some(w) = &sel.warning {
                    warning.get_or_insert_with(|| w.clone());
                }
                if sel.supports_inference() {
                    let two = two_stage_fit(&sel, &cfg_fit)?;
                    Some(prediction_interval_restricted(&two, &x0c, cfg.level)?)
                } else {
                    None
                }
            }
        };
        per_candidate.push(interval.map(|iv| {
            let iv = iv.shifted(y_mean);
            (iv.point, iv.lower, iv.upper)
        }));
    }
    let actual = embedded.y()[test_row];
    Ok(Origin {
        target_index: test_row + cfg.lags + cfg.horizon - 1,
        actual,
        per_candidate,
        warning,
    })
}

/// Rolling-origin evaluation of `series` (optionally with a covariate panel whose
/// rows are aligned with the series).
pub fn rolling_forecast(
    series: &[f64],
    panel: Option<&DMatrix<f64>>,
    cfg: &ForecastConfig,
) -> Result<ForecastReport> {
    cfg.validate(series.len())?;
    if let Some(pn) = panel {
        if pn.nrows() != series.len() {
            return Err(Error::DimensionMismatch {
                what: "panel rows",
                expected: series.len(),
                found: pn.nrows(),
            });
        }
    }
    if cfg.factors > 0 && panel.is_none() {
        return Err(Error::InvalidParameter(
            "factors requested without a covariate panel".into(),
        ));
    }
    let embedded = lag_embed(series, LagSpec::new(cfg.lags, cfg.horizon)?)?;
    let rows = embedded.n();
    let first_test = (cfg.train_fraction * rows as f64).round() as usize;
    // A target h steps ahead is only observed h − 1 rows later.
    let gap = cfg.horizon - 1;
    let p = cfg.lags + cfg.factors;
    let window_rows = first_test.saturating_sub(gap);
    if first_test >= rows || window_rows < p.max(cfg.factors + 1) + 2 {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            order: cfg.lags,
            horizon: cfg.horizon,
        });
    }

    let mut candidates = Vec::new();
    for lambda in &cfg.lambda_grid {
        match &cfg.screen {
            None => candidates.push(Candidate {
                lambda: *lambda,
                n_star: None,
            }),
            Some(s) => {
                for &m in &s.n_star {
                    candidates.push(Candidate {
                        lambda: *lambda,
                        n_star: Some(m),
                    });
                }
            }
        }
    }

    let origins: Vec<Result<Origin>> = (first_test..rows)
        .into_par_iter()
        .map(|test_row| {
            let end = test_row - gap;
            let start = match cfg.window {
                WindowScheme::Rolling => end - window_rows,
                WindowScheme::Expanding => 0,
            };
            fit_origin(cfg, &embedded, panel, &candidates, start..end, test_row)
        })
        .collect();
    let origins = origins.into_iter().collect::<Result<Vec<_>>>()?;

    let scores: Vec<CandidateScore> = candidates
        .iter()
        .enumerate()
        .map(|(c, cand)| {
            let mut sse = 0.0;
            let mut hits = 0usize;
            let mut count = 0usize;
            for o in &origins {
                if let Some((f, lo, hi)) = o.per_candidate[c] {
                    sse += (o.actual - f).powi(2);
                    hits += usize::from(lo <= o.actual && o.actual <= hi);
                    count += 1;
                }
            }
            let (msfe, coverage) = if count == origins.len() {
                (sse / count as f64, hits as f64 / count as f64)
            } else {
                (f64::INFINITY, f64::NAN)
            };
            CandidateScore {
                lambda: cand.lambda,
                n_star: cand.n_star,
                msfe,
                coverage,
            }
        })
        .collect();

    // Smallest MSFE; ties go to the earlier candidate (smaller λ, then smaller n*).
    let best = scores
        .iter()
        .enumerate()
        .fold(None::<usize>, |acc, (i, s)| match acc {
            Some(b) if scores[b].msfe <= s.msfe => Some(b),
            _ if s.msfe.is_finite() => Some(i),
            _ => acc,
        })
        .ok_or_else(|| {
            Error::InvalidParameter("no candidate produced intervals at every origin".into())
        })?;

    let points = origins
        .iter()
        .map(|o| {
            let (forecast, lower, upper) =
                o.per_candidate[best].expect("best candidate covers every origin");
            ForecastPoint {
                target_index: o.target_index,
                actual: o.actual,
                forecast,
                lower,
                upper,
                covered: lower <= o.actual && o.actual <= upper,
            }
        })
        .collect();
    let mut warnings: Vec<String> = origins.iter().filter_map(|o| o.warning.clone()).collect();
    warnings.dedup();
    Ok(ForecastReport {
        lambda: scores[best].lambda,
        n_star: scores[best].n_star,
        msfe: scores[best].msfe,
        coverage: scores[best].coverage,
        window_rows,
        test_points: origins.len(),
        points,
        scores,
        warnings,
    })
}

/// Synthetic factor-augmented process:
/// `X_t = Λ f_t + e_t` and `y_{t+1} = Σ φⱼ y_{t+1−j} + γ Σᵢ f_{i,t} + ε_{t+1}`,
/// with independent AR(1) factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDgp {
    pub n: usize,
    pub panel_size: usize,
    pub factors: usize,
    pub factor_persistence: f64,
    pub ar: Vec<f64>,
    pub gamma: f64,
    pub noise_sd: f64,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for FactorDgp {
    fn default() -> Self {
        FactorDgp {
            n: 400,
            panel_size: 50,
            factors: 5,
            factor_persistence: 0.5,
            ar: vec![0.4, 0.2, -0.1, 0.05],
            gamma: 0.3,
            noise_sd: 1.0,
            burn_in: 200,
            seed: 1234,
        }
    }
}

impl FactorDgp {
    /// Returns the target series and the n×m covariate panel.
    pub fn simulate(&self) -> (Vec<f64>, DMatrix<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let (r, m, q) = (self.factors, self.panel_size, self.ar.len());
        let loadings = DMatrix::from_fn(m, r, |_, _| normal());
        let total = self.n + self.burn_in;
        let mut f = vec![0.0; r];
        let mut y = vec![0.0; total];
        let mut panel = DMatrix::zeros(total, m);
        for t in 0..total {
            let ar: f64 = (1..=q)
                .filter(|&j| j <= t)
                .map(|j| self.ar[j - 1] * y[t - j])
                .sum();
            y[t] = ar + self.gamma * f.iter().sum::<f64>() + self.noise_sd * normal();
            for fi in f.iter_mut() {
                *fi = self.factor_persistence * *fi + normal();
            }
            for i in 0..m {
                let common: f64 = (0..r).map(|k| loadings[(i, k)] * f[k]).sum();
                panel[(t, i)] = common + normal();
            }
        }
        (
            y[self.burn_in..].to_vec(),
            panel.rows(self.burn_in, self.n).into_owned(),
        )
    }
}

/// Gaussian AR(p) series after a 200-step burn-in.
pub fn simulate_ar(phi: &[f64], n: usize, noise_sd: f64, seed: u64) -> Vec<f64> {
    let burn = 200;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut y = vec![0.0; n + burn];
    for t in 0..n + burn {
        let ar: f64 = phi
            .iter()
            .enumerate()
            .filter(|(j, _)| *j < t)
            .map(|(j, c)| c * y[t - j - 1])
            .sum();
        y[t] = ar + noise_sd * rng.sample::<f64, _>(StandardNormal);
    }
    y.split_off(burn)
}
