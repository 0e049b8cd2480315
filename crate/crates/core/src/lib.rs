//! Iterative bias correction for ridge regression.
//!
//! The crate fits k-step de-biased ridge estimators through a single SVD of
//! the design ([`spectral`]), selects variables for p > n problems by ridge
//! screening ([`screening`]), builds normal-theory intervals and contrast
//! tests ([`inference`]), analyses the bias–variance trade-off across k
//! ([`tradeoff`]), and runs seeded Monte Carlo studies ([`montecarlo`]) and
//! rolling-window forecast evaluations ([`forecast`]).

pub mod dataset;
pub mod error;
pub mod forecast;
pub mod inference;
mod linalg;
pub mod montecarlo;
pub mod screening;
pub mod spectral;
pub mod stats;
pub mod tradeoff;

pub use dataset::{
    lag_embed, load_csv, load_series, load_table, pca_factors, ColumnRef, Dataset, LagSpec,
    PcaFactors, Series, Table,
};
pub use error::{Error, Result};
pub use forecast::{
    rolling_forecast, FactorDgp, ForecastConfig, ForecastReport, ScreenSpec, WindowScheme,
};
pub use inference::{
    confidence_interval, contrast_test, covariance_debiased, prediction_interval, CovarianceModel,
    IntervalEstimate, IntervalKind,
};
pub use montecarlo::{
    emit_histogram_data, generate_example1, generate_example2, run_study, Contrast, Design,
    EstimatorSpec, MetricSelection, NoiseModel, StudyConfig, StudyResult,
};
pub use screening::{
    screen, tune, two_stage_fit, ScreeningSelection, TwoStageFit, ValidationScheme,
};
pub use spectral::{
    bias_oracle, debias, decompose, least_squares_pinv, ridge_fit, DebiasedFit, Iterations,
    LambdaRule, RidgeConfig, SpectralCache,
};
pub use tradeoff::{mse_curve, regime_classify, MseDecomposition, Regime};
