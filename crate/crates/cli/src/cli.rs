use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ridge_debias::spectral::{DEFAULT_ETA, DEFAULT_MAX_ITER, DEFAULT_RANK_TOL};
use ridge_debias::{ColumnRef, Iterations, LambdaRule, ValidationScheme};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "ridge-debias",
    version,
    about = "Iteratively de-biased ridge regression"
)]
pub struct Cli {
    /// Worker threads for studies, tuning and forecasting (default: all cores).
    #[arg(long, global = true, env = "RIDGE_DEBIAS_THREADS")]
    pub threads: Option<usize>,

    /// Directory for result files and the manifest.
    #[arg(long, short, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plain ridge fit (no bias correction).
    Fit(FitArgs),
    /// k-step de-biased ridge fit.
    Debias(DebiasArgs),
    /// Ridge screening followed by a restricted de-biased fit.
    Screen(ScreenArgs),
    /// Confidence and prediction intervals and contrast tests.
    Infer(InferArgs),
    /// Analytic bias-variance curve over the number of corrections.
    Tradeoff(TradeoffArgs),
    /// Seeded Monte Carlo study from a JSON config.
    Simulate(SimulateArgs),
    /// Choose (lambda*, n*) by validation error.
    Tune(TuneArgs),
    /// Rolling-origin forecasts with prediction intervals.
    Forecast(ForecastArgs),
}

/// `N` or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KSpec {
    Fixed(usize),
    Auto,
}

impl FromStr for KSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KSpec::Auto);
        }
        s.parse()
            .map(KSpec::Fixed)
            .map_err(|_| format!("expected a non-negative integer or 'auto', got {s:?}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Response column: a header name or a 0-based index.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// The input (and any x0 file) has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Relative singular-value cut-off.
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
}

impl DataArgs {
    pub fn column(&self) -> ColumnRef {
        self.response
            .parse()
            .expect("ColumnRef parsing is infallible")
    }
}

#[derive(Debug, Clone, Args)]
pub struct IterArgs {
    /// Correction steps: a count or `auto`.
    #[arg(long, default_value = "auto")]
    pub k: KSpec,
    /// Step-size tolerance for `--k auto`.
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// Cap for `--k auto`.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

impl IterArgs {
    pub fn iterations(&self) -> Iterations {
        to_iterations(self.k, self.eta, self.max_iter)
    }
}

pub fn to_iterations(k: KSpec, eta: f64, max_iter: usize) -> Iterations {
    match k {
        KSpec::Fixed(k) => Iterations::Fixed(k),
        KSpec::Auto => Iterations::Auto { eta, max_iter },
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Penalty, absolute (`12.5`) or per observation (`0.3n`).
    #[arg(long, visible_alias = "lambda-rule")]
    pub lambda: LambdaRule,
}

#[derive(Debug, Args)]
pub struct DebiasArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, visible_alias = "lambda-rule")]
    pub lambda: LambdaRule,
    #[command(flatten)]
    pub iter: IterArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ValidationArgs {
    /// K-fold validation with contiguous folds.
    #[arg(long, conflicts_with = "holdout")]
    pub folds: Option<usize>,
    /// Hold out the last fraction of rows instead.
    #[arg(long)]
    pub holdout: Option<f64>,
}

impl ValidationArgs {
    pub fn scheme(&self) -> ValidationScheme {
        match (self.folds, self.holdout) {
            (_, Some(f)) => ValidationScheme::Holdout(f),
            (Some(k), None) => ValidationScheme::KFold(k),
            (None, None) => ValidationScheme::KFold(5),
        }
    }
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Stage-one penalty.
    #[arg(long, required_unless_present = "tune")]
    pub lambda_star: Option<LambdaRule>,
    /// Stage-one correction steps.
    #[arg(long, default_value = "auto")]
    pub k: KSpec,
    /// Number of columns kept.
    #[arg(long, required_unless_present = "tune")]
    pub n_star: Option<usize>,
    /// Second-stage penalty (default: lambda*).
    #[arg(long)]
    pub lambda: Option<LambdaRule>,
    /// Second-stage correction steps.
    #[arg(long, default_value = "auto")]
    pub l: KSpec,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Choose (lambda*, n*) from the grids first.
    #[arg(long)]
    pub tune: bool,
    #[arg(long, value_delimiter = ',', requires = "tune")]
    pub lambda_grid: Vec<LambdaRule>,
    #[arg(long, value_delimiter = ',', requires = "tune")]
    pub n_star_grid: Vec<usize>,
    #[command(flatten)]
    pub validation: ValidationArgs,
    /// CSV of covariate rows (original scale) for prediction intervals.
    #[arg(long)]
    pub x0: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, visible_alias = "lambda-rule")]
    pub lambda: LambdaRule,
    #[command(flatten)]
    pub iter: IterArgs,
    /// CSV of covariate rows (original scale) for intervals.
    #[arg(long)]
    pub x0: Option<PathBuf>,
    /// Contrast coefficients, comma separated; repeat for several.
    #[arg(long, allow_hyphen_values = true)]
    pub contrast: Vec<String>,
    /// Null value for the contrast tests.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub null: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Known noise standard deviation (default: the fit's sigma-hat).
    #[arg(long, conflicts_with = "variances")]
    pub sigma: Option<f64>,
    /// One-column CSV of known per-observation error variances.
    #[arg(long)]
    pub variances: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignFamily {
    Example1,
    Example2,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    /// Design CSV; the response column is ignored.
    #[arg(long, short, conflicts_with = "family")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long)]
    pub no_header: bool,
    /// One-column CSV with the true coefficients.
    #[arg(long, requires = "input")]
    pub beta: Option<PathBuf>,
    /// Generate the design and coefficients instead of reading them.
    #[arg(long, value_enum)]
    pub family: Option<DesignFamily>,
    #[arg(long, requires = "family")]
    pub p: Option<usize>,
    #[arg(long, requires = "family")]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1234)]
    pub seed: u64,
    #[arg(long, visible_alias = "lambda-rule")]
    pub lambda: LambdaRule,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = ridge_debias::tradeoff::DEFAULT_K_MAX)]
    pub k_max: usize,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study config (one study, or `{"studies": [...]}`).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override the master seed of every study.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the replication count of every study.
    #[arg(long)]
    pub replications: Option<usize>,
    /// `<estimator label>/<contrast label>` to emit as histogram data; repeatable.
    #[arg(long)]
    pub histogram: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda_grid: Vec<LambdaRule>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_star_grid: Vec<usize>,
    /// Stage-one correction steps.
    #[arg(long, default_value = "auto")]
    pub k: KSpec,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[command(flatten)]
    pub validation: ValidationArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Window {
    Rolling,
    Expanding,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// CSV with the target column and, optionally, covariate panel columns.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, default_value = "y")]
    pub target: String,
    #[arg(long)]
    pub no_header: bool,
    /// Autoregressive lags q.
    #[arg(long, default_value_t = 4)]
    pub lags: usize,
    /// Principal-component factors r taken from the panel columns.
    #[arg(long, default_value_t = 0)]
    pub factors: usize,
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, value_enum, default_value_t = Window::Rolling)]
    pub window: Window,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Penalty grid (default 0.05n, 0.1n, 0.2n, ..., 1.5n).
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Vec<LambdaRule>,
    #[arg(long, default_value = "10")]
    pub k: KSpec,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Screen inside each window with lambda* = lambda.
    #[arg(long)]
    pub screen: bool,
    /// Stage-one steps when screening.
    #[arg(long, default_value_t = 10, requires = "screen")]
    pub screen_k: usize,
    #[arg(long, value_delimiter = ',', requires = "screen")]
    pub n_star_grid: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parser_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn k_spec_parsing() {
        assert_eq!("auto".parse::<KSpec>().unwrap(), KSpec::Auto);
        assert_eq!("AUTO".parse::<KSpec>().unwrap(), KSpec::Auto);
        assert_eq!("120".parse::<KSpec>().unwrap(), KSpec::Fixed(120));
        assert!("-3".parse::<KSpec>().is_err());
    }

    #[test]
    fn validation_defaults_to_five_folds() {
        let v = ValidationArgs {
            folds: None,
            holdout: None,
        };
        assert_eq!(v.scheme(), ValidationScheme::KFold(5));
        let v = ValidationArgs {
            folds: None,
            holdout: Some(0.2),
        };
        assert_eq!(v.scheme(), ValidationScheme::Holdout(0.2));
    }

    #[test]
    fn lambda_rule_alias_is_accepted() {
        let cli = Cli::try_parse_from([
            "ridge-debias",
            "debias",
            "-i",
            "d.csv",
            "--lambda-rule",
            "0.3n",
            "--k",
            "100",
        ])
        .unwrap();
        match cli.command {
            Command::Debias(a) => {
                assert_eq!(a.lambda, LambdaRule::PerObservation(0.3));
                assert_eq!(a.iter.k, KSpec::Fixed(100));
            }
            other => panic!("parsed as {other:?}"),
        }
    }
}
