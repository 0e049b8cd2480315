use anyhow::Result;
use ridge_debias::forecast::default_lambda_grid;
use ridge_debias::{
    load_series, rolling_forecast, ColumnRef, ForecastConfig, ScreenSpec, WindowScheme,
};
use serde::Serialize;
use serde_json::json;

use super::k_json;
use crate::cli::{to_iterations, ForecastArgs, Window};
use crate::output::Run;
use crate::UsageError;

#[derive(Serialize)]
struct ScoreRow {
    lambda: String,
    n_star: Option<usize>,
    msfe: f64,
    coverage: f64,
}

pub fn run(args: &ForecastArgs, run: &mut Run) -> Result<()> {
    let lambda_grid = if args.lambda_grid.is_empty() {
        default_lambda_grid()
    } else {
        args.lambda_grid.clone()
    };
    let window = match args.window {
        Window::Rolling => WindowScheme::Rolling,
        Window::Expanding => WindowScheme::Expanding,
    };
    let screen = args.screen.then(|| ScreenSpec {
        k: args.screen_k,
        n_star: args.n_star_grid.clone(),
    });
    run.parameters(json!({
        "target": args.target,
        "lags": args.lags,
        "factors": args.factors,
        "horizon": args.horizon,
        "train_fraction": args.train_fraction,
        "window": window,
        "level": args.level,
        "lambda_grid": lambda_grid,
        "k": k_json(args.k),
        "eta": args.eta,
        "max_iter": args.max_iter,
        "screen": screen,
    }));
    if args.screen && args.n_star_grid.is_empty() {
        return Err(UsageError("--screen needs --n-star-grid".into()).into());
    }

    run.input("data", &args.input);
    let target: ColumnRef = args
        .target
        .parse()
        .expect("ColumnRef parsing is infallible");
    let series = load_series(&args.input, !args.no_header, &target)?;
    let panel = if args.factors > 0 {
        match &series.panel {
            Some(p) => Some(p),
            None => {
                return Err(UsageError(
                    "--factors needs covariate columns besides the target".into(),
                )
                .into())
            }
        }
    } else {
        if series.panel.is_some() {
            run.warn("covariate columns ignored because --factors is 0");
        }
        None
    };

    let cfg = ForecastConfig {
        lags: args.lags,
        factors: args.factors,
        horizon: args.horizon,
        train_fraction: args.train_fraction,
        window,
        level: args.level,
        lambda_grid,
        iterations: to_iterations(args.k, args.eta, args.max_iter),
        screen,
    };
    let report = rolling_forecast(&series.target, panel, &cfg)?;
    for w in &report.warnings {
        run.warn(w.clone());
    }
    run.write_table("forecasts", &report.points)?;
    let scores: Vec<ScoreRow> = report
        .scores
        .iter()
        .map(|s| ScoreRow {
            lambda: s.lambda.to_string(),
            n_star: s.n_star,
            msfe: s.msfe,
            coverage: s.coverage,
        })
        .collect();
    run.write_table("scores", &scores)?;

    run.result("lambda", report.lambda)?;
    run.result("n_star", report.n_star)?;
    run.result("msfe", report.msfe)?;
    run.result("coverage", report.coverage)?;
    run.result("window_rows", report.window_rows)?;
    run.result("test_points", report.test_points)?;
    Ok(())
}
