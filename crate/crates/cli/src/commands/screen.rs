use anyhow::Result;
use ridge_debias::inference::{confidence_interval_restricted, prediction_interval_restricted};
use ridge_debias::{screen, tune, two_stage_fit, CovarianceModel, RidgeConfig};
use serde_json::json;

use super::{coef_rows, intercept, k_json, load, read_rows, IntervalRow};
use crate::cli::{to_iterations, ScreenArgs};
use crate::output::Run;
use crate::UsageError;

pub fn run(args: &ScreenArgs, run: &mut Run) -> Result<()> {
    run.parameters(json!({
        "response": args.data.response,
        "lambda_star": args.lambda_star,
        "k": k_json(args.k),
        "n_star": args.n_star,
        "lambda": args.lambda,
        "l": k_json(args.l),
        "eta": args.eta,
        "max_iter": args.max_iter,
        "tune": args.tune,
        "lambda_grid": args.lambda_grid,
        "n_star_grid": args.n_star_grid,
        "validation": args.validation.scheme(),
        "level": args.level,
        "rank_tol": args.data.rank_tol,
    }));
    let loaded = load(&args.data, run)?;
    let n = loaded.centered.n();
    let k = to_iterations(args.k, args.eta, args.max_iter);

    let (lambda_star, n_star) = if args.tune {
        if args.lambda_grid.is_empty() || args.n_star_grid.is_empty() {
            return Err(UsageError("--tune needs --lambda-grid and --n-star-grid".into()).into());
        }
        let tuned = tune(
            &loaded.raw,
            &args.lambda_grid,
            &args.n_star_grid,
            args.validation.scheme(),
            k,
            args.data.rank_tol,
        )?;
        if tuned.near_tie {
            run.warn("the best two tuning pairs score within 1e-6 of each other");
        }
        run.write_table(
            "tuning",
            &tuned
                .scores
                .iter()
                .map(super::tune::ScoreRow::from)
                .collect::<Vec<_>>(),
        )?;
        run.result("tuned", json!({ "lambda_star": tuned.lambda_star, "n_star": tuned.n_star, "score": tuned.best_score }))?;
        (tuned.lambda_star, tuned.n_star)
    } else {
        (
            args.lambda_star.expect("required by clap"),
            args.n_star.expect("required by clap"),
        )
    };

    let sel = screen(&loaded.cache, lambda_star.resolve(n), k, n_star)?;
    if let Some(w) = &sel.warning {
        run.warn(w.clone());
    }
    let lambda = args.lambda.unwrap_or(lambda_star).resolve(n);
    let l = to_iterations(args.l, args.eta, args.max_iter);
    let fit = two_stage_fit(
        &sel,
        &RidgeConfig {
            lambda,
            iterations: l,
        },
    )?;
    if !fit.fit.converged {
        run.warn(format!(
            "second stage stopped at max_iter = {} before the step criterion held",
            fit.l_used()
        ));
    }

    run.write_json(
        "selection.json",
        &sel.summary(loaded.centered.column_names()),
    )?;
    run.write_json("fit.json", &fit.summary())?;
    run.write_table("coefficients", &coef_rows(&loaded.centered, &fit.beta_full))?;

    if let Some(path) = &args.x0 {
        run.input("x0", path);
        if !sel.supports_inference() {
            run.warn("intervals skipped: the screened design does not support inference");
        } else {
            let rows = read_rows(path, !args.data.no_header, loaded.centered.p())?;
            let y_mean = loaded.centered.means().map_or(0.0, |m| m.y);
            let cov = CovarianceModel::from_fit(&fit.fit);
            let mut out = Vec::with_capacity(2 * rows.len());
            for (i, x0) in rows.iter().enumerate() {
                let xc = loaded.centered.center_row(x0)?;
                let ci =
                    confidence_interval_restricted(&fit, &xc, args.level, &cov)?.shifted(y_mean);
                let pi = prediction_interval_restricted(&fit, &xc, args.level)?.shifted(y_mean);
                out.push(IntervalRow::new(i, &ci));
                out.push(IntervalRow::new(i, &pi));
            }
            run.write_table("intervals", &out)?;
        }
    }

    run.result("inference_enabled", sel.supports_inference())?;
    run.result("lambda_star", sel.lambda_star)?;
    run.result("k_stage1", sel.k_stage1)?;
    run.result("n_star", sel.n_star)?;
    run.result("selected", &sel.indices)?;
    run.result("lambda", fit.lambda())?;
    run.result("l_used", fit.l_used())?;
    run.result("sigma_hat", fit.sigma_hat())?;
    run.result("intercept", intercept(&loaded.centered, &fit.beta_full))?;
    Ok(())
}
