use anyhow::Result;
use ridge_debias::{debias, Iterations, RidgeConfig};
use serde_json::json;

use super::{coef_rows, intercept, k_json, load};
use crate::cli::{DataArgs, DebiasArgs, FitArgs};
use crate::output::Run;

pub fn run_fit(args: &FitArgs, run: &mut Run) -> Result<()> {
    run.parameters(json!({
        "response": args.data.response,
        "lambda": args.lambda,
        "rank_tol": args.data.rank_tol,
    }));
    fit_and_write(&args.data, args.lambda, Iterations::Fixed(0), run)
}

pub fn run_debias(args: &DebiasArgs, run: &mut Run) -> Result<()> {
    run.parameters(json!({
        "response": args.data.response,
        "lambda": args.lambda,
        "k": k_json(args.iter.k),
        "eta": args.iter.eta,
        "max_iter": args.iter.max_iter,
        "rank_tol": args.data.rank_tol,
    }));
    fit_and_write(&args.data, args.lambda, args.iter.iterations(), run)
}

fn fit_and_write(
    data: &DataArgs,
    rule: ridge_debias::LambdaRule,
    iterations: Iterations,
    run: &mut Run,
) -> Result<()> {
    let loaded = load(data, run)?;
    let lambda = rule.resolve(loaded.centered.n());
    let fit = debias(&loaded.cache, &RidgeConfig { lambda, iterations })?;
    if !fit.converged {
        run.warn(format!(
            "auto mode stopped at max_iter = {} before the step criterion held",
            fit.k_used
        ));
    }
    let summary = fit.summary();
    run.write_table("coefficients", &coef_rows(&loaded.centered, &fit.beta))?;
    run.write_json("fit.json", &summary)?;
    run.result("n", loaded.raw.n())?;
    run.result("p", loaded.raw.p())?;
    run.result("lambda", fit.lambda)?;
    run.result("k_used", fit.k_used)?;
    run.result("converged", fit.converged)?;
    run.result("sigma_hat", fit.sigma_hat)?;
    run.result("rank", fit.rank)?;
    run.result("intercept", intercept(&loaded.centered, &fit.beta))?;
    Ok(())
}
