use anyhow::Result;
use nalgebra::DVector;
use ridge_debias::{
    confidence_interval, contrast_test, debias, prediction_interval, CovarianceModel, RidgeConfig,
};
use serde::Serialize;
use serde_json::json;

use super::{k_json, load, read_rows, read_vector, IntervalRow};
use crate::cli::InferArgs;
use crate::output::Run;
use crate::UsageError;

#[derive(Serialize)]
struct TestRow {
    contrast: usize,
    coefficients: String,
    null: f64,
    estimate: f64,
    se: f64,
    z: f64,
    p_value: f64,
}

fn parse_contrast(text: &str, p: usize) -> Result<DVector<f64>> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| UsageError(format!("bad contrast coefficient {s:?}")))
        })
        .collect::<Result<Vec<f64>, UsageError>>()?;
    if values.len() != p {
        return Err(UsageError(format!(
            "contrast has {} coefficients, expected {p}",
            values.len()
        ))
        .into());
    }
    Ok(DVector::from_vec(values))
}

pub fn run(args: &InferArgs, run: &mut Run) -> Result<()> {
    run.parameters(json!({
        "response": args.data.response,
        "lambda": args.lambda,
        "k": k_json(args.iter.k),
        "eta": args.iter.eta,
        "max_iter": args.iter.max_iter,
        "contrasts": args.contrast,
        "null": args.null,
        "level": args.level,
        "sigma": args.sigma,
        "rank_tol": args.data.rank_tol,
    }));
    let loaded = load(&args.data, run)?;
    let (n, p) = (loaded.centered.n(), loaded.centered.p());
    let fit = debias(
        &loaded.cache,
        &RidgeConfig {
            lambda: args.lambda.resolve(n),
            iterations: args.iter.iterations(),
        },
    )?;
    if !fit.converged {
        run.warn(format!(
            "auto mode stopped at max_iter = {} before the step criterion held",
            fit.k_used
        ));
    }
    let cov = match (&args.sigma, &args.variances) {
        (Some(sigma), _) => CovarianceModel::Homoskedastic { sigma: *sigma },
        (None, Some(path)) => {
            run.input("variances", path);
            CovarianceModel::Diagonal {
                variances: read_vector(path, !args.data.no_header)?,
            }
        }
        (None, None) => CovarianceModel::from_fit(&fit),
    };
    cov.validate(n)?;

    let contrasts = args
        .contrast
        .iter()
        .map(|c| parse_contrast(c, p))
        .collect::<Result<Vec<_>>>()?;
    let mut tests = Vec::with_capacity(contrasts.len());
    for (i, (theta, text)) in contrasts.iter().zip(&args.contrast).enumerate() {
        let t = contrast_test(&fit, &loaded.cache, theta, args.null, &cov)?;
        tests.push(TestRow {
            contrast: i,
            coefficients: text.clone(),
            null: args.null,
            estimate: t.estimate,
            se: t.se,
            z: t.z,
            p_value: t.p_value,
        });
    }
    if !tests.is_empty() {
        run.write_table("contrasts", &tests)?;
    }

    if let Some(path) = &args.x0 {
        run.input("x0", path);
        let rows = read_rows(path, !args.data.no_header, p)?;
        let y_mean = loaded.centered.means().map_or(0.0, |m| m.y);
        let mut out = Vec::with_capacity(2 * rows.len());
        for (i, x0) in rows.iter().enumerate() {
            let xc = loaded.centered.center_row(x0)?;
            let ci =
                confidence_interval(&fit, &loaded.cache, &xc, args.level, &cov)?.shifted(y_mean);
            let pi = prediction_interval(&fit, &loaded.cache, &xc, args.level)?.shifted(y_mean);
            out.push(IntervalRow::new(i, &ci));
            out.push(IntervalRow::new(i, &pi));
        }
        run.write_table("intervals", &out)?;
    }

    run.write_json("fit.json", &fit.summary())?;
    run.result("lambda", fit.lambda)?;
    run.result("k_used", fit.k_used)?;
    run.result("sigma_hat", fit.sigma_hat)?;
    run.result(
        "covariance",
        match cov {
            CovarianceModel::Homoskedastic { .. } => "homoskedastic",
            CovarianceModel::Diagonal { .. } => "diagonal",
        },
    )?;
    run.result("contrast_tests", tests.len())?;
    Ok(())
}
