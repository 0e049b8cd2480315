use anyhow::Result;
use nalgebra::DVector;
use ridge_debias::montecarlo::{generate_example1, generate_example2};
use ridge_debias::tradeoff::{mse_curve, write_curve_csv};
use ridge_debias::{decompose, load_csv, ColumnRef};
use serde::Serialize;
use serde_json::json;

use super::read_vector;
use crate::cli::{DesignFamily, Format, TradeoffArgs};
use crate::output::Run;
use crate::UsageError;

#[derive(Serialize)]
struct CurveRow {
    k: usize,
    bias_sq: f64,
    variance: f64,
    total: f64,
}

pub fn run(args: &TradeoffArgs, run: &mut Run) -> Result<()> {
    run.parameters(json!({
        "family": args.family,
        "p": args.p,
        "n": args.n,
        "seed": args.family.map(|_| args.seed),
        "response": args.input.as_ref().map(|_| &args.response),
        "lambda": args.lambda,
        "sigma": args.sigma,
        "k_max": args.k_max,
        "rank_tol": args.rank_tol,
    }));

    let (cache, beta) = match (&args.input, args.family) {
        (Some(input), None) => {
            let beta_path = args
                .beta
                .as_ref()
                .ok_or_else(|| UsageError("--input requires --beta".into()))?;
            run.input("data", input);
            run.input("beta", beta_path);
            let column: ColumnRef = args
                .response
                .parse()
                .expect("ColumnRef parsing is infallible");
            let d = load_csv(input, !args.no_header, &column)?.center()?;
            let beta = DVector::from_vec(read_vector(beta_path, !args.no_header)?);
            (decompose(&d, args.rank_tol)?, beta)
        }
        (None, Some(family)) => {
            let (p, n) = match (args.p, args.n) {
                (Some(p), Some(n)) => (p, n),
                _ => return Err(UsageError("--family requires --p and --n".into()).into()),
            };
            let design = match family {
                DesignFamily::Example1 => generate_example1(p, n, args.seed)?,
                DesignFamily::Example2 => generate_example2(p, n, args.seed)?,
            };
            (design.cache().clone(), design.beta.clone())
        }
        _ => return Err(UsageError("give either --input with --beta, or --family".into()).into()),
    };

    let lambda = args.lambda.resolve(cache.n());
    let curve = mse_curve(&cache, &beta, lambda, args.sigma, args.k_max)?;
    if curve.ks.len() > args.k_max + 1 {
        run.warn(format!(
            "grid extended to k = {} to resolve the curve's shape",
            curve.ks.len() - 1
        ));
    }
    match run.format() {
        Format::Csv => run.write_with("curve.csv", |buf| Ok(write_curve_csv(buf, &curve)?))?,
        Format::Json => {
            let rows: Vec<CurveRow> = (0..curve.ks.len())
                .map(|i| CurveRow {
                    k: curve.ks[i],
                    bias_sq: curve.bias_sq[i],
                    variance: curve.variance[i],
                    total: curve.total[i],
                })
                .collect();
            run.write_table("curve", &rows)?;
        }
    }
    run.result("lambda", lambda)?;
    run.result("argmin_k", curve.argmin_k)?;
    run.result("min_total", curve.total[curve.argmin_k])?;
    run.result("regime", curve.regime)?;
    run.result("closed_form_interval", curve.closed_form_interval)?;
    run.result("k1", curve.diagnostics.k1)?;
    run.result("k2", curve.diagnostics.k2)?;
    Ok(())
}
