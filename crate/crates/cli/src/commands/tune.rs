use anyhow::Result;
use ridge_debias::screening::GridScore;
use ridge_debias::{load_csv, tune};
use serde::Serialize;
use serde_json::json;

use super::k_json;
use crate::cli::{to_iterations, TuneArgs};
use crate::output::Run;

#[derive(Serialize)]
pub struct ScoreRow {
    pub lambda: String,
    pub n_star: usize,
    pub score: Option<f64>,
    pub note: String,
}

impl From<&GridScore> for ScoreRow {
    fn from(s: &GridScore) -> Self {
        ScoreRow {
            lambda: s.lambda.to_string(),
            n_star: s.n_star,
            score: s.score,
            note: s.note.clone().unwrap_or_default(),
        }
    }
}

pub fn run(args: &TuneArgs, run: &mut Run) -> Result<()> {
    run.parameters(json!({
        "response": args.data.response,
        "lambda_grid": args.lambda_grid,
        "n_star_grid": args.n_star_grid,
        "k": k_json(args.k),
        "eta": args.eta,
        "max_iter": args.max_iter,
        "validation": args.validation.scheme(),
        "rank_tol": args.data.rank_tol,
    }));
    run.input("data", &args.data.input);
    let d = load_csv(&args.data.input, !args.data.no_header, &args.data.column())?;
    let k = to_iterations(args.k, args.eta, args.max_iter);
    let res = tune(
        &d,
        &args.lambda_grid,
        &args.n_star_grid,
        args.validation.scheme(),
        k,
        args.data.rank_tol,
    )?;
    if res.near_tie {
        run.warn("the best two tuning pairs score within 1e-6 of each other");
    }
    run.write_table(
        "tuning",
        &res.scores.iter().map(ScoreRow::from).collect::<Vec<_>>(),
    )?;
    run.result("lambda_star", res.lambda_star)?;
    run.result("lambda_star_value", res.lambda_star_value)?;
    run.result("n_star", res.n_star)?;
    run.result("score", res.best_score)?;
    run.result("near_tie", res.near_tie)?;
    Ok(())
}
