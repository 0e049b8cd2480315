use std::path::Path;

use anyhow::Result;
use nalgebra::DVector;
use ridge_debias::{decompose, load_csv, load_table, Dataset, IntervalEstimate, SpectralCache};
use serde::Serialize;
use serde_json::{json, Value};

use crate::cli::{DataArgs, KSpec};
use crate::output::Run;
use crate::UsageError;

pub mod fit;
pub mod forecast;
pub mod infer;
pub mod screen;
pub mod simulate;
pub mod tradeoff;
pub mod tune;

/// Raw data, its centered copy and the spectral cache of the centered copy.
pub struct Loaded {
    pub raw: Dataset,
    pub centered: Dataset,
    pub cache: SpectralCache,
}

pub fn load(data: &DataArgs, run: &mut Run) -> Result<Loaded> {
    run.input("data", &data.input);
    let raw = load_csv(&data.input, !data.no_header, &data.column())?;
    let centered = raw.center()?;
    let cache = decompose(&centered, data.rank_tol)?;
    run.write_json("metadata.json", &centered.metadata())?;
    Ok(Loaded {
        raw,
        centered,
        cache,
    })
}

#[derive(Serialize)]
pub struct CoefRow {
    pub index: usize,
    pub name: String,
    pub estimate: f64,
}

pub fn coef_rows(d: &Dataset, beta: &DVector<f64>) -> Vec<CoefRow> {
    beta.iter()
        .enumerate()
        .map(|(j, &b)| CoefRow {
            index: j,
            name: column_name(d, j),
            estimate: b,
        })
        .collect()
}

pub fn column_name(d: &Dataset, j: usize) -> String {
    d.column_names()
        .and_then(|n| n.get(j).cloned())
        .unwrap_or_else(|| format!("x{}", j + 1))
}

/// Intercept on the original scale for coefficients fitted on centered data.
pub fn intercept(centered: &Dataset, beta: &DVector<f64>) -> f64 {
    let m = centered.means().expect("centered dataset keeps its means");
    m.y - m.x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>()
}

/// Covariate rows of an x0 file, each of length `p`.
pub fn read_rows(path: &Path, has_header: bool, p: usize) -> Result<Vec<DVector<f64>>> {
    let table = load_table(path, has_header)?;
    if table.values.ncols() != p {
        return Err(UsageError(format!(
            "{} has {} columns, expected {p} covariates",
            path.display(),
            table.values.ncols()
        ))
        .into());
    }
    Ok(table.values.row_iter().map(|r| r.transpose()).collect())
}

/// Single-column numeric file as a vector.
pub fn read_vector(path: &Path, has_header: bool) -> Result<Vec<f64>> {
    let table = load_table(path, has_header)?;
    if table.values.ncols() != 1 {
        return Err(UsageError(format!("{} must have exactly one column", path.display())).into());
    }
    Ok(table.values.iter().copied().collect())
}

#[derive(Serialize)]
pub struct IntervalRow {
    pub x0_id: usize,
    pub kind: &'static str,
    pub point: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl IntervalRow {
    pub fn new(x0_id: usize, iv: &IntervalEstimate) -> Self {
        IntervalRow {
            x0_id,
            kind: iv.kind.as_str(),
            point: iv.point,
            se: iv.se,
            lower: iv.lower,
            upper: iv.upper,
            level: iv.level,
        }
    }
}

pub fn k_json(k: KSpec) -> Value {
    match k {
        KSpec::Fixed(k) => json!(k),
        KSpec::Auto => json!("auto"),
    }
}
