//! Regression data: loading, centering, autoregressive lag embedding and
//! principal-component factors.
//!
//! Models in this crate carry no intercept, so a [`Dataset`] is centered
//! before fitting. The column and response means are kept so that fitted
//! values can be mapped back to the original scale.

use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, numerical_rank, thin_svd};

/// Identifies the response column of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    /// Zero-based column position.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

impl std::str::FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        })
    }
}

/// Means removed by [`Dataset::center`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringMeans {
    pub x: Vec<f64>,
    pub y: f64,
}

/// JSON-serializable description of a dataset, written next to fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub n: usize,
    pub p: usize,
    pub centered: bool,
    pub column_names: Option<Vec<String>>,
    pub response_name: Option<String>,
    pub centering: Option<CenteringMeans>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    centered: bool,
    column_names: Option<Vec<String>>,
    response_name: Option<String>,
    means: Option<CenteringMeans>,
}

impl Dataset {
    /// Builds an uncentered dataset, checking shapes and finiteness.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        column_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 || p < 1 {
            return Err(Error::Dimensions(format!(
                "need n >= 2 and p >= 1, got {n}x{p}"
            )));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "response",
                expected: n,
                found: y.len(),
            });
        }
        if !all_finite(x.iter()) {
            return Err(Error::NonFinite("design matrix"));
        }
        if !all_finite(y.iter()) {
            return Err(Error::NonFinite("response"));
        }
        if let Some(names) = &column_names {
            if names.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "column names",
                    expected: p,
                    found: names.len(),
                });
            }
        }
        Ok(Self {
            x,
            y,
            centered: false,
            column_names,
            response_name: None,
            means: None,
        })
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response_name = Some(name.into());
        self
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn means(&self) -> Option<&CenteringMeans> {
        self.means.as_ref()
    }

    pub fn metadata(&self) -> DatasetMetadata {
        DatasetMetadata {
            n: self.n(),
            p: self.p(),
            centered: self.centered,
            column_names: self.column_names.clone(),
            response_name: self.response_name.clone(),
            centering: self.means.clone(),
        }
    }

    /// Subtracts column means from `x` and the mean from `y`.
    pub fn center(&self) -> Result<Dataset> {
        if self.centered {
            return Err(Error::AlreadyCentered);
        }
        let n = self.n() as f64;
        let x_means: Vec<f64> = self.x.column_iter().map(|c| c.sum() / n).collect();
        let y_mean = self.y.sum() / n;

        let mut x = self.x.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(-x_means[j]);
        }
        let y = self.y.add_scalar(-y_mean);

        Ok(Dataset {
            x,
            y,
            centered: true,
            column_names: self.column_names.clone(),
            response_name: self.response_name.clone(),
            means: Some(CenteringMeans {
                x: x_means,
                y: y_mean,
            }),
        })
    }

    /// Maps a covariate row on the original scale onto the centered scale.
    pub fn center_row(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        if x0.len() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "covariate row",
                expected: self.p(),
                found: x0.len(),
            });
        }
        Ok(match &self.means {
            Some(m) => DVector::from_iterator(x0.len(), x0.iter().zip(&m.x).map(|(v, mu)| v - mu)),
            None => x0.clone(),
        })
    }

    /// Prediction on the original response scale for an original-scale row `x0`.
    pub fn predict_original(&self, x0: &DVector<f64>, beta: &DVector<f64>) -> Result<f64> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "coefficients",
                expected: self.p(),
                found: beta.len(),
            });
        }
        let centered = self.center_row(x0)?;
        Ok(self.uncenter_fitted(centered.dot(beta)))
    }

    /// Adds the response mean back to a fitted value computed on the centered scale.
    pub fn uncenter_fitted(&self, fitted: f64) -> f64 {
        fitted + self.means.as_ref().map_or(0.0, |m| m.y)
    }

    /// Rows `rows` of this dataset, uncentered and without stored means.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let mut d = Dataset::new(x, y, self.column_names.clone())?;
        d.response_name = self.response_name.clone();
        Ok(d)
    }

    /// True when every column of `x` and `y` has mean zero up to a scale-aware tolerance.
    pub fn means_are_zero(&self) -> bool {
        columns_are_centered(&self.x) && {
            let scale = self.y.amax();
            (self.y.sum() / self.n() as f64).abs() <= 1e-10 * (1.0 + scale)
        }
    }
}

pub(crate) fn columns_are_centered(x: &DMatrix<f64>) -> bool {
    let n = x.nrows() as f64;
    x.column_iter()
        .all(|c| (c.sum() / n).abs() <= 1e-10 * (1.0 + c.amax()))
}

type SplitTable = (
    DVector<f64>,
    DMatrix<f64>,
    Option<Vec<String>>,
    Option<String>,
);

/// A numeric CSV table: optional header plus rows of equal width.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub values: DMatrix<f64>,
}

impl Table {
    fn column_index(&self, column: &ColumnRef) -> Result<usize> {
        match column {
            ColumnRef::Index(i) if *i < self.values.ncols() => Ok(*i),
            ColumnRef::Index(i) => Err(Error::MissingResponse(i.to_string())),
            ColumnRef::Name(name) => self
                .header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::MissingResponse(name.clone())),
        }
    }

    /// Splits off `column`, returning (it, the remaining columns, their names, its name).
    fn split(self, column: &ColumnRef) -> Result<SplitTable> {
        let idx = self.column_index(column)?;
        let target = self.values.column(idx).into_owned();
        let rest = self.values.remove_column(idx);
        let (names, name) = match self.header {
            Some(mut h) => {
                let r = h.remove(idx);
                (Some(h), Some(r))
            }
            None => (None, None),
        };
        Ok((target, rest, names, name))
    }
}

/// Reads a comma-delimited file of decimal numbers.
///
/// Row and column numbers in parse errors are 1-based file positions.
pub fn load_table(path: impl AsRef<Path>, has_header: bool) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header: Option<Vec<String>> = if has_header {
        Some(reader.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    let first_line = if has_header { 2 } else { 1 };
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record
            .position()
            .map_or(first_line + i, |p| p.line() as usize);
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                row: line,
                expected,
                found: record.len(),
            });
        }
        let parsed = record
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row: line,
                    column: j + 1,
                    value: cell.to_string(),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(parsed);
    }
    let width = width.unwrap_or(0);
    let values = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
    Ok(Table { header, values })
}

/// Loads a regression dataset; every column except `response` becomes a covariate.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, response: &ColumnRef) -> Result<Dataset> {
    let (y, x, names, response_name) = load_table(path, has_header)?.split(response)?;
    let d = Dataset::new(x, y, names)?;
    Ok(match response_name {
        Some(r) => d.with_response_name(r),
        None => d,
    })
}

/// A target series with an optional aligned covariate panel.
#[derive(Debug, Clone)]
pub struct Series {
    pub target: Vec<f64>,
    pub target_name: Option<String>,
    /// Remaining columns, `None` when the file has only the target.
    pub panel: Option<DMatrix<f64>>,
    pub panel_names: Option<Vec<String>>,
}

/// Loads a time series file: the `target` column plus any other columns as a panel.
pub fn load_series(path: impl AsRef<Path>, has_header: bool, target: &ColumnRef) -> Result<Series> {
    let (y, rest, names, name) = load_table(path, has_header)?.split(target)?;
    let panel = (rest.ncols() > 0).then_some(rest);
    Ok(Series {
        target: y.iter().copied().collect(),
        target_name: name,
        panel_names: names.filter(|_| panel.is_some()),
        panel,
    })
}

/// Lag order and forecast horizon of an autoregressive design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSpec {
    order: usize,
    horizon: usize,
}

impl LagSpec {
    pub fn new(order: usize, horizon: usize) -> Result<Self> {
        if order == 0 || horizon == 0 {
            return Err(Error::InvalidParameter(format!(
                "lag order and horizon must be >= 1 (got {order}, {horizon})"
            )));
        }
        Ok(Self { order, horizon })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Row for (1-based) time t holds `(y[t-1], ..., y[t-q])`; its response is `y[t-1+h]`.
pub fn lag_embed(series: &[f64], spec: LagSpec) -> Result<Dataset> {
    let (q, h) = (spec.order, spec.horizon);
    let len = series.len();
    if q + h >= len {
        return Err(Error::SeriesTooShort {
            len,
            order: q,
            horizon: h,
        });
    }
    let rows = len - q - h + 1;
    // zero-based: row r predicts series[r + q + h - 1] from series[r + q - 1], ..., series[r]
    let x = DMatrix::from_fn(rows, q, |r, j| series[r + q - 1 - j]);
    let y = DVector::from_fn(rows, |r, _| series[r + q + h - 1]);
    let names = (1..=q).map(|j| format!("lag{j}")).collect();
    Dataset::new(x, y, Some(names))
}

/// Principal-component scores and loadings of a column-centered panel.
#[derive(Debug, Clone)]
pub struct PcaFactors {
    /// n×r scores, left singular vectors scaled by their singular values.
    pub scores: DMatrix<f64>,
    /// m×r loadings (right singular vectors).
    pub loadings: DMatrix<f64>,
    pub singular_values: DVector<f64>,
}

/// First `r` principal-component scores of `x`, ordered by descending singular value.
///
/// Each loading vector is signed so that its largest-magnitude entry is positive
/// (the first such entry on exact ties).
pub fn pca_factors(x: &DMatrix<f64>, r: usize) -> Result<PcaFactors> {
    if r == 0 {
        return Err(Error::InvalidParameter(
            "number of factors must be >= 1".into(),
        ));
    }
    if !columns_are_centered(x) {
        return Err(Error::NotCentered);
    }
    let (mut u, s, mut v) = thin_svd(x);
    let rank = numerical_rank(&s, 1e-12);
    if r > rank {
        return Err(Error::RankExceeded { requested: r, rank });
    }
    for j in 0..r {
        let col = v.column(j);
        let top = col.amax();
        let pivot = col
            .iter()
            .position(|c| c.abs() >= top * (1.0 - 1e-12))
            .unwrap_or(0);
        if col[pivot] < 0.0 {
            v.column_mut(j).neg_mut();
            u.column_mut(j).neg_mut();
        }
    }
    let scores = u.columns(0, r) * DMatrix::from_diagonal(&s.rows(0, r));
    Ok(PcaFactors {
        scores,
        loadings: v.columns(0, r).into_owned(),
        singular_values: s.rows(0, r).into_owned(),
    })
}
