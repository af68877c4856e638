//! CSV ingestion, mean imputation and column standardisation.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::TaskKind;

/// Per-column location and scale used to standardise inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Column means and sample standard deviations (`n - 1` denominator).
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::Data("at least two rows are needed to standardise".into()));
        }
        let means = x.mean_axis(Axis(0)).expect("nonempty").to_vec();
        let stds: Vec<f64> = x.columns().into_iter().map(|c| c.std(1.0)).collect();
        if let Some(j) = stds.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Data(format!("column {j} is constant or not finite")));
        }
        Ok(Standardizer { means, stds })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Shape(format!(
                "{} columns given, standardiser was fitted on {}",
                x.ncols(),
                self.means.len()
            )));
        }
        let mut out = x.to_owned();
        for ((mut c, &m), &s) in out.columns_mut().into_iter().zip(&self.means).zip(&self.stds) {
            c.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.means.len() {
            return Err(Error::Shape("column count does not match the standardiser".into()));
        }
        let mut out = z.to_owned();
        for ((mut c, &m), &s) in out.columns_mut().into_iter().zip(&self.means).zip(&self.stds) {
            c.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }
}

/// Which column holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for TargetColumn {
    type Err = std::convert::Infallible;

    /// A plain non-negative integer is an index, anything else a name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        })
    }
}

/// A parsed CSV table: every cell kept as text, names generated when there
/// is no header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Name given to column `j` of a header-less file.
pub fn default_column_name(j: usize) -> String {
    format!("col{j}")
}

pub fn read_table(path: &Path, has_header: bool) -> Result<Table> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut names: Vec<String> = if has_header {
        reader
            .headers()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    if !has_header {
        let width = rows.first().map_or(0, Vec::len);
        names = (0..width).map(default_column_name).collect();
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }
    Ok(Table { names, rows })
}

impl Table {
    pub fn column_index(&self, target: &TargetColumn) -> Result<usize> {
        match target {
            TargetColumn::Index(i) if *i < self.names.len() => Ok(*i),
            TargetColumn::Index(i) => Err(Error::Data(format!(
                "target column index {i} out of range ({} columns)",
                self.names.len()
            ))),
            TargetColumn::Name(n) => self
                .names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Data(format!("target column {n:?} not found"))),
        }
    }

    /// Numeric matrix of the given columns; empty cells and `NA`/`NaN` become NaN.
    pub fn numeric_columns(&self, columns: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.rows.len(), columns.len()));
        for (i, row) in self.rows.iter().enumerate() {
            for (k, &j) in columns.iter().enumerate() {
                let cell = row.get(j).map(String::as_str).unwrap_or("");
                out[[i, k]] = parse_cell(cell).ok_or_else(|| {
                    Error::Data(format!(
                        "non-numeric value {cell:?} in column {:?}, row {}",
                        self.names[j],
                        i + 1
                    ))
                })?;
            }
        }
        Ok(out)
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

fn parse_cell(cell: &str) -> Option<f64> {
    if is_missing(cell) {
        return Some(f64::NAN);
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Replaces NaN entries by their column mean; returns the number replaced.
pub fn impute_means(x: &mut Array2<f64>) -> Result<usize> {
    let mut count = 0;
    for (j, mut c) in x.columns_mut().into_iter().enumerate() {
        let observed: Vec<f64> = c.iter().copied().filter(|v| !v.is_nan()).collect();
        let missing = c.len() - observed.len();
        if missing == 0 {
            continue;
        }
        if observed.is_empty() {
            return Err(Error::Data(format!("feature column {j} has no observed values")));
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        c.mapv_inplace(|v| if v.is_nan() { mean } else { v });
        count += missing;
    }
    Ok(count)
}

/// Responses in the form the trainer expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub y: Array2<f64>,
    /// Class labels in column order (classification only).
    pub labels: Option<Vec<String>>,
}

/// Parses the response column. Regression needs numbers; classification
/// takes any strings and sorts the distinct labels.
pub fn parse_targets(table: &Table, column: usize, kind: TaskKind) -> Result<Targets> {
    let name = &table.names[column];
    let cells: Vec<&str> = table
        .rows
        .iter()
        .map(|r| r.get(column).map(String::as_str).unwrap_or(""))
        .collect();
    if let Some(i) = cells.iter().position(|c| is_missing(c)) {
        return Err(Error::Data(format!("missing target in column {name:?}, row {}", i + 1)));
    }
    match kind {
        TaskKind::Regression => {
            let mut y = Array2::zeros((cells.len(), 1));
            for (i, c) in cells.iter().enumerate() {
                y[[i, 0]] = c.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Data(format!("non-numeric target {c:?} in column {name:?}, row {}", i + 1))
                })?;
            }
            Ok(Targets { y, labels: None })
        }
        TaskKind::Classification => {
            let labels: Vec<String> = cells
                .iter()
                .map(|c| c.to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if labels.len() < 2 {
                return Err(Error::Data(format!(
                    "classification needs at least two classes, column {name:?} has {}",
                    labels.len()
                )));
            }
            Ok(Targets {
                y: one_hot(&cells, &labels)?,
                labels: Some(labels),
            })
        }
    }
}

/// One-hot encoding of `cells` against a fixed label list.
pub fn one_hot(cells: &[&str], labels: &[String]) -> Result<Array2<f64>> {
    let mut y = Array2::zeros((cells.len(), labels.len()));
    for (i, c) in cells.iter().enumerate() {
        let k = labels
            .iter()
            .position(|l| l == c)
            .ok_or_else(|| Error::Data(format!("unknown class label {c:?} in row {}", i + 1)))?;
        y[[i, k]] = 1.0;
    }
    Ok(y)
}

/// Features ready for training plus what is needed to reproduce the transform.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFeatures {
    /// Standardised design matrix.
    pub x: Array2<f64>,
    /// Names of the kept columns, in matrix order.
    pub names: Vec<String>,
    pub standardizer: Standardizer,
    /// Names of constant columns that were removed.
    pub dropped: Vec<String>,
    /// Number of missing cells filled with the column mean.
    pub imputed: usize,
}

/// Imputes, drops constant columns and standardises every column except `target`.
pub fn prepare_features(table: &Table, target: usize) -> Result<PreparedFeatures> {
    let columns: Vec<usize> = (0..table.names.len()).filter(|&j| j != target).collect();
    if columns.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }
    let mut raw = table.numeric_columns(&columns)?;
    let imputed = impute_means(&mut raw)?;
    if imputed > 0 {
        log::warn!("imputed {imputed} missing values with column means");
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (k, &j) in columns.iter().enumerate() {
        let c = raw.column(k);
        if c.iter().all(|&v| v == c[0]) {
            log::warn!("dropping constant column {:?}", table.names[j]);
            dropped.push(table.names[j].clone());
        } else {
            keep.push(k);
        }
    }
    if keep.is_empty() {
        return Err(Error::Data("every feature column is constant".into()));
    }
    let kept = raw.select(Axis(1), &keep);
    let standardizer = Standardizer::fit(kept.view())?;
    let x = standardizer.transform(kept.view())?;
    Ok(PreparedFeatures {
        x,
        names: keep.iter().map(|&k| table.names[columns[k]].clone()).collect(),
        standardizer,
        dropped,
        imputed,
    })
}

/// Extracts and standardises the named columns of a new table with stored
/// statistics; missing cells take the stored mean.
pub fn apply_features(table: &Table, names: &[String], standardizer: &Standardizer) -> Result<Array2<f64>> {
    let missing: Vec<&String> = names.iter().filter(|n| !table.names.contains(n)).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("input is missing columns {missing:?}")));
    }
    let columns: Vec<usize> = names
        .iter()
        .map(|n| table.names.iter().position(|c| c == n).expect("checked"))
        .collect();
    let mut raw = table.numeric_columns(&columns)?;
    for (mut c, &m) in raw.columns_mut().into_iter().zip(&standardizer.means) {
        c.mapv_inplace(|v| if v.is_nan() { m } else { v });
    }
    standardizer.transform(raw.view())
}

/// Mean and sample standard deviation of every column.
pub fn column_moments(x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let means = x.mean_axis(Axis(0)).expect("nonempty");
    let stds = x.map_axis(Axis(0), |c| c.std(1.0));
    (means, stds)
}
