//! Data containers, CSV I/O, splitting, and empirical norms.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Predictors (n × D, ambient coordinates) paired with responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    predictors: DMatrix<f64>,
    responses: DVector<f64>,
    pub source_seed: Option<u64>,
}

impl Dataset {
    pub fn new(predictors: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        if predictors.nrows() == 0 || responses.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if predictors.ncols() == 0 {
            return Err(Error::invalid("dataset needs at least one predictor column"));
        }
        if predictors.nrows() != responses.len() {
            return Err(Error::DimensionMismatch {
                expected: predictors.nrows(),
                found: responses.len(),
            });
        }
        if predictors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictors"));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("responses"));
        }
        Ok(Self {
            predictors,
            responses,
            source_seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.source_seed = Some(seed);
        self
    }

    pub fn n(&self) -> usize {
        self.predictors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.predictors.ncols()
    }

    pub fn predictors(&self) -> &DMatrix<f64> {
        &self.predictors
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::invalid(format!("row index {bad} out of range for n = {}", self.n())));
        }
        let x = self.predictors.select_rows(idx);
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.responses[i]));
        Ok(Self {
            predictors: x,
            responses: y,
            source_seed: self.source_seed,
        })
    }

    /// Same responses, new predictor matrix (used after feature maps).
    pub fn with_predictors(&self, predictors: DMatrix<f64>) -> Result<Self> {
        let mut ds = Self::new(predictors, self.responses.clone())?;
        ds.source_seed = self.source_seed;
        Ok(ds)
    }

    /// Columnwise zero mean / unit variance. Constant columns are only centered.
    pub fn standardized(&self) -> Self {
        let n = self.n() as f64;
        let mut x = self.predictors.clone();
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for v in col.iter_mut() {
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
        }
        Self {
            predictors: x,
            responses: self.responses.clone(),
            source_seed: self.source_seed,
        }
    }
}

/// Reads a CSV with header `x1,...,xD,y`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let width = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .len();
    if width < 2 {
        return Err(Error::invalid("header must name at least one predictor and the response"));
    }

    let mut cells = Vec::new();
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        // 1-based data row, header excluded
        let row = r + 1;
        if record.len() != width {
            return Err(Error::RaggedRow {
                row,
                expected: width,
                found: record.len(),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::BadCell {
                    row,
                    column: c + 1,
                    value: field.to_string(),
                })?;
            cells.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = width - 1;
    let x = DMatrix::from_fn(rows, d, |i, j| cells[i * width + j]);
    let y = DVector::from_fn(rows, |i, _| cells[i * width + d]);
    Dataset::new(x, y)
}

/// Writes `ds` as CSV. Values use the shortest decimal that round-trips to the same f64.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_matrix_csv(&mut out, &header(ds.dim()), ds.n(), |i, j| {
        if j < ds.dim() {
            ds.predictors[(i, j)]
        } else {
            ds.responses[i]
        }
    })
    .map_err(|e| Error::io(path, e))
}

fn header(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).chain(std::iter::once("y".to_string())).collect()
}

pub(crate) fn write_matrix_csv<W: Write>(
    out: &mut W,
    header: &[String],
    rows: usize,
    cell: impl Fn(usize, usize) -> f64,
) -> std::io::Result<()> {
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for i in 0..rows {
        line.clear();
        for j in 0..header.len() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format_f64(cell(i, j)));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Seeded Fisher–Yates shuffle, then the first round(fraction·n) rows go to test.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    split_n(ds.n(), test_fraction, seed)
}

pub fn split_n(n: usize, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} rows")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let m = (test_fraction * n as f64).round() as usize;
    if m == 0 || m == n {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} leaves an empty side for n = {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut test_idx = perm[..m].to_vec();
    let mut train_idx = perm[m..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(SplitIndices {
        train_idx,
        test_idx,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct EmpiricalNorm(pub f64);

impl EmpiricalNorm {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Root mean squared difference of two value vectors.
pub fn empirical_norm(f_vals: &[f64], g_vals: &[f64]) -> Result<EmpiricalNorm> {
    if f_vals.len() != g_vals.len() {
        return Err(Error::DimensionMismatch {
            expected: f_vals.len(),
            found: g_vals.len(),
        });
    }
    if f_vals.is_empty() {
        return Err(Error::invalid("empirical norm of empty vectors"));
    }
    let ss: f64 = f_vals.iter().zip(g_vals).map(|(f, g)| (f - g).powi(2)).sum();
    Ok(EmpiricalNorm((ss / f_vals.len() as f64).sqrt()))
}
