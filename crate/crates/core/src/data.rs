//! Column pruning and standardization.
//!
//! Columns are dropped when they are constant, discrete (at most ten distinct
//! values) or nearly collinear (Pearson `r > 0.98`) with an earlier kept column.
//! Survivors are standardized with the training mean and sample standard deviation.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::format;
#[cfg(test)]
use alloc::vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of distinct values for which a column counts as discrete.
pub const DISCRETE_MAX_DISTINCT: usize = 10;
/// Pearson correlation above which the later column of a pair is dropped.
pub const CORRELATION_THRESHOLD: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    ZeroVariance,
    Discrete { distinct: usize },
    Correlated { with: usize, r: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    /// Index among the raw columns.
    pub index: usize,
    pub name: String,
    pub reason: DropReason,
}

/// Stored transform: which raw columns survive and their training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub raw_columns: usize,
    pub kept: Vec<usize>,
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    /// Selects and standardizes one raw row.
    pub fn apply_row(&self, raw: &[f64], out: &mut Vec<f64>) {
        for (k, &c) in self.kept.iter().enumerate() {
            out.push((raw[c] - self.means[k]) / self.sds[k]);
        }
    }

    /// Maps a standardized row back to the kept raw columns' scale.
    pub fn invert_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, v)| v * self.sds[k] + self.means[k])
            .collect()
    }

    /// Log-Jacobian from standardized to raw scale, `-Σ log sd`.
    pub fn log_jacobian(&self) -> f64 {
        -self.sds.iter().map(|s| libm::log(*s)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedDataset {
    values: Vec<f64>,
    n: usize,
    standardization: Standardization,
    dropped: Vec<DroppedColumn>,
}

impl StandardizedDataset {
    /// Row-major `n × dim` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.standardization.dim()
    }

    pub fn names(&self) -> &[String] {
        &self.standardization.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn dropped(&self) -> &[DroppedColumn] {
        &self.dropped
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = if values.len() > 1 { libm::sqrt(ss / (n - 1.0)) } else { 0.0 };
    (mean, sd)
}

fn distinct_count(col: &[f64], cap: usize) -> usize {
    let mut seen: Vec<f64> = Vec::new();
    for &v in col {
        if !seen.contains(&v) {
            seen.push(v);
            if seen.len() > cap {
                break;
            }
        }
    }
    seen.len()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_sd(a);
    let (mb, _) = mean_sd(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / libm::sqrt(saa * sbb)
}

/// Prunes and standardizes a raw `n × names.len()` matrix. With `stats`, the
/// stored transform is applied as is; otherwise it is estimated from `raw`.
pub fn preprocess(
    raw: &[f64],
    names: &[String],
    stats: Option<&Standardization>,
) -> Result<StandardizedDataset> {
    let cols = names.len();
    if cols == 0 || raw.len() % cols != 0 {
        return Err(Error::contract("raw matrix does not match the column names"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("raw values must be finite"));
    }
    let n = raw.len() / cols;
    let (standardization, dropped) = match stats {
        Some(s) => {
            if s.raw_columns != cols {
                return Err(Error::contract(format!(
                    "transform expects {} raw columns, got {cols}",
                    s.raw_columns
                )));
            }
            (s.clone(), Vec::new())
        }
        None => fit_standardization(raw, names, n)?,
    };
    let mut values = Vec::with_capacity(n * standardization.dim());
    for row in raw.chunks_exact(cols) {
        standardization.apply_row(row, &mut values);
    }
    Ok(StandardizedDataset {
        values,
        n,
        standardization,
        dropped,
    })
}

fn fit_standardization(
    raw: &[f64],
    names: &[String],
    n: usize,
) -> Result<(Standardization, Vec<DroppedColumn>)> {
    let cols = names.len();
    if n < 2 {
        return Err(Error::contract("estimating a transform needs at least two rows"));
    }
    let column = |c: usize| -> Vec<f64> { raw.iter().skip(c).step_by(cols).copied().collect() };
    let mut dropped = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut kept_cols: Vec<Vec<f64>> = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for c in 0..cols {
        let col = column(c);
        let (mean, sd) = mean_sd(&col);
        let drop = |reason| DroppedColumn {
            index: c,
            name: names[c].clone(),
            reason,
        };
        if !(sd > 0.0) {
            dropped.push(drop(DropReason::ZeroVariance));
            continue;
        }
        let distinct = distinct_count(&col, DISCRETE_MAX_DISTINCT);
        if distinct <= DISCRETE_MAX_DISTINCT {
            dropped.push(drop(DropReason::Discrete { distinct }));
            continue;
        }
        let twin = kept
            .iter()
            .zip(&kept_cols)
            .map(|(&k, other)| (k, pearson(other, &col)))
            .find(|(_, r)| *r > CORRELATION_THRESHOLD);
        if let Some((with, r)) = twin {
            dropped.push(drop(DropReason::Correlated { with, r }));
            continue;
        }
        kept.push(c);
        kept_cols.push(col);
        means.push(mean);
        sds.push(sd);
    }
    if kept.is_empty() {
        return Err(Error::contract("every column was dropped"));
    }
    let standardization = Standardization {
        raw_columns: cols,
        names: kept.iter().map(|&c| names[c].clone()).collect(),
        kept,
        means,
        sds,
    };
    Ok((standardization, dropped))
}

/// Standardization of a single response column, never pruned.
pub fn response_stats(y: &[f64]) -> Result<(f64, f64)> {
    if y.len() < 2 || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("response needs at least two finite values"));
    }
    let (mean, sd) = mean_sd(y);
    if !(sd > 0.0) {
        return Err(Error::contract("response has zero variance"));
    }
    Ok((mean, sd))
}

/// Names `x0, x1, ...` for headerless data.
pub fn default_names(cols: usize) -> Vec<String> {
    (0..cols).map(|c| format!("x{c}")).collect()
}
