//! CSV input: a header row and numeric cells.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A raw numeric table, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl RawTable {
    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn select_rows(&self, idx: &[usize]) -> RawTable {
        RawTable {
            names: self.names.clone(),
            values: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }

    /// Splits off the last column: `(covariates, response)`.
    pub fn split_last(&self) -> Result<(RawTable, Vec<f64>)> {
        let c = self.cols();
        if c < 2 {
            return Err(Error::Usage("a supervised task needs covariates and a response column".into()));
        }
        let mut x = Vec::with_capacity(self.rows() * (c - 1));
        let mut y = Vec::with_capacity(self.rows());
        for i in 0..self.rows() {
            let r = self.row(i);
            x.extend_from_slice(&r[..c - 1]);
            y.push(r[c - 1]);
        }
        Ok((
            RawTable {
                names: self.names[..c - 1].to_vec(),
                values: x,
            },
            y,
        ))
    }

    /// Seeded shuffle split; the first `ceil(n · fraction)` shuffled rows train.
    pub fn split(&self, fraction: f64, seed: u64) -> (RawTable, RawTable) {
        let n = self.rows();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((n as f64 * fraction).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
        (self.select_rows(&idx[..cut]), self.select_rows(&idx[cut..]))
    }
}

/// Reads a headered CSV of finite numbers.
pub fn load_csv(path: &Path) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, path)
}

pub fn read_csv(reader: impl std::io::Read, path: &Path) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            column: 0,
            detail: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Data {
            path: path.to_path_buf(),
            detail: "missing header row".into(),
        });
    }
    let mut values = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = k + 2;
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: 0,
            detail: e.to_string(),
        })?;
        if record.len() != names.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: record.len().min(names.len()) + 1,
                detail: format!("expected {} cells, found {}", names.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: c + 1,
                detail: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: c + 1,
                    detail: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            detail: "no data rows".into(),
        });
    }
    Ok(RawTable { names, values })
}

/// Writes a headered CSV.
pub fn write_csv(path: &Path, names: &[String], values: &[f64]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(names).map_err(|e| io(e.into()))?;
    for row in values.chunks(names.len().max(1)) {
        w.write_record(row.iter().map(|v| format!("{v}"))).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
