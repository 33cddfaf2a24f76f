//! Product-Gaussian kernel density baseline with cross-validated bandwidth.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 80;
pub const GRID_MIN: f64 = 0.1;
pub const GRID_MAX: f64 = 100.0;
pub const FOLDS: usize = 5;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log-spaced candidate bandwidths from 0.1 to 100.
pub fn bandwidth_grid() -> Vec<f64> {
    let (lo, hi) = (libm::log10(GRID_MIN), libm::log10(GRID_MAX));
    (0..GRID_SIZE)
        .map(|k| {
            if k == GRID_SIZE - 1 {
                return GRID_MAX;
            }
            libm::pow(10.0, lo + (hi - lo) * k as f64 / (GRID_SIZE - 1) as f64)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_kernel_mean(sq: &[f64], h: f64, d: usize) -> f64 {
    let norm = d as f64 * (libm::log(h) + LN_SQRT_2PI);
    let scale = -0.5 / (h * h);
    let hi = sq.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(scale * s));
    let sum: f64 = sq.iter().map(|&s| libm::exp(scale * s - hi)).sum();
    hi + libm::log(sum) - libm::log(sq.len() as f64) - norm
}

/// `log p̂(x)` for bandwidth `h` on `train` (`n × d`).
pub fn log_density(train: &[f64], d: usize, h: f64, x: &[f64]) -> Result<f64> {
    if d == 0 || train.is_empty() || train.len() % d != 0 || x.len() != d {
        return Err(Error::contract("kde needs a non-empty n × d matrix and a d-vector"));
    }
    if !(h > 0.0) {
        return Err(Error::contract("bandwidth must be positive"));
    }
    let sq: Vec<f64> = train.chunks_exact(d).map(|r| sq_dist(r, x)).collect();
    Ok(log_kernel_mean(&sq, h, d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeFit {
    pub bandwidth: f64,
    /// Held-out mean NLL for each grid bandwidth.
    pub cv_nll: Vec<f64>,
    /// Leave-one-out was used because there were fewer than five points.
    pub leave_one_out: bool,
}

/// Picks the grid bandwidth with the lowest held-out NLL. Folds come from a seeded
/// shuffle; with fewer than five points every point is its own fold.
pub fn select_bandwidth(train: &[f64], d: usize, seed: u64) -> Result<KdeFit> {
    if d == 0 || train.len() % d != 0 || train.len() / d < 2 {
        return Err(Error::contract("bandwidth selection needs at least two points"));
    }
    let n = train.len() / d;
    let leave_one_out = n < FOLDS;
    let folds = if leave_one_out { n } else { FOLDS };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (rank, &i) in idx.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    let grid = bandwidth_grid();
    let mut total = vec![0.0; grid.len()];
    let mut sq = Vec::with_capacity(n);
    for i in 0..n {
        sq.clear();
        let xi = &train[i * d..(i + 1) * d];
        for k in 0..n {
            if fold_of[k] != fold_of[i] {
                sq.push(sq_dist(&train[k * d..(k + 1) * d], xi));
            }
        }
        for (t, &h) in total.iter_mut().zip(&grid) {
            *t -= log_kernel_mean(&sq, h, d);
        }
    }
    let cv_nll: Vec<f64> = total.iter().map(|t| t / n as f64).collect();
    let best = cv_nll
        .iter()
        .enumerate()
        .fold(0, |b, (k, v)| if *v < cv_nll[b] { k } else { b });
    Ok(KdeFit {
        bandwidth: grid[best],
        cv_nll,
        leave_one_out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeResult {
    pub fit: KdeFit,
    pub mean_nll: f64,
    pub test_nll: Vec<f64>,
}

/// Selects a bandwidth on `train` and scores `test`.
pub fn kde_baseline(train: &[f64], test: &[f64], d: usize, seed: u64) -> Result<KdeResult> {
    let fit = select_bandwidth(train, d, seed)?;
    if test.is_empty() || test.len() % d != 0 {
        return Err(Error::contract("test must be a non-empty n × d matrix"));
    }
    let test_nll = test
        .chunks_exact(d)
        .map(|x| log_density(train, d, fit.bandwidth, x).map(|l| -l))
        .collect::<Result<Vec<_>>>()?;
    let mean_nll = test_nll.iter().sum::<f64>() / test_nll.len() as f64;
    Ok(KdeResult {
        fit,
        mean_nll,
        test_nll,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::norm_log_pdf;

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = bandwidth_grid();
        assert_eq!(g.len(), 80);
        assert!((g[0] - 0.1).abs() < 1e-15);
        assert_eq!(g[79], 100.0);
        let step = libm::log(g[1] / g[0]);
        for w in g.windows(2) {
            assert!((libm::log(w[1] / w[0]) - step).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_density_is_the_kernel() {
        let h = 0.7;
        let lp = log_density(&[0.3, -1.0], 2, h, &[1.0, 0.0]).unwrap();
        let expect = norm_log_pdf(0.7 / h) + norm_log_pdf(1.0 / h) - 2.0 * libm::log(h);
        assert!((lp - expect).abs() < 1e-13);
    }

    #[test]
    fn tiny_samples_use_leave_one_out() {
        let fit = select_bandwidth(&[0.0, 1.0, 3.0], 1, 0).unwrap();
        assert!(fit.leave_one_out);
        assert!(select_bandwidth(&[0.0], 1, 0).is_err());
    }
}
