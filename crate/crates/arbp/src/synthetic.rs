//! Seeded toy datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::table::RawTable;

fn names(d: usize) -> Vec<String> {
    (0..d).map(|c| format!("x{c}")).collect()
}

/// Uniform on the dark squares of a 4 × 4 board covering `[-4, 4]²`.
pub fn chessboard(n: usize, seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let x1: f64 = rng.random_range(-2.0..2.0);
        let shift = if rng.random::<bool>() { 2.0 } else { 0.0 };
        let x2 = rng.random::<f64>() - shift + (x1.floor().rem_euclid(2.0));
        values.push(2.0 * x1);
        values.push(2.0 * x2);
    }
    RawTable { names: names(2), values }
}

/// An isotropic Gaussian mixture with equal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub means: Vec<Vec<f64>>,
    pub sd: f64,
}

impl Mixture {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sample(&self, n: usize, seed: u64) -> RawTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            let k = rng.random_range(0..self.means.len());
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(self.means[k][j] + self.sd * z);
            }
        }
        RawTable { names: names(d), values }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI * self.sd * self.sd).ln();
        let terms: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let sq: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                norm - 0.5 * sq / (self.sd * self.sd)
            })
            .collect();
        let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi + (terms.iter().map(|t| (t - hi).exp()).sum::<f64>() / terms.len() as f64).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chessboard_points_sit_on_dark_squares() {
        let t = chessboard(2000, 3);
        for i in 0..t.rows() {
            let r = t.row(i);
            assert!(r[0].abs() <= 4.0 && r[1].abs() <= 4.0);
            let (a, b) = ((r[0] / 2.0).floor() as i64, (r[1] / 2.0).floor() as i64);
            assert_eq!((a + b).rem_euclid(2), 0, "{r:?}");
        }
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let m = Mixture {
            means: vec![vec![-1.0], vec![2.0]],
            sd: 0.7,
        };
        let h = 0.001;
        let total: f64 = (0..20_000).map(|k| (m.log_density(&[-10.0 + k as f64 * h])).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
