mod common;

use arbp_core::engine::{fit_matrix, Evaluator, FitConfig};
use arbp_core::sampling::{smc_sample, SmcConfig};
use arbp_core::{BandwidthModel, KernelKind, ModelKind, ParticleSet};
use common::normals;

/// Weighted Kolmogorov–Smirnov distance to a reference CDF.
fn ks_distance(set: &ParticleSet, cdf: impl Fn(f64) -> f64) -> f64 {
    let w = set.normalized_weights();
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.particles[a].total_cmp(&set.particles[b]));
    let mut acc = 0.0;
    let mut worst: f64 = 0.0;
    for k in order {
        let f = cdf(set.particles[k]);
        worst = worst.max((f - acc).abs());
        acc += w[k];
        worst = worst.max((f - acc).abs());
    }
    worst
}

/// Cumulative Simpson integrals of a density on a regular grid, interpolated
/// linearly between nodes.
struct CdfTable {
    lo: f64,
    h: f64,
    values: Vec<f64>,
}

impl CdfTable {
    fn new(pdf: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> Self {
        let h = (hi - lo) / panels as f64;
        let f: Vec<f64> = (0..=2 * panels).map(|k| pdf(lo + 0.5 * h * k as f64)).collect();
        let mut values = vec![0.0];
        for k in 0..panels {
            let (a, m, b) = (f[2 * k], f[2 * k + 1], f[2 * k + 2]);
            values.push(values[k] + h * (a + 4.0 * m + b) / 6.0);
        }
        Self { lo, h, values }
    }

    fn at(&self, x: f64) -> f64 {
        let t = ((x - self.lo) / self.h).max(0.0);
        let k = (t.floor() as usize).min(self.values.len() - 2);
        let frac = (t - k as f64).min(1.0);
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }
}

#[test]
fn one_dimensional_samples_follow_the_predictive() {
    let mut values = normals(40, 3);
    for (i, v) in values.iter_mut().enumerate() {
        *v = 0.5 * *v + if i % 3 == 0 { 1.5 } else { -0.7 };
    }
    let bw = BandwidthModel::init(ModelKind::ArBp, KernelKind::Rbf, 1, 0);
    let model = fit_matrix(&values, 1, &bw, &FitConfig::default()).unwrap();
    let eval = Evaluator::new(&model);
    let pdf = |x: f64| eval.log_density(&[x]).unwrap().exp();
    let set = smc_sample(
        &model,
        &SmcConfig {
            particles: 5000,
            seed: 1,
            ..SmcConfig::default()
        },
    )
    .unwrap();
    let table = CdfTable::new(pdf, -12.0, 12.0, 12_000);
    let ks = ks_distance(&set, |x| table.at(x));
    assert!(ks <= 0.05, "KS distance {ks}");
}

#[test]
fn mixture_components_are_recovered() {
    let means = [[-1.5, -1.0], [1.5, 1.0]];
    let z = normals(100, 9);
    let values: Vec<f64> = (0..50)
        .flat_map(|i| {
            let m = means[i % 2];
            [m[0] + 0.4 * z[2 * i], m[1] + 0.4 * z[2 * i + 1]]
        })
        .collect();
    let bw = BandwidthModel::init(ModelKind::ArBp, KernelKind::Rbf, 2, 0);
    let model = fit_matrix(&values, 2, &bw, &FitConfig::default()).unwrap();
    let set = smc_sample(
        &model,
        &SmcConfig {
            particles: 1000,
            seed: 4,
            ..SmcConfig::default()
        },
    )
    .unwrap();
    assert!(!set.resample_steps.is_empty(), "no resampling was triggered");
    let w = set.normalized_weights();
    let mut sums = [[0.0; 2]; 2];
    let mut mass = [0.0; 2];
    for k in 0..set.len() {
        let p = set.particle(k);
        let dist = |m: [f64; 2]| (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
        let c = usize::from(dist(means[1]) < dist(means[0]));
        sums[c][0] += w[k] * p[0];
        sums[c][1] += w[k] * p[1];
        mass[c] += w[k];
    }
    for c in 0..2 {
        for j in 0..2 {
            let est = sums[c][j] / mass[c];
            assert!((est - means[c][j]).abs() < 0.3, "component {c} coordinate {j}: {est}");
        }
    }
}
