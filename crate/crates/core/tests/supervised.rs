mod common;

use arbp_core::bandwidth::random_model;
use arbp_core::supervised::{
    beta_weight, classification_step, fit_regression, predict_log_density_regression, SupervisedConfig,
};
use arbp_core::{BandwidthModel, KernelKind, ModelKind, Task};
use common::{normals, rng, simpson};
use proptest::prelude::*;
use rand::Rng;

fn regression_data(n: usize, dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let x = normals(n * dim, seed);
    let noise = normals(n, seed + 100);
    let y = x
        .chunks_exact(dim)
        .zip(&noise)
        .map(|(r, e)| r[0] - 0.5 * r.get(1).copied().unwrap_or(0.0) + 0.3 * e)
        .collect();
    (x, y)
}

#[test]
fn conditional_density_integrates_to_one() {
    let (x, y) = regression_data(30, 2, 1);
    let bw = random_model(ModelKind::ArdBp, KernelKind::Rbf, 3, &mut rng(3));
    let model = fit_regression(&x, &y, 2, &bw, &SupervisedConfig::new(Task::Regression)).unwrap();
    for q in [[0.0, 0.0], [1.2, -0.4], [-2.0, 1.0]] {
        let total = simpson(
            |t| predict_log_density_regression(&model, &q, t).unwrap().exp(),
            -15.0,
            15.0,
            6000,
        );
        assert!((total - 1.0).abs() < 1e-6, "{q:?}: {total}");
    }
}

#[test]
fn conditional_mean_follows_the_covariate() {
    let (x, y) = regression_data(60, 1, 2);
    let bw = BandwidthModel::init(ModelKind::ArBp, KernelKind::Rbf, 2, 0);
    let model = fit_regression(&x, &y, 1, &bw, &SupervisedConfig::new(Task::Regression)).unwrap();
    let mean = |q: f64| {
        let p = |t: f64| predict_log_density_regression(&model, &[q], t).unwrap().exp();
        simpson(|t| t * p(t), -12.0, 12.0, 4800) / simpson(p, -12.0, 12.0, 4800)
    };
    let (lo, mid, hi) = (mean(-1.0), mean(0.0), mean(1.0));
    assert!(lo < mid && mid < hi, "{lo} {mid} {hi}");
}

#[test]
fn beta_stays_inside_the_unit_interval() {
    let mut r = rng(6);
    for kind in [ModelKind::RBp, ModelKind::ArBp, ModelKind::ArdBp, ModelKind::ArnetBp] {
        let bw = random_model(kind, KernelKind::Rbf, 4, &mut r);
        for i in 1..50 {
            let a: Vec<f64> = (0..3).map(|_| r.random_range(-4.0..4.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| r.random_range(-4.0..4.0)).collect();
            let beta = beta_weight(&a, &b, &bw, i).unwrap();
            assert!(beta > 0.0 && beta < 1.0, "{kind:?} step {i}: {beta}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn class_probabilities_stay_normalized(
        steps in proptest::collection::vec(
            (0.001f64..0.999, 0.001f64..0.999, 0.001f64..0.999, any::<bool>()),
            20,
        ),
    ) {
        let mut q = 0.5;
        for (r, beta, rho, label) in steps {
            let (p1, p0) = classification_step(q, r, beta, rho, label);
            prop_assert!((p1 + p0 - 1.0).abs() <= 1e-12, "{p1} + {p0}");
            prop_assert!(p1 > 0.0 && p0 > 0.0);
            q = p1;
        }
    }
}
