//! Bandwidth tuning by maximising the prequential log-likelihood.
//!
//! A subsample of at most `n_ρ` training points is drawn once. Every Adam step then
//! draws a fresh sample and feature permutation of that subsample, evaluates
//! `-Σ_i log p_{i-1}(x_i)` on it and differentiates the whole recursion on a tape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{Real, Tape, Var};
use crate::bandwidth::{BandwidthModel, BandwidthShape};
use crate::engine::{
    fit_matrix, permute_rows, sweep, FeatureOrder, FitConfig, FittedDensityModel,
    InitialDensity, PermutationPair, StepWeight, Evaluator,
};
use crate::error::{Error, Result};
use crate::math;
use crate::supervised::{supervised_sweep, Task};

/// Largest subsample used inside the objective by default.
pub const DEFAULT_SUBSAMPLE: usize = 256;
/// Attempts per step (the first plus retries with halved learning rate).
const MAX_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub maxiter: usize,
    /// `n_ρ`; `None` means `min(n, 256)`.
    pub subsample: Option<usize>,
    /// `None` picks 0.05 for kernel bandwidths and 0.01 for the network.
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Permutations averaged inside each objective evaluation.
    pub permutations: usize,
    pub feature_order: FeatureOrder,
    pub initial: InitialDensity,
    /// Return the iterate with the lowest objective seen instead of the last one.
    pub best_of_trace: bool,
    pub objective: Objective,
}

/// Which prequential likelihood is minimised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Joint density of all columns.
    #[default]
    Density,
    /// Conditional density of the last column given the others.
    Regression,
    /// Conditional probability of a 0/1 label in the last column.
    Classification,
}

impl Objective {
    fn task(self) -> Option<Task> {
        match self {
            Objective::Density => None,
            Objective::Regression => Some(Task::Regression),
            Objective::Classification => Some(Task::Classification),
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            maxiter: 200,
            subsample: None,
            learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            permutations: 1,
            feature_order: FeatureOrder::Random,
            initial: InitialDensity::Normal,
            best_of_trace: false,
            objective: Objective::Density,
        }
    }
}

impl OptimizerConfig {
    pub fn learning_rate_for(&self, shape: &BandwidthShape) -> f64 {
        self.learning_rate
            .unwrap_or(if shape.is_net() { 0.01 } else { 0.05 })
    }

    fn validate(&self) -> Result<()> {
        let rate_ok = self.learning_rate.is_none_or(|r| r.is_finite() && r > 0.0);
        if !rate_ok || self.permutations == 0 || self.subsample == Some(0) {
            return Err(Error::contract("optimizer counts and rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::contract("Adam needs betas in [0, 1) and a positive epsilon"));
        }
        Ok(())
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params`, in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &OptimizerConfig) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        for k in 0..params.len() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * grad[k];
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
}

fn check_subset(values: &[f64], dim: usize, pairs: &[PermutationPair], objective: Objective) -> Result<usize> {
    if dim == 0 || values.is_empty() || values.len() % dim != 0 {
        return Err(Error::contract("subset must be a non-empty n × dim matrix"));
    }
    let n = values.len() / dim;
    if pairs.is_empty() {
        return Err(Error::contract("at least one permutation is required"));
    }
    for p in pairs {
        p.validate(n, dim)?;
        if objective != Objective::Density && p.feature_order[dim - 1] != dim - 1 {
            return Err(Error::contract("the response must stay last in every feature order"));
        }
    }
    if objective != Objective::Density && dim < 2 {
        return Err(Error::contract("a conditional objective needs at least one covariate"));
    }
    Ok(n)
}

fn run_objective<R: Real>(
    theta: &[R],
    values: &[f64],
    dim: usize,
    shape: &BandwidthShape,
    pairs: &[PermutationPair],
    initial: InitialDensity,
    objective: Objective,
) -> R {
    let n = values.len() / dim;
    let weights = StepWeight::sequence(n);
    let params = shape.params(theta);
    let mut total = R::cst(0.0);
    for pair in pairs {
        let xs = permute_rows(values, dim, pair);
        let pos = params.positional(&pair.feature_order);
        match objective.task() {
            None => sweep(&pos, &xs, dim, initial, &weights, |_, _, lp| total = total - lp),
            Some(task) => supervised_sweep(&pos, &xs, dim - 1, task, &weights, |_, _, lp| total = total - lp),
        }
    }
    total
}

/// Prequential negative log-likelihood summed over `pairs`, as a function of the
/// unconstrained parameter vector.
pub fn objective(
    theta: &[f64],
    values: &[f64],
    dim: usize,
    shape: &BandwidthShape,
    pairs: &[PermutationPair],
    initial: InitialDensity,
    objective: Objective,
) -> Result<f64> {
    check_subset(values, dim, pairs, objective)?;
    check_theta(theta, shape)?;
    let value = run_objective(theta, values, dim, shape, pairs, initial, objective);
    if !value.is_finite() {
        return Err(objective_fault(theta, value));
    }
    Ok(value)
}

/// Objective value and its exact gradient.
pub fn objective_and_gradient(
    theta: &[f64],
    values: &[f64],
    dim: usize,
    shape: &BandwidthShape,
    pairs: &[PermutationPair],
    initial: InitialDensity,
    objective: Objective,
) -> Result<(f64, Vec<f64>)> {
    check_subset(values, dim, pairs, objective)?;
    check_theta(theta, shape)?;
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = theta.iter().map(|&t| tape.var(t)).collect();
    let out = run_objective(&vars, values, dim, shape, pairs, initial, objective);
    let value = out.val();
    if !value.is_finite() {
        return Err(objective_fault(theta, value));
    }
    let grad = tape.gradient(out, &vars);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFault {
            step: 0,
            detail: format!("non-finite gradient at parameters {theta:?}"),
        });
    }
    Ok((value, grad))
}

fn check_theta(theta: &[f64], shape: &BandwidthShape) -> Result<()> {
    if theta.len() != shape.num_params() {
        return Err(Error::contract(format!(
            "expected {} parameters, got {}",
            shape.num_params(),
            theta.len()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::contract("parameters must be finite"));
    }
    Ok(())
}

fn objective_fault(theta: &[f64], value: f64) -> Error {
    Error::NumericFault {
        step: 0,
        detail: format!("objective is {value} at parameters {theta:?}"),
    }
}

/// Result of an optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub bandwidth: BandwidthModel,
    /// Objective value at each step, on that step's permutation.
    pub trace: Vec<f64>,
    /// Steps that needed a halved learning rate.
    pub retries: usize,
}

/// Rows used by the objective: a seeded draw of `min(n, n_ρ)` rows without
/// replacement, kept in their original order.
pub fn subsample_rows(values: &[f64], dim: usize, size: usize, seed: u64) -> Vec<f64> {
    let n = values.len() / dim;
    if size >= n {
        return values.to_vec();
    }
    let mut rng = optimizer_rng(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    idx.iter()
        .flat_map(|&i| values[i * dim..(i + 1) * dim].iter().copied())
        .collect()
}

fn optimizer_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Kept apart from the per-permutation fitting streams.
    rng.set_stream(u64::MAX);
    rng
}

/// Runs Adam from `init` on the training matrix `values` (`n × dim`).
pub fn optimize(
    values: &[f64],
    dim: usize,
    init: &BandwidthModel,
    config: &OptimizerConfig,
) -> Result<Optimized> {
    config.validate()?;
    if dim == 0 || values.is_empty() || values.len() % dim != 0 {
        return Err(Error::contract("training data must be a non-empty n × dim matrix"));
    }
    init.validate(dim)?;
    let n = values.len() / dim;
    let shape = init.shape();
    let size = config.subsample.unwrap_or(DEFAULT_SUBSAMPLE).min(n);
    let rows = subsample_rows(values, dim, size, config.seed);
    let mut rng = optimizer_rng(config.seed.wrapping_add(1));
    let base_lr = config.learning_rate_for(&shape);

    let mut theta = init.to_unconstrained();
    let mut adam = AdamState::new(theta.len());
    let mut trace = Vec::with_capacity(config.maxiter);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut retries = 0;

    for iteration in 0..config.maxiter {
        let pairs: Vec<PermutationPair> = (0..config.permutations)
            .map(|_| {
                let mut pair = PermutationPair::identity(size, dim);
                pair.sample_order.shuffle(&mut rng);
                let free = if config.objective == Objective::Density { dim } else { dim - 1 };
                match &config.feature_order {
                    FeatureOrder::Random => pair.feature_order[..free].shuffle(&mut rng),
                    FeatureOrder::Identity => {}
                    FeatureOrder::Fixed(order) => pair.feature_order = order.clone(),
                }
                pair
            })
            .collect();

        let (value, grad) = objective_and_gradient(&theta, &rows, dim, &shape, &pairs, config.initial, config.objective)
            .map_err(|e| abort(iteration, 1, e))?;
        trace.push(value);
        if config.best_of_trace && best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, theta.clone()));
        }

        // A step that lands on a non-finite objective is redone with a smaller rate.
        let mut lr = base_lr;
        let mut attempt = 1;
        loop {
            let mut next = theta.clone();
            let mut next_adam = adam.clone();
            next_adam.step(&mut next, &grad, lr, config);
            let ok = next.iter().all(|t| t.is_finite())
                && shape.from_unconstrained(&next).is_ok()
                && objective(&next, &rows, dim, &shape, &pairs, config.initial, config.objective).is_ok();
            if ok {
                theta = next;
                adam = next_adam;
                break;
            }
            if attempt == MAX_ATTEMPTS {
                return Err(Error::OptimizationAborted {
                    iteration,
                    attempts: attempt,
                    detail: format!("no finite step from parameters {theta:?}, last rate {lr}"),
                });
            }
            attempt += 1;
            retries += 1;
            lr *= 0.5;
        }
    }

    if config.best_of_trace && config.maxiter > 0 {
        let pairs = [PermutationPair::identity(size, dim)];
        let last = objective(&theta, &rows, dim, &shape, &pairs, config.initial, config.objective)?;
        if let Some((b, params)) = best {
            let best_val = objective(&params, &rows, dim, &shape, &pairs, config.initial, config.objective)?;
            if best_val < last && b.is_finite() {
                theta = params;
            }
        }
    }
    Ok(Optimized {
        bandwidth: shape.from_unconstrained(&theta)?,
        trace,
        retries,
    })
}

fn abort(iteration: usize, attempts: usize, e: Error) -> Error {
    match e {
        Error::Contract(_) => e,
        other => Error::OptimizationAborted {
            iteration,
            attempts,
            detail: format!("{other}"),
        },
    }
}

/// Models tuned separately for each feature order, pooled at evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEnsemble {
    pub members: Vec<FittedDensityModel>,
}

impl DensityEnsemble {
    /// Log density averaged over every member permutation on the density scale.
    pub fn eval_log_density(&self, test: &[f64]) -> Result<Vec<f64>> {
        let first = self
            .members
            .first()
            .ok_or_else(|| Error::contract("ensemble has no members"))?;
        let d = first.dim();
        if test.len() % d != 0 {
            return Err(Error::contract("test matrix length is not a multiple of dim"));
        }
        let evaluators: Vec<Evaluator<'_>> = self.members.iter().map(Evaluator::new).collect();
        test.chunks_exact(d)
            .map(|x| {
                let mut all = Vec::new();
                for ev in &evaluators {
                    all.extend(ev.permutation_log_densities(x, ev.model().n())?);
                }
                Ok(math::log_mean_exp(&all))
            })
            .collect()
    }
}

/// The nested scheme: for each of `feature_orders` random feature orders, tune a
/// bandwidth under that order, then fit `fit.permutations` sample permutations
/// with the order held fixed.
pub fn fit_nested(
    values: &[f64],
    dim: usize,
    init: &BandwidthModel,
    optimizer: &OptimizerConfig,
    fit: &FitConfig,
    feature_orders: usize,
) -> Result<DensityEnsemble> {
    if feature_orders == 0 {
        return Err(Error::contract("at least one feature order is required"));
    }
    let mut members = Vec::with_capacity(feature_orders);
    for f in 0..feature_orders {
        let seed = fit.seed.wrapping_add(f as u64);
        let order = PermutationPair::generate(0, dim, seed, usize::MAX, false, &FeatureOrder::Random)?
            .feature_order;
        let opt = OptimizerConfig {
            seed,
            feature_order: FeatureOrder::Fixed(order.clone()),
            ..optimizer.clone()
        };
        let tuned = optimize(values, dim, init, &opt)?;
        let cfg = FitConfig {
            seed,
            feature_order: FeatureOrder::Fixed(order),
            ..fit.clone()
        };
        members.push(fit_matrix(values, dim, &tuned.bandwidth, &cfg)?);
    }
    Ok(DensityEnsemble { members })
}
