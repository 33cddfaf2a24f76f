//! Drawing samples from a fitted predictive.
//!
//! Inverse-CDF sampling bisects the (conditional) CDF of each coordinate. Importance
//! sampling weights draws from the initial predictive by `p_n / p₀`. Sequential Monte
//! Carlo moves the same draws through `p₁, …, p_n`, reweighting by `p_i / p_{i-1}`
//! and resampling whenever the effective sample size falls below half the particle
//! count.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Evaluator, FittedDensityModel, QueryState};
use crate::error::{Error, Result};
use crate::math::{self, UnitInterval};

/// Default particle count.
pub const DEFAULT_PARTICLES: usize = 1000;
/// Target accuracy of inverse-CDF search in probability.
pub const INVERSE_TOL: f64 = 1e-6;
const MAX_EXPANSIONS: usize = 12;
const MAX_BISECTIONS: usize = 200;

/// Weighted particles, row-major `B × d` in the original feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub particles: Vec<f64>,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub ess: f64,
    /// Steps (1-based) after which the particles were resampled.
    pub resample_steps: Vec<usize>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn particle(&self, k: usize) -> &[f64] {
        &self.particles[k * self.dim..(k + 1) * self.dim]
    }

    /// Weights scaled to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    /// Weighted mean of each coordinate.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let w = self.normalized_weights();
        let mut mean = vec![0.0; self.dim];
        for (k, wk) in w.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(self.particle(k)) {
                *m += wk * x;
            }
        }
        mean
    }
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::contract("weights must be finite and nonnegative"));
    }
    let hi = weights.iter().copied().fold(0.0, f64::max);
    if hi == 0.0 {
        return Err(Error::contract("weights must not all be zero"));
    }
    let (s, s2) = weights
        .iter()
        .fold((0.0, 0.0), |(s, s2), w| (s + w / hi, s2 + (w / hi) * (w / hi)));
    Ok(s * s / s2)
}

/// Smallest `x` (to the tolerance) with `cdf(x) ≥ u`, by bracket doubling and
/// bisection.
fn invert(cdf: impl Fn(f64) -> Result<f64>, u: f64, bracket: (f64, f64)) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    let mut width = hi - lo;
    let mut expansions = 0;
    while cdf(lo)? > u {
        if expansions == MAX_EXPANSIONS {
            return Err(Error::Sampling {
                iteration: 0,
                detail: format!("no lower bracket for u = {u} down to x = {lo}"),
            });
        }
        hi = lo;
        lo -= width;
        width *= 2.0;
        expansions += 1;
    }
    width = hi - lo;
    while cdf(hi)? < u {
        if expansions == MAX_EXPANSIONS {
            return Err(Error::Sampling {
                iteration: 0,
                detail: format!("no upper bracket for u = {u} up to x = {hi}"),
            });
        }
        lo = hi;
        hi += width;
        width *= 2.0;
        expansions += 1;
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let c = cdf(mid)?;
        if (c - u).abs() <= INVERSE_TOL * 1e-3 || mid == lo || mid == hi {
            return Ok(mid);
        }
        if c < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `P_n⁻¹(u)` for a one-dimensional model.
pub fn inverse_sample_1d(model: &FittedDensityModel, u: UnitInterval) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::contract("inverse_sample_1d needs a one-dimensional model"));
    }
    Ok(inverse_sample(model, &[u])?[0])
}

/// Coordinate-wise inversion of the conditional CDFs. `u[p]` drives the feature at
/// position `p` of the shared feature order; the result is in the original order.
pub fn inverse_sample(model: &FittedDensityModel, u: &[UnitInterval]) -> Result<Vec<f64>> {
    let d = model.dim();
    if u.len() != d {
        return Err(Error::contract(format!("expected {d} uniforms, got {}", u.len())));
    }
    let eval = Evaluator::new(model);
    let order: Vec<usize> = eval
        .shared_feature_order()
        .ok_or_else(|| {
            Error::contract("inverse sampling needs every permutation to share one feature order")
        })?
        .to_vec();
    let mut x = vec![0.0; d];
    for (p, &f) in order.iter().enumerate() {
        let target = u[p].get();
        let cdf = |t: f64| {
            let mut probe = x.clone();
            probe[f] = t;
            eval.conditional_cdf(&probe, p, model.n())
        };
        x[f] = invert(cdf, target, model.initial().search_bracket())?;
    }
    Ok(x)
}

/// How SMC treats the permutations of the fitted model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmcPooling {
    /// One pass targeting the permutation-averaged predictives `p̄_i`.
    #[default]
    Averaged,
    /// One pass per permutation on its own `p_i^{(m)}`, particles split evenly and
    /// pooled with equal mass per pass.
    PerPermutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub particles: usize,
    pub seed: u64,
    pub resample: bool,
    /// Systematic instead of multinomial resampling.
    pub systematic: bool,
    /// Resample when `ESS < threshold · B`.
    pub threshold: f64,
    pub pooling: SmcPooling,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: DEFAULT_PARTICLES,
            seed: 0,
            resample: true,
            systematic: false,
            threshold: 0.5,
            pooling: SmcPooling::Averaged,
        }
    }
}

fn sampler_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn draw_initial(model: &FittedDensityModel, b: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..b * model.dim()).map(|_| model.initial().sample(rng)).collect()
}

/// Indices of `b` particles drawn with replacement in proportion to `weights`.
fn resample_indices(weights: &[f64], b: usize, systematic: bool, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if systematic {
        let total: f64 = weights.iter().sum();
        let start: f64 = rng.random::<f64>() / b as f64;
        let mut out = Vec::with_capacity(b);
        let (mut k, mut acc) = (0, weights[0] / total);
        for s in 0..b {
            let target = start + s as f64 / b as f64;
            while acc < target && k + 1 < weights.len() {
                k += 1;
                acc += weights[k] / total;
            }
            out.push(k);
        }
        return Ok(out);
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::Sampling {
        iteration: 0,
        detail: format!("cannot resample: {e}"),
    })?;
    Ok((0..b).map(|_| dist.sample(rng)).collect())
}

/// Weights from log weights, scaled so the largest is one.
fn exp_weights(log_w: &[f64], step: usize) -> Result<Vec<f64>> {
    let hi = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return Err(Error::Sampling {
            iteration: step,
            detail: "all particle weights vanished".into(),
        });
    }
    Ok(log_w.iter().map(|l| libm::exp(l - hi)).collect())
}

/// Draws from `p₀` weighted by `p_n / p₀`, before any resampling.
pub fn importance_weights(model: &FittedDensityModel, particles: usize, seed: u64) -> Result<ParticleSet> {
    if particles == 0 {
        return Err(Error::contract("at least one particle is required"));
    }
    let d = model.dim();
    let mut rng = sampler_rng(seed);
    let z = draw_initial(model, particles, &mut rng);
    let eval = Evaluator::new(model);
    let mut log_w = Vec::with_capacity(particles);
    for x in z.chunks_exact(d) {
        let lp0: f64 = x.iter().map(|&t| model.initial().log_pdf(t)).sum();
        log_w.push(eval.log_density(x)? - lp0);
    }
    let weights = exp_weights(&log_w, model.n())?;
    Ok(ParticleSet {
        ess: effective_sample_size(&weights)?,
        particles: z,
        dim: d,
        weights,
        resample_steps: Vec::new(),
    })
}

/// Importance sampling followed by one multinomial resampling pass; the result is
/// equally weighted.
pub fn importance_sample(model: &FittedDensityModel, particles: usize, seed: u64) -> Result<ParticleSet> {
    let weighted = importance_weights(model, particles, seed)?;
    // The stream continues past the proposal draws.
    let mut rng = sampler_rng(seed);
    let _ = draw_initial(model, particles, &mut rng);
    let idx = resample_indices(&weighted.weights, particles, false, &mut rng)?;
    let d = model.dim();
    let particles_out = idx
        .iter()
        .flat_map(|&k| weighted.particles[k * d..(k + 1) * d].iter().copied())
        .collect();
    Ok(ParticleSet {
        particles: particles_out,
        dim: d,
        weights: vec![1.0; particles],
        ess: particles as f64,
        resample_steps: vec![model.n()],
    })
}

/// Sequential Monte Carlo through the predictive sequence.
pub fn smc_sample(model: &FittedDensityModel, config: &SmcConfig) -> Result<ParticleSet> {
    if config.particles < 2 {
        return Err(Error::contract("SMC needs at least two particles"));
    }
    if !(config.threshold > 0.0 && config.threshold <= 1.0) {
        return Err(Error::contract("resampling threshold must lie in (0, 1]"));
    }
    let eval = Evaluator::new(model);
    let mut rng = sampler_rng(config.seed);
    let z = draw_initial(model, config.particles, &mut rng);
    match config.pooling {
        SmcPooling::Averaged => {
            let perms: Vec<usize> = (0..model.num_permutations()).collect();
            let run = smc_pass(&eval, z, &perms, config, &mut rng)?;
            Ok(run.into_set(model.dim()))
        }
        SmcPooling::PerPermutation => {
            let m_total = model.num_permutations();
            let d = model.dim();
            let (b, mut start) = (config.particles, 0);
            let mut pooled = PassResult::default();
            for m in 0..m_total {
                let count = b / m_total + usize::from(m < b % m_total);
                if count == 0 {
                    continue;
                }
                let chunk = z[start * d..(start + count) * d].to_vec();
                start += count;
                let mut run = smc_pass(&eval, chunk, &[m], config, &mut rng)?;
                // Equal mass per particle slot, so each pass carries `count / B`.
                let mean = run.weights.iter().sum::<f64>() / count as f64;
                run.weights.iter_mut().for_each(|w| *w /= mean);
                pooled.particles.extend(run.particles);
                pooled.weights.extend(run.weights);
                pooled.resample_steps.extend(run.resample_steps);
            }
            pooled.resample_steps.sort_unstable();
            pooled.resample_steps.dedup();
            Ok(pooled.into_set(d))
        }
    }
}

#[derive(Default)]
struct PassResult {
    particles: Vec<f64>,
    weights: Vec<f64>,
    resample_steps: Vec<usize>,
}

impl PassResult {
    fn into_set(self, dim: usize) -> ParticleSet {
        let ess = effective_sample_size(&self.weights).unwrap_or(0.0);
        ParticleSet {
            particles: self.particles,
            dim,
            weights: self.weights,
            ess,
            resample_steps: self.resample_steps,
        }
    }
}

/// Log of the mean density over the given permutation states.
fn mixture_log_p(states: &[QueryState]) -> f64 {
    let lps: Vec<f64> = states.iter().map(QueryState::log_p).collect();
    math::log_mean_exp(&lps)
}

fn smc_pass(
    eval: &Evaluator<'_>,
    z: Vec<f64>,
    perms: &[usize],
    config: &SmcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PassResult> {
    let model = eval.model();
    let d = model.dim();
    let b = z.len() / d;
    let mut states: Vec<Vec<QueryState>> = z
        .chunks_exact(d)
        .map(|x| perms.iter().map(|&m| eval.init_state(m, x)).collect())
        .collect();
    let mut prev: Vec<f64> = states.iter().map(|s| mixture_log_p(s)).collect();
    let mut log_w = vec![0.0; b];
    let mut particles = z;
    let mut resample_steps = Vec::new();

    for step in 1..=model.n() {
        for k in 0..b {
            for (state, &m) in states[k].iter_mut().zip(perms) {
                eval.advance(m, state, d).map_err(|e| Error::Sampling {
                    iteration: step,
                    detail: format!("{e}"),
                })?;
            }
            let now = mixture_log_p(&states[k]);
            log_w[k] += now - prev[k];
            prev[k] = now;
        }
        let weights = exp_weights(&log_w, step)?;
        if config.resample && effective_sample_size(&weights)? < config.threshold * b as f64 {
            let idx = resample_indices(&weights, b, config.systematic, rng)?;
            particles = idx
                .iter()
                .flat_map(|&k| particles[k * d..(k + 1) * d].iter().copied())
                .collect();
            states = idx.iter().map(|&k| states[k].clone()).collect();
            prev = idx.iter().map(|&k| prev[k]).collect();
            log_w.iter_mut().for_each(|w| *w = 0.0);
            resample_steps.push(step);
        }
    }
    Ok(PassResult {
        particles,
        weights: exp_weights(&log_w, model.n())?,
        resample_steps,
    })
}
