//! Conditional models: regression and binary classification.
//!
//! Covariate marginals are held at the initial predictive, so the covariate copula
//! product `Π_j c(Φ(x^j), Φ(x_i^j); ρ^j)` only depends on the two points. It sets the
//! weight `β_i(x, x_i) = α C / (1 - α + α C)` of a one-dimensional update of the
//! response: a Gaussian copula step on the response CDF for regression, and the
//! beta-Bernoulli factor `b` for classification.
//!
//! The bandwidth model has `d + 1` dimensions with the response last, so the
//! response correlation `ρ^{d+1}` is a kernel over all `d` covariates. Feature
//! permutations reorder the covariates only.

use alloc::format;
#[cfg(test)]
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::bandwidth::{BandwidthModel, Params, Positional};
use crate::data::Standardization;
use crate::engine::{FeatureOrder, PermutationPair, StepWeight};
use crate::error::{Error, Result};
use crate::math::{self, quantile_unchecked, Correlation, UnitInterval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Initial class probability `q₀`.
pub const INITIAL_CLASS_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub task: Task,
    pub permutations: usize,
    pub seed: u64,
    pub shuffle_samples: bool,
    /// Order of the covariates; the response always comes last.
    pub feature_order: FeatureOrder,
    /// Replaces `ρ₀` for the response dimension when set.
    pub response_rho0: Option<f64>,
}

impl SupervisedConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            permutations: crate::engine::DEFAULT_PERMUTATIONS,
            seed: 0,
            shuffle_samples: true,
            feature_order: FeatureOrder::Random,
            response_rho0: None,
        }
    }
}

/// Log of the covariate copula product for a query/observation pair.
#[inline]
fn covariate_log_c<R: Real>(a_query: &[f64], a_obs: &[f64], rhos: &[R]) -> R {
    let mut acc = R::cst(0.0);
    for j in 0..a_query.len() {
        let (lc, _) = R::copula_terms(R::cst(a_query[j]), R::cst(a_obs[j]), rhos[j]);
        acc = acc + lc;
    }
    acc
}

/// Response update for regression; returns nothing, mutates the state.
#[inline]
fn regression_absorb<R: Real>(
    u: &mut R,
    a: &mut R,
    log_p: &mut R,
    obs: R,
    rho_y: R,
    log_cx: R,
    w: &StepWeight,
) {
    let (lc, h) = R::copula_terms(*a, obs, rho_y);
    let beta = (log_cx + w.log_odds).sigmoid();
    // log(1 - β + β c) = log(1 - α + α C c) - log(1 - α + α C)
    let base = log_cx + w.ln_alpha;
    let keep = R::cst(w.ln_keep);
    *log_p = *log_p + (base + lc).ln_add_exp(keep) - base.ln_add_exp(keep);
    *u = R::mix_unit(*u, beta, h);
    *a = u.norm_quantile();
}

#[inline]
fn bern_b<R: Real>(q: R, r: R, rho: R, same_label: bool) -> R {
    let num = if same_label {
        q.min(r)
    } else {
        q - q.min(-r + 1.0)
    };
    -rho + 1.0 + rho * num / (q * r)
}

/// `(p_i(1|x), p_i(0|x))` from `q = p_{i-1}(1|x)` after observing label
/// `obs_label` whose prequential probability was `r`.
#[inline]
fn classification_update<R: Real>(q: R, r: R, beta: R, rho: R, obs_label: bool) -> (R, R) {
    let b1 = bern_b(q, r, rho, obs_label);
    let b0 = bern_b(-q + 1.0, r, rho, !obs_label);
    let keep = -beta + 1.0;
    (q * (keep + beta * b1), (-q + 1.0) * (keep + beta * b0))
}

/// The copula-like factor `b{q, r; ρ}` of the beta-Bernoulli update.
pub fn bernoulli_b(q: UnitInterval, r: UnitInterval, rho: Correlation, same_label: bool) -> f64 {
    bern_b(q.get(), r.get(), rho.get(), same_label)
}

/// One classification step on raw probabilities, for checking normalization.
pub fn classification_step(q: f64, r: f64, beta: f64, rho: f64, obs_label: bool) -> (f64, f64) {
    classification_update(q, r, beta, rho, obs_label)
}

/// `β_i(x, x_i)` in the identity covariate order. `bandwidth` may cover the
/// covariates only or the covariates plus the response.
pub fn beta_weight(x: &[f64], x_i: &[f64], bandwidth: &BandwidthModel, i: usize) -> Result<f64> {
    let d = x.len();
    if i == 0 || x_i.len() != d || d == 0 {
        return Err(Error::contract("beta weight needs 1-based i and equal-length points"));
    }
    let width = bandwidth.dim().unwrap_or(d);
    if width != d && width != d + 1 {
        return Err(Error::contract("bandwidth must cover d or d + 1 dimensions"));
    }
    bandwidth.validate(width)?;
    let pad = |v: &[f64]| {
        let mut p = v.to_vec();
        p.resize(width, 0.0);
        p
    };
    let (xq, xo) = (pad(x), pad(x_i));
    let order: Vec<usize> = (0..width).collect();
    let pos = Params::<f64>::from_model(bandwidth).positional(&order);
    let mut rhos = Vec::new();
    pos.rhos(&xq, &pos.latents(&xq), &xo, &pos.latents(&xo), &mut rhos);
    let score = |v: &[f64]| -> Vec<f64> { v.iter().map(|&t| covariate_score(t)).collect() };
    let log_cx = covariate_log_c(&score(x), &score(x_i), &rhos[..d]);
    let beta = math::sigmoid(log_cx + StepWeight::new(i).log_odds);
    if !beta.is_finite() {
        return Err(Error::NumericFault {
            step: i,
            detail: "non-finite beta weight".into(),
        });
    }
    Ok(beta)
}

#[inline]
fn covariate_score(x: f64) -> f64 {
    quantile_unchecked(math::clamp_unit(math::cdf_unchecked(x)))
}

/// Prequential sweep over `xs` (`n × (d + 1)`, covariates in position order, the
/// response last). `record(i, state, log_p)` sees point `i` before it is absorbed:
/// its response CDF (regression) or the probability of its label
/// (classification), and the log predictive of its response.
pub(crate) fn supervised_sweep<R: Real>(
    pos: &Positional<R>,
    xs: &[f64],
    d: usize,
    task: Task,
    weights: &[StepWeight],
    mut record: impl FnMut(usize, R, R),
) {
    let w = d + 1;
    let n = xs.len() / w;
    let scores: Vec<f64> = xs
        .chunks_exact(w)
        .flat_map(|r| r[..d].iter().map(|&t| covariate_score(t)))
        .collect();
    let latents: Vec<Vec<R>> = xs.chunks_exact(w).map(|r| pos.latents(r)).collect();
    let constant = pos.is_constant();
    let mut rhos = Vec::with_capacity(w);
    if constant {
        pos.rhos(&[], &[], &[], &[], &mut rhos);
    }
    let label = |k: usize| xs[k * w + d] > 0.5;

    // Regression: (u, a, log_p); classification: q in slot 0.
    let mut u = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut lp = Vec::with_capacity(n);
    for row in xs.chunks_exact(w) {
        let y = row[d];
        match task {
            Task::Regression => {
                let c = math::clamp_unit(math::cdf_unchecked(y));
                u.push(R::cst(c));
                a.push(R::cst(quantile_unchecked(c)));
                lp.push(R::cst(math::norm_log_pdf(y)));
            }
            Task::Classification => u.push(R::cst(INITIAL_CLASS_PROBABILITY)),
        }
    }

    for i in 0..n {
        let xi = &xs[i * w..(i + 1) * w];
        let (obs, r_i) = match task {
            Task::Regression => {
                record(i, u[i], lp[i]);
                (a[i], R::cst(0.0))
            }
            Task::Classification => {
                let r = if label(i) { u[i] } else { -u[i] + 1.0 };
                record(i, r, r.ln());
                (R::cst(0.0), r)
            }
        };
        for k in i + 1..n {
            if !constant {
                pos.rhos(&xs[k * w..(k + 1) * w], &latents[k], xi, &latents[i], &mut rhos);
            }
            let log_cx = covariate_log_c(&scores[k * d..(k + 1) * d], &scores[i * d..(i + 1) * d], &rhos[..d]);
            match task {
                Task::Regression => {
                    regression_absorb(&mut u[k], &mut a[k], &mut lp[k], obs, rhos[d], log_cx, &weights[i]);
                }
                Task::Classification => {
                    let beta = (log_cx + weights[i].log_odds).sigmoid();
                    u[k] = classification_update(u[k], r_i, beta, rhos[d], label(i)).0;
                }
            }
        }
    }
}

/// A fitted conditional model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedModel {
    task: Task,
    bandwidth: BandwidthModel,
    response_rho0: Option<f64>,
    n: usize,
    dim: usize,
    seed: u64,
    /// `n × (dim + 1)` rows, covariates then response, original order.
    train: Vec<f64>,
    /// Feature orders span `dim + 1` positions and always end with the response.
    permutations: Vec<PermutationPair>,
    /// `M × n`: prequential response CDFs (regression) or label probabilities
    /// (classification), in absorption order.
    state: Vec<f64>,
    /// `M × n` prequential log predictive of each response.
    prequential: Vec<f64>,
    covariate_standardization: Option<Standardization>,
    /// Response mean and standard deviation (regression).
    response_stats: Option<(f64, f64)>,
}

fn positional_for(
    bandwidth: &BandwidthModel,
    response_rho0: Option<f64>,
    order: &[usize],
) -> Positional<f64> {
    let mut params = Params::<f64>::from_model(bandwidth);
    if let Some(r) = response_rho0 {
        params.set_rho0(order.len() - 1, order.len(), r);
    }
    params.positional(order)
}

fn supervised_pairs(n: usize, d: usize, seed: u64, m: usize, cfg: &SupervisedConfig) -> Result<PermutationPair> {
    let mut pair = PermutationPair::generate(n, d, seed, m, cfg.shuffle_samples, &cfg.feature_order)?;
    pair.feature_order.push(d);
    Ok(pair)
}

/// Checks shapes and builds `n × (d + 1)` rows.
fn stack(x: &[f64], y: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || y.is_empty() || x.len() != y.len() * dim {
        return Err(Error::contract("covariates must be n × dim with one response per row"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::contract("covariates and responses must be finite"));
    }
    let mut rows = Vec::with_capacity(y.len() * (dim + 1));
    for (row, &t) in x.chunks_exact(dim).zip(y) {
        rows.extend_from_slice(row);
        rows.push(t);
    }
    Ok(rows)
}

fn fit_supervised(
    x: &[f64],
    y: &[f64],
    dim: usize,
    bandwidth: &BandwidthModel,
    config: &SupervisedConfig,
) -> Result<SupervisedModel> {
    let rows = stack(x, y, dim)?;
    if config.task == Task::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::contract("classification labels must be 0 or 1"));
    }
    if config.permutations == 0 {
        return Err(Error::contract("at least one permutation is required"));
    }
    if let Some(r) = config.response_rho0 {
        Correlation::new(r)?;
    }
    bandwidth.validate(dim + 1)?;
    let n = y.len();
    let weights = StepWeight::sequence(n);
    let mut perms = Vec::with_capacity(config.permutations);
    let mut state = Vec::with_capacity(config.permutations * n);
    let mut preq = Vec::with_capacity(config.permutations * n);
    for m in 0..config.permutations {
        let pair = supervised_pairs(n, dim, config.seed, m, config)?;
        let xs = crate::engine::permute_rows(&rows, dim + 1, &pair);
        let pos = positional_for(bandwidth, config.response_rho0, &pair.feature_order);
        supervised_sweep(&pos, &xs, dim, config.task, &weights, |_, s, lp| {
            state.push(s);
            preq.push(lp);
        });
        if let Some(k) = preq[m * n..].iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                step: k + 1,
                detail: "non-finite prequential response density".into(),
            });
        }
        perms.push(pair);
    }
    Ok(SupervisedModel {
        task: config.task,
        bandwidth: bandwidth.clone(),
        response_rho0: config.response_rho0,
        n,
        dim,
        seed: config.seed,
        train: rows,
        permutations: perms,
        state,
        prequential: preq,
        covariate_standardization: None,
        response_stats: None,
    })
}

/// Fits the conditional density of a standardized response `y` given standardized
/// covariates `x` (`n × dim`). The bandwidth covers `dim + 1` dimensions.
pub fn fit_regression(
    x: &[f64],
    y: &[f64],
    dim: usize,
    bandwidth: &BandwidthModel,
    config: &SupervisedConfig,
) -> Result<SupervisedModel> {
    fit_supervised(x, y, dim, bandwidth, &SupervisedConfig {
        task: Task::Regression,
        ..config.clone()
    })
}

/// Fits `p(y = 1 | x)` for labels in `{0, 1}`.
pub fn fit_classification(
    x: &[f64],
    y: &[f64],
    dim: usize,
    bandwidth: &BandwidthModel,
    config: &SupervisedConfig,
) -> Result<SupervisedModel> {
    fit_supervised(x, y, dim, bandwidth, &SupervisedConfig {
        task: Task::Classification,
        ..config.clone()
    })
}

/// Per-step state of one query under one permutation.
struct Replay {
    u: f64,
    a: f64,
    log_p: f64,
}

impl SupervisedModel {
    pub fn task(&self) -> Task {
        self.task
    }

    pub fn bandwidth(&self) -> &BandwidthModel {
        &self.bandwidth
    }

    pub fn response_rho0(&self) -> Option<f64> {
        self.response_rho0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn train(&self) -> &[f64] {
        &self.train
    }

    pub fn permutations(&self) -> &[PermutationPair] {
        &self.permutations
    }

    /// Flat `M × n` prequential state tensor.
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn prequential_log_densities(&self) -> &[f64] {
        &self.prequential
    }

    pub fn covariate_standardization(&self) -> Option<&Standardization> {
        self.covariate_standardization.as_ref()
    }

    pub fn response_stats(&self) -> Option<(f64, f64)> {
        self.response_stats
    }

    pub fn set_standardization(&mut self, covariates: Option<Standardization>, response: Option<(f64, f64)>) {
        self.covariate_standardization = covariates;
        self.response_stats = response;
    }

    /// Log-Jacobian taking standardized-response densities to the original scale.
    pub fn response_log_jacobian(&self) -> f64 {
        self.response_stats.map_or(0.0, |(_, sd)| -libm::log(sd))
    }

    /// Rebuilds a model from stored parts, checking shapes and ranges.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        task: Task,
        bandwidth: BandwidthModel,
        response_rho0: Option<f64>,
        dim: usize,
        seed: u64,
        train: Vec<f64>,
        permutations: Vec<PermutationPair>,
        state: Vec<f64>,
        prequential: Vec<f64>,
        covariate_standardization: Option<Standardization>,
        response_stats: Option<(f64, f64)>,
    ) -> Result<Self> {
        if dim == 0 || train.len() % (dim + 1) != 0 {
            return Err(Error::contract("training rows must have dim + 1 columns"));
        }
        let n = train.len() / (dim + 1);
        bandwidth.validate(dim + 1)?;
        if permutations.is_empty() {
            return Err(Error::contract("at least one permutation is required"));
        }
        for p in &permutations {
            p.validate(n, dim + 1)?;
            if p.feature_order[dim] != dim {
                return Err(Error::contract("the response must stay last in every feature order"));
            }
        }
        let m = permutations.len();
        if state.len() != m * n || prequential.len() != m * n {
            return Err(Error::contract(format!("state tensors must hold {} entries", m * n)));
        }
        if state.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::contract("state entries must lie in (0, 1)"));
        }
        Ok(Self {
            task,
            bandwidth,
            response_rho0,
            n,
            dim,
            seed,
            train,
            permutations,
            state,
            prequential,
            covariate_standardization,
            response_stats,
        })
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::contract(format!(
                "query has {} covariates, model expects {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("query must be finite"));
        }
        Ok(())
    }

    /// Replays permutation `m` for the query `(x, y)`; `y` is ignored for
    /// classification, where `u` carries `p(1 | x)`.
    fn replay(&self, m: usize, x: &[f64], y: f64, steps: usize) -> Result<Replay> {
        let (d, w) = (self.dim, self.dim + 1);
        let pair = &self.permutations[m];
        let pos = positional_for(&self.bandwidth, self.response_rho0, &pair.feature_order);
        let mut query = Vec::with_capacity(w);
        query.extend(pair.feature_order[..d].iter().map(|&f| x[f]));
        query.push(y);
        let zq = pos.latents(&query);
        let aq: Vec<f64> = query[..d].iter().map(|&t| covariate_score(t)).collect();
        let mut rhos = Vec::with_capacity(w);
        let mut st = match self.task {
            Task::Regression => {
                let c = math::clamp_unit(math::cdf_unchecked(y));
                Replay {
                    u: c,
                    a: quantile_unchecked(c),
                    log_p: math::norm_log_pdf(y),
                }
            }
            Task::Classification => Replay {
                u: INITIAL_CLASS_PROBABILITY,
                a: 0.0,
                log_p: 0.0,
            },
        };
        let weights = StepWeight::sequence(steps);
        let mut obs = Vec::with_capacity(w);
        for (i, wt) in weights.iter().enumerate() {
            let s = pair.sample_order[i];
            obs.clear();
            let row = &self.train[s * w..(s + 1) * w];
            obs.extend(pair.feature_order.iter().map(|&f| row[f]));
            pos.rhos(&query, &zq, &obs, &pos.latents(&obs), &mut rhos);
            let ao: Vec<f64> = obs[..d].iter().map(|&t| covariate_score(t)).collect();
            let log_cx: f64 = covariate_log_c(&aq, &ao, &rhos[..d]);
            let stored = self.state[m * self.n + i];
            match self.task {
                Task::Regression => regression_absorb(
                    &mut st.u,
                    &mut st.a,
                    &mut st.log_p,
                    quantile_unchecked(stored),
                    rhos[d],
                    log_cx,
                    wt,
                ),
                Task::Classification => {
                    let beta = math::sigmoid(log_cx + wt.log_odds);
                    st.u = classification_update(st.u, stored, beta, rhos[d], obs[d] > 0.5).0;
                }
            }
            if !st.log_p.is_finite() || !st.u.is_finite() {
                return Err(Error::NumericFault {
                    step: i + 1,
                    detail: "non-finite conditional state".into(),
                });
            }
        }
        Ok(st)
    }

    /// `log p_steps(y | x)` per permutation, on the standardized response scale.
    pub fn permutation_log_densities(&self, x: &[f64], y: f64, steps: usize) -> Result<Vec<f64>> {
        self.check_query(x)?;
        if self.task != Task::Regression {
            return Err(Error::contract("conditional densities need a regression model"));
        }
        if steps > self.n || !y.is_finite() {
            return Err(Error::contract("invalid response or step count"));
        }
        (0..self.permutations.len())
            .map(|m| Ok(self.replay(m, x, y, steps)?.log_p))
            .collect()
    }

    /// Permutation-averaged `p_steps(1 | x)`.
    pub fn class_probability_after(&self, x: &[f64], steps: usize) -> Result<f64> {
        self.check_query(x)?;
        if self.task != Task::Classification {
            return Err(Error::contract("class probabilities need a classification model"));
        }
        if steps > self.n {
            return Err(Error::contract("cannot replay more steps than training points"));
        }
        let mut total = 0.0;
        for m in 0..self.permutations.len() {
            total += self.replay(m, x, 0.0, steps)?.u;
        }
        Ok(total / self.permutations.len() as f64)
    }
}

/// `log p_n(y | x)` on the standardized response scale, averaged over permutations
/// on the density scale. Add [`SupervisedModel::response_log_jacobian`] for the
/// original scale.
pub fn predict_log_density_regression(model: &SupervisedModel, x: &[f64], y: f64) -> Result<f64> {
    Ok(math::log_mean_exp(&model.permutation_log_densities(x, y, model.n)?))
}

/// `p_n(y = 1 | x)` averaged over permutations.
pub fn predict_proba(model: &SupervisedModel, x: &[f64]) -> Result<UnitInterval> {
    UnitInterval::new(model.class_probability_after(x, model.n)?)
}

/// Mean negative conditional log-likelihood on a test set. Regression responses
/// are on the standardized scale; classification probabilities are clamped into
/// the admissible unit range.
pub fn mean_conditional_nll(model: &SupervisedModel, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = model.dim;
    if x.len() != y.len() * d || y.is_empty() {
        return Err(Error::contract("test covariates must be n × dim with one response per row"));
    }
    let mut total = 0.0;
    for (row, &t) in x.chunks_exact(d).zip(y) {
        total -= match model.task {
            Task::Regression => predict_log_density_regression(model, row, t)?,
            Task::Classification => {
                let q = predict_proba(model, row)?.get();
                libm::log(if t > 0.5 { q } else { 1.0 - q })
            }
        };
    }
    Ok(total / y.len() as f64)
}

/// Combined rows for the tuning objective: covariates then response.
pub fn training_rows(x: &[f64], y: &[f64], dim: usize) -> Result<Vec<f64>> {
    stack(x, y, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandwidth::{KernelKind, ModelKind, Rho0};
    use crate::math::norm_log_pdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(task: Task) -> SupervisedConfig {
        SupervisedConfig {
            permutations: 1,
            shuffle_samples: false,
            feature_order: FeatureOrder::Identity,
            ..SupervisedConfig::new(task)
        }
    }

    #[test]
    fn beta_at_independence_is_alpha() {
        let bw = BandwidthModel::Constant { rho0: 1e-12 };
        for i in [1, 4, 20] {
            let b = beta_weight(&[0.3, -1.0], &[2.0, 1.0], &bw, i).unwrap();
            assert!((b - math::alpha(i).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn beta_at_the_median() {
        let bw = BandwidthModel::Constant { rho0: 0.8 };
        let b = beta_weight(&[0.0], &[0.0], &bw, 1).unwrap();
        assert!((b - 0.625).abs() < 1e-14);
    }

    #[test]
    fn distant_points_get_less_than_alpha() {
        let bw = BandwidthModel::Constant { rho0: 0.7 };
        let b = beta_weight(&[2.5, -2.5], &[-2.5, 2.5], &bw, 3).unwrap();
        assert!(b < math::alpha(3).unwrap());
    }

    #[test]
    fn bernoulli_factor_examples() {
        let ui = |v| UnitInterval::new(v).unwrap();
        let b = bernoulli_b(ui(0.3), ui(0.6), Correlation::new(0.5).unwrap(), true);
        assert!((b - 4.0 / 3.0).abs() < 1e-14);
        let b = bernoulli_b(ui(0.3), ui(0.6), Correlation::new(1e-12).unwrap(), false);
        assert!((b - 1.0).abs() < 1e-11);
        let top = 1.0 - math::UNIT_EPS;
        let b = bernoulli_b(ui(top), ui(top), Correlation::new(0.9).unwrap(), true);
        assert!((b - 1.0).abs() < 1e-5);
    }

    #[test]
    fn no_data_gives_initial_predictives() {
        let bw = BandwidthModel::Constant { rho0: 0.9 };
        let reg = fit_regression(&[0.1], &[0.5], 1, &bw, &det(Task::Regression)).unwrap();
        let lp = reg.permutation_log_densities(&[1.0], -0.7, 0).unwrap();
        assert!((lp[0] - norm_log_pdf(-0.7)).abs() < 1e-14);
        let clf = fit_classification(&[0.1], &[1.0], 1, &bw, &det(Task::Classification)).unwrap();
        assert_eq!(clf.class_probability_after(&[0.4], 0).unwrap(), 0.5);
    }

    #[test]
    fn two_point_regression_matches_hand_expansion() {
        let (x, y) = ([0.3, -0.6], [1.1, -0.4]);
        let rho = 0.8;
        let bw = BandwidthModel::Constant { rho0: rho };
        let model = fit_regression(&x, &y, 1, &bw, &det(Task::Regression)).unwrap();
        let (xq, yq) = (0.1, 0.25);
        let got = predict_log_density_regression(&model, &[xq], yq).unwrap();

        let phi = math::cdf_unchecked;
        let c = |u: f64, v: f64| {
            math::copula_density(UnitInterval::new(u).unwrap(), UnitInterval::new(v).unwrap(), Correlation::new(rho).unwrap())
        };
        let h = |u: f64, v: f64| {
            math::copula_conditional_cdf(UnitInterval::new(u).unwrap(), UnitInterval::new(v).unwrap(), Correlation::new(rho).unwrap()).get()
        };
        let beta = |xa: f64, xb: f64, i: usize| {
            let a = math::alpha(i).unwrap();
            let cx = c(phi(xa), phi(xb));
            a * cx / (1.0 - a + a * cx)
        };
        // Second training point's prequential response CDF.
        let v1 = phi(y[0]);
        let b21 = beta(x[1], x[0], 1);
        let v2 = (1.0 - b21) * phi(y[1]) + b21 * h(phi(y[1]), v1);
        // Query: two updates.
        let mut u = phi(yq);
        let mut p = libm::exp(norm_log_pdf(yq));
        let b1 = beta(xq, x[0], 1);
        p *= 1.0 - b1 + b1 * c(u, v1);
        u = (1.0 - b1) * u + b1 * h(u, v1);
        let b2 = beta(xq, x[1], 2);
        p *= 1.0 - b2 + b2 * c(u, v2);
        assert!((got - libm::log(p)).abs() < 1e-12);
    }

    #[test]
    fn two_point_classification_matches_hand_expansion() {
        let (x, y) = ([0.3, -0.6], [1.0, 0.0]);
        let rho = 0.7;
        let bw = BandwidthModel::Constant { rho0: rho };
        let model = fit_classification(&x, &y, 1, &bw, &det(Task::Classification)).unwrap();
        let b = |q: f64, r: f64, same: bool| {
            let num = if same { q.min(r) } else { q - q.min(1.0 - r) };
            1.0 - rho + rho * num / (q * r)
        };
        let beta = |xa: f64, xb: f64, i: usize| {
            let a = math::alpha(i).unwrap();
            let u = |t: f64| UnitInterval::new(math::cdf_unchecked(t)).unwrap();
            let cx = math::copula_density(u(xa), u(xb), Correlation::new(rho).unwrap());
            a * cx / (1.0 - a + a * cx)
        };
        // Training point 2 (label 0) after seeing point 1 (label 1, r = 0.5).
        let bb = beta(x[1], x[0], 1);
        let q2 = 0.5 * (1.0 - bb + bb * b(0.5, 0.5, true));
        let r2 = 1.0 - q2;
        // Query.
        let xq = 0.2;
        let b1 = beta(xq, x[0], 1);
        let q = 0.5 * (1.0 - b1 + b1 * b(0.5, 0.5, true));
        let b2 = beta(xq, x[1], 2);
        let q = q * (1.0 - b2 + b2 * b(q, r2, false));
        let got = predict_proba(&model, &[xq]).unwrap().get();
        assert!((got - q).abs() < 1e-12);
        assert!((model.state()[1] - r2).abs() < 1e-12);
    }

    #[test]
    fn classification_steps_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let mut q: f64 = 0.5;
            for _ in 0..20 {
                let r: f64 = rng.random_range(0.01..0.99);
                let beta: f64 = rng.random_range(0.0..1.0);
                let rho: f64 = rng.random_range(0.01..0.99);
                let (p1, p0) = classification_step(q, r, beta, rho, rng.random());
                assert!((p1 + p0 - 1.0).abs() < 1e-12);
                q = p1;
            }
        }
    }

    #[test]
    fn confident_neighbours_raise_the_class_probability() {
        let x: Vec<f64> = (0..30).map(|k| 0.5 + 0.01 * k as f64).collect();
        let y = vec![1.0; 30];
        let bw = BandwidthModel::init(ModelKind::ArdBp, KernelKind::Rbf, 2, 0);
        let model = fit_classification(&x, &y, 1, &bw, &SupervisedConfig::new(Task::Classification)).unwrap();
        assert!(predict_proba(&model, &[0.6]).unwrap().get() > 0.5);
    }

    #[test]
    fn labels_must_be_binary() {
        let bw = BandwidthModel::Constant { rho0: 0.9 };
        let err = fit_classification(&[0.0, 1.0], &[1.0, 2.0], 1, &bw, &det(Task::Classification));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn response_override_changes_only_the_response_correlation() {
        let x = [0.3, -0.6, 1.0];
        let y = [1.1, -0.4, 0.2];
        let bw = BandwidthModel::Rbf {
            rho0: Rho0::Shared(0.9),
            length_scales: vec![1.0, 1.0],
        };
        let base = fit_regression(&x, &y, 1, &bw, &det(Task::Regression)).unwrap();
        let same = fit_regression(&x, &y, 1, &bw, &SupervisedConfig {
            response_rho0: Some(0.9),
            ..det(Task::Regression)
        })
        .unwrap();
        assert_eq!(base.prequential_log_densities(), same.prequential_log_densities());
        let other = fit_regression(&x, &y, 1, &bw, &SupervisedConfig {
            response_rho0: Some(0.5),
            ..det(Task::Regression)
        })
        .unwrap();
        assert_ne!(base.prequential_log_densities(), other.prequential_log_densities());
    }
}
