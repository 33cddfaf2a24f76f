//! The copula recursion: fitting, evaluation and permutation averaging.
//!
//! A query point carries, per dimension, its conditional CDF `u^j` under the
//! current predictive together with the normal score `Φ⁻¹(u^j)`, plus the running
//! log density. Absorbing observation `i` walks the dimensions in the active
//! feature order: with `L` the log of the copula product over earlier dimensions,
//! the CDF moves towards the copula conditional CDF `H_j` by the weight
//! `α C / (1 - α + α C)`, `C = e^L`, and the density picks up the factor
//! `1 - α + α Π_j c_j`.
//!
//! Fitting stores, for every permutation, the prequential CDFs `v_{i-1}(x_i)` of
//! each training point under the predictive built from the points before it. Test
//! time replays the same `n` updates against the stored values.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::bandwidth::{BandwidthModel, Params, Positional};
use crate::data::{Standardization, StandardizedDataset};
use crate::error::{Error, Result};
use crate::math::{self, clamp_unit, quantile_unchecked, UnitInterval};

/// Default number of permutations averaged at test time.
pub const DEFAULT_PERMUTATIONS: usize = 10;

/// Initial predictive `p₀`, a product of identical marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDensity {
    /// Standard normal marginals; the data are expected to be standardized.
    #[default]
    Normal,
    /// Uniform marginals on the unit interval.
    Uniform,
}

impl InitialDensity {
    /// Marginal CDF, clamped into the admissible unit range.
    pub fn cdf(self, x: f64) -> f64 {
        clamp_unit(match self {
            InitialDensity::Normal => math::cdf_unchecked(x),
            InitialDensity::Uniform => x.clamp(0.0, 1.0),
        })
    }

    pub fn log_pdf(self, x: f64) -> f64 {
        match self {
            InitialDensity::Normal => math::norm_log_pdf(x),
            InitialDensity::Uniform if (0.0..=1.0).contains(&x) => 0.0,
            InitialDensity::Uniform => f64::NEG_INFINITY,
        }
    }

    pub fn quantile(self, u: f64) -> f64 {
        match self {
            InitialDensity::Normal => quantile_unchecked(clamp_unit(u)),
            InitialDensity::Uniform => u.clamp(0.0, 1.0),
        }
    }

    pub fn sample<G: Rng + ?Sized>(self, rng: &mut G) -> f64 {
        match self {
            InitialDensity::Normal => StandardNormal.sample(rng),
            InitialDensity::Uniform => rng.random::<f64>(),
        }
    }

    /// Interval on which inverse-CDF search starts.
    pub fn search_bracket(self) -> (f64, f64) {
        match self {
            InitialDensity::Normal => (-10.0, 10.0),
            InitialDensity::Uniform => (0.0, 1.0),
        }
    }
}

/// How each permutation orders the features.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureOrder {
    /// A fresh random order per permutation.
    #[default]
    Random,
    /// Columns in their given order.
    Identity,
    /// The same explicit order for every permutation.
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub permutations: usize,
    pub seed: u64,
    /// Shuffle the order in which training points are absorbed.
    pub shuffle_samples: bool,
    pub feature_order: FeatureOrder,
    pub initial: InitialDensity,
    /// Keep the prequential log densities `log p_{i-1}(x_i)`.
    pub keep_prequential: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            shuffle_samples: true,
            feature_order: FeatureOrder::Random,
            initial: InitialDensity::Normal,
            keep_prequential: false,
        }
    }
}

impl FitConfig {
    /// One permutation in the given sample and feature order.
    pub fn deterministic() -> Self {
        Self {
            permutations: 1,
            shuffle_samples: false,
            feature_order: FeatureOrder::Identity,
            ..Self::default()
        }
    }
}

/// Sample and feature order used by one permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPair {
    pub sample_order: Vec<usize>,
    pub feature_order: Vec<usize>,
}

impl PermutationPair {
    pub fn identity(n: usize, d: usize) -> Self {
        Self {
            sample_order: (0..n).collect(),
            feature_order: (0..d).collect(),
        }
    }

    /// Permutation `m` of the stream keyed by `seed`.
    pub fn generate(
        n: usize,
        d: usize,
        seed: u64,
        m: usize,
        shuffle_samples: bool,
        features: &FeatureOrder,
    ) -> Result<Self> {
        let mut rng = permutation_rng(seed, m);
        let mut pair = Self::identity(n, d);
        if shuffle_samples {
            pair.sample_order.shuffle(&mut rng);
        }
        match features {
            FeatureOrder::Random => pair.feature_order.shuffle(&mut rng),
            FeatureOrder::Identity => {}
            FeatureOrder::Fixed(order) => pair.feature_order = order.clone(),
        }
        pair.validate(n, d)?;
        Ok(pair)
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        if !is_permutation(&self.sample_order, n) {
            return Err(Error::contract("sample order is not a permutation of 0..n"));
        }
        if !is_permutation(&self.feature_order, d) {
            return Err(Error::contract("feature order is not a permutation of 0..d"));
        }
        Ok(())
    }
}

/// Independent, reproducible RNG for permutation `m`.
pub fn permutation_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &k in p {
        if k >= n || seen[k] {
            return false;
        }
        seen[k] = true;
    }
    true
}

/// `α_i` in the three forms the update uses.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepWeight {
    pub(crate) log_odds: f64,
    pub(crate) ln_keep: f64,
    pub(crate) ln_alpha: f64,
}

impl StepWeight {
    /// Weight for the `i`-th absorbed observation, `i ≥ 1`.
    pub(crate) fn new(i: usize) -> Self {
        let a = math::alpha_unchecked(i);
        let ln_alpha = libm::log(a);
        let ln_keep = libm::log1p(-a);
        Self {
            log_odds: ln_alpha - ln_keep,
            ln_keep,
            ln_alpha,
        }
    }

    pub(crate) fn sequence(n: usize) -> Vec<Self> {
        (1..=n).map(Self::new).collect()
    }
}

/// Absorbs one observation with scores `obs` into a query state.
#[inline]
pub(crate) fn absorb<R: Real>(
    u: &mut [R],
    a: &mut [R],
    log_p: &mut R,
    obs: &[R],
    rhos: &[R],
    w: &StepWeight,
) {
    let mut log_c = R::cst(0.0);
    for j in 0..u.len() {
        let (lc, h) = R::copula_terms(a[j], obs[j], rhos[j]);
        let mix = (log_c + w.log_odds).sigmoid();
        u[j] = R::mix_unit(u[j], mix, h);
        a[j] = u[j].norm_quantile();
        log_c = log_c + lc;
    }
    *log_p = *log_p + (log_c + w.ln_alpha).ln_add_exp(R::cst(w.ln_keep));
}

/// Runs the prequential recursion over `xs` (rows in absorption order, columns in
/// position order). `record(i, u, log_p)` sees point `i`'s CDFs and log density
/// under the predictive built from points `0..i`, just before it is absorbed.
pub(crate) fn sweep<R: Real>(
    pos: &Positional<R>,
    xs: &[f64],
    d: usize,
    init: InitialDensity,
    weights: &[StepWeight],
    mut record: impl FnMut(usize, &[R], R),
) {
    let n = xs.len() / d;
    let mut u = Vec::with_capacity(n * d);
    let mut a = Vec::with_capacity(n * d);
    let mut lp = Vec::with_capacity(n);
    for row in xs.chunks_exact(d) {
        let mut l = 0.0;
        for &x in row {
            let c = init.cdf(x);
            u.push(R::cst(c));
            a.push(R::cst(quantile_unchecked(c)));
            l += init.log_pdf(x);
        }
        lp.push(R::cst(l));
    }
    let latents: Vec<Vec<R>> = xs.chunks_exact(d).map(|r| pos.latents(r)).collect();
    let constant = pos.is_constant();
    let mut rhos = Vec::with_capacity(d);
    if constant {
        pos.rhos(&[], &[], &[], &[], &mut rhos);
    }
    for i in 0..n {
        record(i, &u[i * d..(i + 1) * d], lp[i]);
        let (head, tail) = a.split_at_mut((i + 1) * d);
        let obs = &head[i * d..];
        let xi = &xs[i * d..(i + 1) * d];
        for k in i + 1..n {
            if !constant {
                pos.rhos(&xs[k * d..(k + 1) * d], &latents[k], xi, &latents[i], &mut rhos);
            }
            let off = (k - i - 1) * d;
            absorb(
                &mut u[k * d..(k + 1) * d],
                &mut tail[off..off + d],
                &mut lp[k],
                obs,
                &rhos,
                &weights[i],
            );
        }
    }
}

/// Rows of `values` reordered by `pair` (samples) and re-indexed into positions.
pub(crate) fn permute_rows(values: &[f64], d: usize, pair: &PermutationPair) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for &s in &pair.sample_order {
        let row = &values[s * d..(s + 1) * d];
        out.extend(pair.feature_order.iter().map(|&f| row[f]));
    }
    out
}

/// Conditional CDFs and log density of one query point under one permutation.
///
/// `u` is stored in the permutation's position order.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    u: Vec<f64>,
    scores: Vec<f64>,
    log_p: f64,
    x_pos: Vec<f64>,
    latents: Vec<f64>,
    steps: usize,
}

impl QueryState {
    /// State of `x` (already in position order) under the initial predictive.
    pub fn initial(x: &[f64], init: InitialDensity) -> Self {
        let mut u = Vec::with_capacity(x.len());
        let mut scores = Vec::with_capacity(x.len());
        let mut log_p = 0.0;
        for &xj in x {
            let c = init.cdf(xj);
            u.push(c);
            scores.push(quantile_unchecked(c));
            log_p += init.log_pdf(xj);
        }
        Self {
            u,
            scores,
            log_p,
            x_pos: x.to_vec(),
            latents: Vec::new(),
            steps: 0,
        }
    }

    /// Conditional CDFs `u^j` in position order.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn cdf(&self, j: usize) -> UnitInterval {
        UnitInterval::new(self.u[j]).expect("state CDFs are finite")
    }

    pub fn log_p(&self) -> f64 {
        self.log_p
    }

    /// Number of observations absorbed so far.
    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Applies the update for the `i`-th observation (1-based) in the identity
/// feature order. `v_row` holds the observation's prequential CDFs.
pub fn update_step(
    state: &QueryState,
    x_query: &[f64],
    x_i: &[f64],
    i: usize,
    bandwidth: &BandwidthModel,
    v_row: &[UnitInterval],
) -> Result<QueryState> {
    let d = state.u.len();
    if i == 0 {
        return Err(Error::contract("step index is 1-based"));
    }
    if x_query.len() != d || x_i.len() != d || v_row.len() != d {
        return Err(Error::contract("update arguments must all have the state's dimension"));
    }
    bandwidth.validate(d)?;
    let order: Vec<usize> = (0..d).collect();
    let pos = Params::<f64>::from_model(bandwidth).positional(&order);
    let mut rhos = Vec::with_capacity(d);
    pos.rhos(x_query, &pos.latents(x_query), x_i, &pos.latents(x_i), &mut rhos);
    let obs: Vec<f64> = v_row.iter().map(|v| v.score()).collect();
    let mut next = state.clone();
    next.x_pos = x_query.to_vec();
    absorb(
        &mut next.u,
        &mut next.scores,
        &mut next.log_p,
        &obs,
        &rhos,
        &StepWeight::new(i),
    );
    next.steps += 1;
    if !next.log_p.is_finite() || next.u.iter().any(|u| !u.is_finite()) {
        return Err(fault(i, "non-finite state after update"));
    }
    Ok(next)
}

fn fault(step: usize, detail: &str) -> Error {
    Error::NumericFault {
        step,
        detail: detail.into(),
    }
}

/// A fitted predictive: bandwidth, permutations and prequential CDFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDensityModel {
    bandwidth: BandwidthModel,
    n: usize,
    dim: usize,
    initial: InitialDensity,
    seed: u64,
    /// Training rows in their original order, `n × dim`.
    train: Vec<f64>,
    permutations: Vec<PermutationPair>,
    /// `M × n × dim`; `v[m][i][p]` is in permutation `m`'s absorption and position order.
    v: Vec<f64>,
    /// `M × n` prequential log densities, when requested.
    prequential: Option<Vec<f64>>,
    standardization: Option<Standardization>,
}

impl FittedDensityModel {
    pub fn bandwidth(&self) -> &BandwidthModel {
        &self.bandwidth
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_permutations(&self) -> usize {
        self.permutations.len()
    }

    pub fn permutations(&self) -> &[PermutationPair] {
        &self.permutations
    }

    pub fn initial(&self) -> InitialDensity {
        self.initial
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn train(&self) -> &[f64] {
        &self.train
    }

    /// Flat `M × n × dim` prequential CDF tensor.
    pub fn v_tensor(&self) -> &[f64] {
        &self.v
    }

    /// `v_{i-1}^{j}` of the `i`-th absorbed point (0-based `i`) at position `p`.
    pub fn v(&self, m: usize, i: usize, p: usize) -> UnitInterval {
        UnitInterval::new(self.v[(m * self.n + i) * self.dim + p]).expect("stored CDFs are finite")
    }

    /// `M × n` prequential log densities, in absorption order.
    pub fn prequential_log_densities(&self) -> Option<&[f64]> {
        self.prequential.as_deref()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn set_standardization(&mut self, s: Option<Standardization>) {
        self.standardization = s;
    }

    /// Whether every permutation uses the same feature order.
    pub fn shares_feature_order(&self) -> bool {
        self.permutations
            .windows(2)
            .all(|w| w[0].feature_order == w[1].feature_order)
    }

    /// Rebuilds a model from stored parts, checking every shape and range.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        bandwidth: BandwidthModel,
        dim: usize,
        initial: InitialDensity,
        seed: u64,
        train: Vec<f64>,
        permutations: Vec<PermutationPair>,
        v: Vec<f64>,
        prequential: Option<Vec<f64>>,
        standardization: Option<Standardization>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("dimension must be positive"));
        }
        if train.len() % dim != 0 {
            return Err(Error::contract("training matrix length is not a multiple of dim"));
        }
        let n = train.len() / dim;
        bandwidth.validate(dim)?;
        if permutations.is_empty() {
            return Err(Error::contract("at least one permutation is required"));
        }
        for p in &permutations {
            p.validate(n, dim)?;
        }
        let m = permutations.len();
        if v.len() != m * n * dim {
            return Err(Error::contract(format!(
                "v tensor has {} entries, expected {}",
                v.len(),
                m * n * dim
            )));
        }
        if v.iter().any(|&x| !(math::UNIT_EPS..=1.0 - math::UNIT_EPS).contains(&x)) {
            return Err(Error::contract("v tensor entries must lie in the clamped unit range"));
        }
        if let Some(p) = &prequential {
            if p.len() != m * n {
                return Err(Error::contract("prequential densities must be M × n"));
            }
        }
        if train.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("training values must be finite"));
        }
        Ok(Self {
            bandwidth,
            n,
            dim,
            initial,
            seed,
            train,
            permutations,
            v,
            prequential,
            standardization,
        })
    }
}

/// Fits the predictive to a standardized dataset.
pub fn fit(
    data: &StandardizedDataset,
    bandwidth: &BandwidthModel,
    config: &FitConfig,
) -> Result<FittedDensityModel> {
    let mut model = fit_matrix(data.values(), data.dim(), bandwidth, config)?;
    model.standardization = Some(data.standardization().clone());
    Ok(model)
}

/// Fits the predictive to `values` (`n × dim`, row-major, already standardized).
pub fn fit_matrix(
    values: &[f64],
    dim: usize,
    bandwidth: &BandwidthModel,
    config: &FitConfig,
) -> Result<FittedDensityModel> {
    if dim == 0 || values.is_empty() || values.len() % dim != 0 {
        return Err(Error::contract("training data must be a non-empty n × dim matrix"));
    }
    if config.permutations == 0 {
        return Err(Error::contract("at least one permutation is required"));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("training values must be finite"));
    }
    if config.initial == InitialDensity::Uniform && values.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::contract("uniform initial density needs data in [0, 1]"));
    }
    bandwidth.validate(dim)?;
    let n = values.len() / dim;
    let weights = StepWeight::sequence(n);
    let params = Params::<f64>::from_model(bandwidth);
    let mut perms = Vec::with_capacity(config.permutations);
    let mut v = Vec::with_capacity(config.permutations * n * dim);
    let mut preq = Vec::with_capacity(config.permutations * n);
    for m in 0..config.permutations {
        let pair = PermutationPair::generate(
            n,
            dim,
            config.seed,
            m,
            config.shuffle_samples,
            &config.feature_order,
        )?;
        let xs = permute_rows(values, dim, &pair);
        let pos = params.positional(&pair.feature_order);
        let mut bad = None;
        sweep(&pos, &xs, dim, config.initial, &weights, |i, u, lp| {
            if bad.is_none() && !lp.is_finite() {
                bad = Some(i + 1);
            }
            v.extend_from_slice(u);
            preq.push(lp);
        });
        if let Some(step) = bad {
            return Err(fault(step, "non-finite prequential density"));
        }
        perms.push(pair);
    }
    Ok(FittedDensityModel {
        bandwidth: bandwidth.clone(),
        n,
        dim,
        initial: config.initial,
        seed: config.seed,
        train: values.to_vec(),
        permutations: perms,
        v,
        prequential: config.keep_prequential.then_some(preq),
        standardization: None,
    })
}

/// `-Σ log p_{i-1}(x_i)` over `values` absorbed in the order given by `pair`.
pub fn prequential_nll(
    values: &[f64],
    dim: usize,
    bandwidth: &BandwidthModel,
    pair: &PermutationPair,
    initial: InitialDensity,
) -> Result<f64> {
    if dim == 0 || values.is_empty() || values.len() % dim != 0 {
        return Err(Error::contract("subset must be a non-empty n × dim matrix"));
    }
    bandwidth.validate(dim)?;
    let n = values.len() / dim;
    pair.validate(n, dim)?;
    let xs = permute_rows(values, dim, pair);
    let pos = Params::<f64>::from_model(bandwidth).positional(&pair.feature_order);
    let mut total = 0.0;
    sweep(&pos, &xs, dim, initial, &StepWeight::sequence(n), |_, _, lp| total -= lp);
    if !total.is_finite() {
        return Err(fault(n, "non-finite prequential likelihood"));
    }
    Ok(total)
}

/// Log predictive density of each row of `test` (`n' × dim`), averaged over
/// permutations on the density scale.
pub fn eval_log_density(model: &FittedDensityModel, test: &[f64]) -> Result<Vec<f64>> {
    let ev = Evaluator::new(model);
    if test.len() % model.dim != 0 {
        return Err(Error::contract(format!(
            "test matrix length {} is not a multiple of dim {}",
            test.len(),
            model.dim
        )));
    }
    test.chunks_exact(model.dim).map(|x| ev.log_density(x)).collect()
}

struct PermView {
    order: Vec<usize>,
    pos: Positional<f64>,
    xs: Vec<f64>,
    scores: Vec<f64>,
    latents: Vec<Vec<f64>>,
}

/// A fitted model prepared for repeated evaluation.
pub struct Evaluator<'m> {
    model: &'m FittedDensityModel,
    views: Vec<PermView>,
    weights: Vec<StepWeight>,
}

impl<'m> Evaluator<'m> {
    pub fn new(model: &'m FittedDensityModel) -> Self {
        let d = model.dim;
        let params = Params::<f64>::from_model(&model.bandwidth);
        let views = model
            .permutations
            .iter()
            .enumerate()
            .map(|(m, pair)| {
                let xs = permute_rows(&model.train, d, pair);
                let pos = params.positional(&pair.feature_order);
                let latents = xs.chunks_exact(d).map(|r| pos.latents(r)).collect();
                let block = &model.v[m * model.n * d..(m + 1) * model.n * d];
                PermView {
                    order: pair.feature_order.clone(),
                    pos,
                    xs,
                    scores: block.iter().map(|&v| quantile_unchecked(v)).collect(),
                    latents,
                }
            })
            .collect();
        Self {
            model,
            views,
            weights: StepWeight::sequence(model.n),
        }
    }

    pub fn model(&self) -> &FittedDensityModel {
        self.model
    }

    /// Initial state of `x` (original feature order) under permutation `m`.
    pub fn init_state(&self, m: usize, x: &[f64]) -> QueryState {
        let view = &self.views[m];
        let x_pos: Vec<f64> = view.order.iter().map(|&f| x[f]).collect();
        let mut state = QueryState::initial(&x_pos, self.model.initial);
        state.latents = view.pos.latents(&x_pos);
        state
    }

    /// Absorbs the next training point of permutation `m` into `state`, touching
    /// only the first `dims` positions.
    pub fn advance(&self, m: usize, state: &mut QueryState, dims: usize) -> Result<()> {
        let d = self.model.dim;
        let i = state.steps;
        if i >= self.model.n {
            return Err(Error::contract("state has already absorbed every training point"));
        }
        if state.log_p == f64::NEG_INFINITY {
            state.steps += 1;
            return Ok(());
        }
        let view = &self.views[m];
        let mut rhos = Vec::with_capacity(d);
        view.pos.rhos(
            &state.x_pos,
            &state.latents,
            &view.xs[i * d..(i + 1) * d],
            &view.latents[i],
            &mut rhos,
        );
        absorb(
            &mut state.u[..dims],
            &mut state.scores[..dims],
            &mut state.log_p,
            &view.scores[i * d..i * d + dims],
            &rhos[..dims],
            &self.weights[i],
        );
        state.steps += 1;
        if !state.log_p.is_finite() {
            return Err(fault(i + 1, "non-finite log density"));
        }
        Ok(())
    }

    /// State of `x` under permutation `m` after `steps` updates, restricted to the
    /// first `dims` positions (the marginal of that prefix).
    pub fn replay(&self, m: usize, x: &[f64], steps: usize, dims: usize) -> Result<QueryState> {
        self.check_query(x, steps)?;
        if dims == 0 || dims > self.model.dim {
            return Err(Error::contract("dims must lie in 1..=dim"));
        }
        let mut state = self.init_state(m, x);
        if dims < self.model.dim {
            state.log_p = state.x_pos[..dims]
                .iter()
                .map(|&v| self.model.initial.log_pdf(v))
                .sum();
        }
        for _ in 0..steps {
            self.advance(m, &mut state, dims)?;
        }
        Ok(state)
    }

    fn check_query(&self, x: &[f64], steps: usize) -> Result<()> {
        if x.len() != self.model.dim {
            return Err(Error::contract(format!(
                "query has {} coordinates, model expects {}",
                x.len(),
                self.model.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("query must be finite"));
        }
        if steps > self.model.n {
            return Err(Error::contract("cannot replay more steps than training points"));
        }
        Ok(())
    }

    /// `log p^{(m)}_{steps}(x)` for every permutation.
    pub fn permutation_log_densities(&self, x: &[f64], steps: usize) -> Result<Vec<f64>> {
        (0..self.views.len())
            .map(|m| Ok(self.replay(m, x, steps, self.model.dim)?.log_p))
            .collect()
    }

    /// Permutation-averaged `log p_{steps}(x)`.
    pub fn log_density_after(&self, x: &[f64], steps: usize) -> Result<f64> {
        Ok(math::log_mean_exp(&self.permutation_log_densities(x, steps)?))
    }

    /// Permutation-averaged `log p_n(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_density_after(x, self.model.n)
    }

    /// `P_steps(x^{f} ≤ x^f | earlier coordinates)` for the feature `f` at
    /// position `p`, mixing permutations by their prefix marginals. Needs a shared
    /// feature order unless `p = 0` with one permutation.
    pub fn conditional_cdf(&self, x: &[f64], p: usize, steps: usize) -> Result<f64> {
        if p >= self.model.dim {
            return Err(Error::contract("position out of range"));
        }
        if !self.model.shares_feature_order() {
            return Err(Error::contract(
                "conditional CDFs need every permutation to share one feature order",
            ));
        }
        let mut logw = Vec::with_capacity(self.views.len());
        let mut cdfs = Vec::with_capacity(self.views.len());
        for m in 0..self.views.len() {
            let state = self.replay(m, x, steps, p + 1)?;
            let prefix = if p == 0 {
                0.0
            } else {
                self.replay(m, x, steps, p)?.log_p
            };
            logw.push(prefix);
            cdfs.push(state.u[p]);
        }
        let hi = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (lw, c) in logw.iter().zip(&cdfs) {
            let w = libm::exp(lw - hi);
            num += w * c;
            den += w;
        }
        Ok(num / den)
    }

    /// Feature order shared by all permutations, if any.
    pub fn shared_feature_order(&self) -> Option<&[usize]> {
        self.model
            .shares_feature_order()
            .then(|| self.views[0].order.as_slice())
    }
}
