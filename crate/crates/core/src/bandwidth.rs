//! Bandwidth parameterizations.
//!
//! Every variant produces, for dimension `j` (in the active feature order), a copula
//! correlation `ρ^j = ρ₀^j · k(prefix, prefix')` where the prefixes are the first
//! `j - 1` coordinates of the two points being compared and `k ∈ (0, 1]`. The
//! first dimension always gets `ρ₀`.
//!
//! Per-dimension quantities (`ρ₀` for the `_d` variants, length scales, network
//! input columns and output rows) are keyed by *original* feature index, so the
//! same parameters stay meaningful under any feature permutation. This is also why
//! kernels carry `d` length scales: any feature can end up inside a prefix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::math::{Correlation, RHO_MAX};

/// Hidden width of the autoregressive bandwidth network.
pub const NET_HIDDEN: usize = 16;
/// Width of each latent row produced by the network.
pub const NET_LATENT: usize = 4;

/// Default initial `ρ₀`.
pub const DEFAULT_RHO0: f64 = 0.9;

/// Model family, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    RBp,
    RdBp,
    ArBp,
    ArdBp,
    ArnetBp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RBp => "r-bp",
            ModelKind::RdBp => "rd-bp",
            ModelKind::ArBp => "ar-bp",
            ModelKind::ArdBp => "ard-bp",
            ModelKind::ArnetBp => "arnet-bp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "r-bp" => ModelKind::RBp,
            "rd-bp" => ModelKind::RdBp,
            "ar-bp" => ModelKind::ArBp,
            "ard-bp" => ModelKind::ArdBp,
            "arnet-bp" => ModelKind::ArnetBp,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    Rbf,
    Rq,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Rq => "rq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rbf" => Some(KernelKind::Rbf),
            "rq" => Some(KernelKind::Rq),
            _ => None,
        }
    }
}

/// `ρ₀` shared across dimensions or one per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rho0 {
    Shared(f64),
    PerDim(Vec<f64>),
}

impl Rho0 {
    fn values(&self) -> &[f64] {
        match self {
            Rho0::Shared(v) => core::slice::from_ref(v),
            Rho0::PerDim(v) => v,
        }
    }
}

/// Weights of the masked autoregressive embedder.
///
/// Row `j` of the latent matrix is `V_j · tanh(b + Σ_{κ<j} W[:, κ] x^κ)`, so it only
/// sees coordinates strictly before `j`; row 1 is `V_1 · tanh(b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArNetWeights {
    pub dim: usize,
    pub hidden: usize,
    pub latent: usize,
    /// `hidden × dim`, row-major.
    pub w: Vec<f64>,
    /// `hidden`.
    pub b: Vec<f64>,
    /// `dim × latent × hidden`, row-major.
    pub v: Vec<f64>,
}

impl ArNetWeights {
    pub fn zeros(dim: usize, hidden: usize, latent: usize) -> Self {
        Self {
            dim,
            hidden,
            latent,
            w: vec![0.0; hidden * dim],
            b: vec![0.0; hidden],
            v: vec![0.0; dim * latent * hidden],
        }
    }

    /// Truncated normal (two standard deviations) with variance `1 / fan_in`, zero bias.
    pub fn init(dim: usize, hidden: usize, latent: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Self::zeros(dim, hidden, latent);
        let w_sd = 1.0 / libm::sqrt(dim.max(1) as f64);
        let v_sd = 1.0 / libm::sqrt(hidden as f64);
        for w in &mut weights.w {
            *w = truncated_normal(&mut rng) * w_sd;
        }
        for v in &mut weights.v {
            *v = truncated_normal(&mut rng) * v_sd;
        }
        weights
    }

    fn check(&self) -> Result<()> {
        if self.w.len() != self.hidden * self.dim
            || self.b.len() != self.hidden
            || self.v.len() != self.dim * self.latent * self.hidden
        {
            return Err(Error::contract("network weight shapes disagree with dim/hidden/latent"));
        }
        if self.w.iter().chain(&self.b).chain(&self.v).any(|x| !x.is_finite()) {
            return Err(Error::contract("network weights must be finite"));
        }
        Ok(())
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Latent rows `f_w(x)` in original feature order, `dim × latent` row-major.
pub fn arnet_latents(weights: &ArNetWeights, x: &[f64]) -> Result<Vec<f64>> {
    weights.check()?;
    if x.len() != weights.dim {
        return Err(Error::contract(format!(
            "network expects {} inputs, got {}",
            weights.dim,
            x.len()
        )));
    }
    let params = NetParams::<f64>::from_weights(weights);
    let order: Vec<usize> = (0..weights.dim).collect();
    Ok(params.latents(&order, x))
}

/// The bandwidth function, tagged by family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthModel {
    Constant {
        rho0: f64,
    },
    PerDim {
        rho0: Vec<f64>,
    },
    Rbf {
        rho0: Rho0,
        length_scales: Vec<f64>,
    },
    RationalQuadratic {
        rho0: Rho0,
        length_scales: Vec<f64>,
        gamma: f64,
    },
    Net {
        rho0: f64,
        weights: ArNetWeights,
    },
}

impl BandwidthModel {
    /// Default initialization: `ρ₀ = 0.9`, unit length scales, `γ = 1`, and a
    /// fan-in scaled truncated-normal network drawn from `seed`.
    pub fn init(kind: ModelKind, kernel: KernelKind, dim: usize, seed: u64) -> Self {
        let rho0 = DEFAULT_RHO0;
        let kernel_model = |shared: Rho0| match kernel {
            KernelKind::Rbf => BandwidthModel::Rbf {
                rho0: shared,
                length_scales: vec![1.0; dim],
            },
            KernelKind::Rq => BandwidthModel::RationalQuadratic {
                rho0: shared,
                length_scales: vec![1.0; dim],
                gamma: 1.0,
            },
        };
        match kind {
            ModelKind::RBp => BandwidthModel::Constant { rho0 },
            ModelKind::RdBp => BandwidthModel::PerDim {
                rho0: vec![rho0; dim],
            },
            ModelKind::ArBp => kernel_model(Rho0::Shared(rho0)),
            ModelKind::ArdBp => kernel_model(Rho0::PerDim(vec![rho0; dim])),
            ModelKind::ArnetBp => BandwidthModel::Net {
                rho0,
                weights: ArNetWeights::init(dim, NET_HIDDEN, NET_LATENT, seed),
            },
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BandwidthModel::Constant { .. } => "constant",
            BandwidthModel::PerDim { .. } => "per_dim",
            BandwidthModel::Rbf { .. } => "rbf",
            BandwidthModel::RationalQuadratic { .. } => "rational_quadratic",
            BandwidthModel::Net { .. } => "net",
        }
    }

    /// The model family this parameterization belongs to.
    pub fn model_kind(&self) -> ModelKind {
        match self {
            BandwidthModel::Constant { .. } => ModelKind::RBp,
            BandwidthModel::PerDim { .. } => ModelKind::RdBp,
            BandwidthModel::Rbf { rho0, .. } | BandwidthModel::RationalQuadratic { rho0, .. } => match rho0 {
                Rho0::Shared(_) => ModelKind::ArBp,
                Rho0::PerDim(_) => ModelKind::ArdBp,
            },
            BandwidthModel::Net { .. } => ModelKind::ArnetBp,
        }
    }

    /// Kernel of a kernel bandwidth.
    pub fn kernel_kind(&self) -> Option<KernelKind> {
        match self {
            BandwidthModel::Rbf { .. } => Some(KernelKind::Rbf),
            BandwidthModel::RationalQuadratic { .. } => Some(KernelKind::Rq),
            _ => None,
        }
    }

    /// Dimension the model was built for, if it pins one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            BandwidthModel::Constant { .. } => None,
            BandwidthModel::PerDim { rho0 } => Some(rho0.len()),
            BandwidthModel::Rbf { length_scales, .. }
            | BandwidthModel::RationalQuadratic { length_scales, .. } => Some(length_scales.len()),
            BandwidthModel::Net { weights, .. } => Some(weights.dim),
        }
    }

    /// Checks parameter ranges and that the model fits `dim` features.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != dim {
                return Err(Error::contract(format!(
                    "bandwidth built for {d} dimensions, data has {dim}"
                )));
            }
        }
        let rho_ok = |r: &f64| r.is_finite() && *r > 0.0 && *r <= RHO_MAX;
        let rhos: &[f64] = match self {
            BandwidthModel::Constant { rho0 } | BandwidthModel::Net { rho0, .. } => {
                core::slice::from_ref(rho0)
            }
            BandwidthModel::PerDim { rho0 } => rho0,
            BandwidthModel::Rbf { rho0, .. } | BandwidthModel::RationalQuadratic { rho0, .. } => {
                rho0.values()
            }
        };
        if rhos.is_empty() || !rhos.iter().all(rho_ok) {
            return Err(Error::contract("rho0 must lie in (0, 0.999]"));
        }
        if let BandwidthModel::Rbf { rho0: Rho0::PerDim(r), .. }
        | BandwidthModel::RationalQuadratic { rho0: Rho0::PerDim(r), .. } = self
        {
            if r.len() != dim {
                return Err(Error::contract("per-dimension rho0 length must equal dim"));
            }
        }
        match self {
            BandwidthModel::Rbf { length_scales, .. }
            | BandwidthModel::RationalQuadratic { length_scales, .. } => {
                if !length_scales.iter().all(|l| l.is_finite() && *l > 0.0) {
                    return Err(Error::contract("length scales must be positive"));
                }
            }
            _ => {}
        }
        if let BandwidthModel::RationalQuadratic { gamma, .. } = self {
            if !(gamma.is_finite() && *gamma > 0.0) {
                return Err(Error::contract("gamma must be positive"));
            }
        }
        if let BandwidthModel::Net { weights, .. } = self {
            weights.check()?;
        }
        Ok(())
    }

    pub fn shape(&self) -> BandwidthShape {
        match self {
            BandwidthModel::Constant { .. } => BandwidthShape {
                family: Family::Constant,
                dim: 0,
                shared_rho0: true,
                hidden: 0,
                latent: 0,
            },
            BandwidthModel::PerDim { rho0 } => BandwidthShape {
                family: Family::PerDim,
                dim: rho0.len(),
                shared_rho0: false,
                hidden: 0,
                latent: 0,
            },
            BandwidthModel::Rbf { rho0, length_scales }
            | BandwidthModel::RationalQuadratic {
                rho0,
                length_scales,
                ..
            } => BandwidthShape {
                family: if matches!(self, BandwidthModel::Rbf { .. }) {
                    Family::Rbf
                } else {
                    Family::RationalQuadratic
                },
                dim: length_scales.len(),
                shared_rho0: matches!(rho0, Rho0::Shared(_)),
                hidden: 0,
                latent: 0,
            },
            BandwidthModel::Net { weights, .. } => BandwidthShape {
                family: Family::Net,
                dim: weights.dim,
                shared_rho0: true,
                hidden: weights.hidden,
                latent: weights.latent,
            },
        }
    }

    /// Flattens the parameters: scaled-logit `ρ₀`, log length scales, log `γ`,
    /// raw network weights.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape().num_params());
        match self {
            BandwidthModel::Constant { rho0 } => out.push(rho_to_free(*rho0)),
            BandwidthModel::PerDim { rho0 } => out.extend(rho0.iter().map(|&r| rho_to_free(r))),
            BandwidthModel::Rbf { rho0, length_scales } => {
                out.extend(rho0.values().iter().map(|&r| rho_to_free(r)));
                out.extend(length_scales.iter().map(|&l| libm::log(l)));
            }
            BandwidthModel::RationalQuadratic {
                rho0,
                length_scales,
                gamma,
            } => {
                out.extend(rho0.values().iter().map(|&r| rho_to_free(r)));
                out.extend(length_scales.iter().map(|&l| libm::log(l)));
                out.push(libm::log(*gamma));
            }
            BandwidthModel::Net { rho0, weights } => {
                out.push(rho_to_free(*rho0));
                out.extend_from_slice(&weights.w);
                out.extend_from_slice(&weights.b);
                out.extend_from_slice(&weights.v);
            }
        }
        out
    }

    /// Copula correlation for 1-based dimension `j` in the identity feature order.
    pub fn rho(&self, j: usize, prefix: &[f64], other_prefix: &[f64]) -> Result<Correlation> {
        if j == 0 {
            return Err(Error::contract("dimension index is 1-based"));
        }
        if prefix.len() != j - 1 || other_prefix.len() != j - 1 {
            return Err(Error::contract("prefixes must have length j - 1"));
        }
        if let Some(d) = self.dim() {
            if j > d {
                return Err(Error::contract(format!("dimension {j} out of range 1..={d}")));
            }
        }
        let dim = self.dim().unwrap_or(j);
        // Coordinates at or beyond j never influence ρ^j; pad them with zeros.
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        a[..j - 1].copy_from_slice(prefix);
        b[..j - 1].copy_from_slice(other_prefix);
        let order: Vec<usize> = (0..dim).collect();
        let params = Params::<f64>::from_model(self);
        let pos = params.positional(&order);
        let za = pos.latents(&a);
        let zb = pos.latents(&b);
        let mut out = Vec::new();
        pos.rhos(&a, &za, &b, &zb, &mut out);
        Correlation::new(out[j - 1])
    }
}

/// `exp[-Σ ((a - b) / ℓ)²]`.
pub fn rbf_kernel(a: &[f64], b: &[f64], length_scales: &[f64]) -> Result<f64> {
    let dist = scaled_sq_dist(a, b, length_scales)?;
    Ok(libm::exp(-dist))
}

/// `(1 + Σ ((a - b) / ℓ)² / (2γ))^(-γ)`.
pub fn rq_kernel(a: &[f64], b: &[f64], length_scales: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::contract("gamma must be positive"));
    }
    let dist = scaled_sq_dist(a, b, length_scales)?;
    Ok(libm::exp(-gamma * libm::log1p(dist / (2.0 * gamma))))
}

fn scaled_sq_dist(a: &[f64], b: &[f64], length_scales: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != length_scales.len() {
        return Err(Error::contract("kernel arguments must have equal lengths"));
    }
    if !length_scales.iter().all(|l| *l > 0.0) {
        return Err(Error::contract("length scales must be positive"));
    }
    Ok(a.iter()
        .zip(b)
        .zip(length_scales)
        .map(|((x, y), l)| {
            let t = (x - y) / l;
            t * t
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Constant,
    PerDim,
    Rbf,
    RationalQuadratic,
    Net,
}

/// Layout of a bandwidth model, enough to rebuild it from an unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandwidthShape {
    family: Family,
    dim: usize,
    shared_rho0: bool,
    hidden: usize,
    latent: usize,
}

impl BandwidthShape {
    pub fn num_params(&self) -> usize {
        let rho = if self.shared_rho0 { 1 } else { self.dim };
        match self.family {
            Family::Constant => 1,
            Family::PerDim => self.dim,
            Family::Rbf => rho + self.dim,
            Family::RationalQuadratic => rho + self.dim + 1,
            Family::Net => {
                1 + self.hidden * self.dim + self.hidden + self.dim * self.latent * self.hidden
            }
        }
    }

    pub fn is_net(&self) -> bool {
        self.family == Family::Net
    }

    pub fn from_unconstrained(&self, theta: &[f64]) -> Result<BandwidthModel> {
        if theta.len() != self.num_params() {
            return Err(Error::contract(format!(
                "expected {} unconstrained parameters, got {}",
                self.num_params(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::contract("unconstrained parameters must be finite"));
        }
        let d = self.dim;
        let rho_len = if self.shared_rho0 { 1 } else { d };
        let rho0 = || -> Rho0 {
            if self.shared_rho0 {
                Rho0::Shared(rho_from_free(theta[0]))
            } else {
                Rho0::PerDim(theta[..d].iter().map(|&t| rho_from_free(t)).collect())
            }
        };
        let exp_all = |s: &[f64]| s.iter().map(|&t| libm::exp(t)).collect::<Vec<_>>();
        Ok(match self.family {
            Family::Constant => BandwidthModel::Constant {
                rho0: rho_from_free(theta[0]),
            },
            Family::PerDim => BandwidthModel::PerDim {
                rho0: theta.iter().map(|&t| rho_from_free(t)).collect(),
            },
            Family::Rbf => BandwidthModel::Rbf {
                rho0: rho0(),
                length_scales: exp_all(&theta[rho_len..rho_len + d]),
            },
            Family::RationalQuadratic => BandwidthModel::RationalQuadratic {
                rho0: rho0(),
                length_scales: exp_all(&theta[rho_len..rho_len + d]),
                gamma: libm::exp(theta[rho_len + d]),
            },
            Family::Net => {
                let (h, l) = (self.hidden, self.latent);
                let mut at = 1;
                let mut take = |n: usize| {
                    let s = theta[at..at + n].to_vec();
                    at += n;
                    s
                };
                let w = take(h * d);
                let b = take(h);
                let v = take(d * l * h);
                BandwidthModel::Net {
                    rho0: rho_from_free(theta[0]),
                    weights: ArNetWeights {
                        dim: d,
                        hidden: h,
                        latent: l,
                        w,
                        b,
                        v,
                    },
                }
            }
        })
    }

    /// Bandwidth parameters as `R` values, pushed through the constraining transforms.
    pub(crate) fn params<R: Real>(&self, theta: &[R]) -> Params<R> {
        let d = self.dim;
        let rho_len = match self.family {
            Family::PerDim => d,
            _ if self.shared_rho0 => 1,
            _ => d,
        };
        let rho0: Vec<R> = theta[..rho_len].iter().map(|&t| rho_from_free_r(t)).collect();
        let inv_sq = |s: &[R]| s.iter().map(|&t| (t * -2.0).exp()).collect::<Vec<R>>();
        let kernel = match self.family {
            Family::Constant | Family::PerDim => KernelParams::None,
            Family::Rbf => KernelParams::Rbf {
                inv_sq: inv_sq(&theta[rho_len..rho_len + d]),
            },
            Family::RationalQuadratic => KernelParams::Rq {
                inv_sq: inv_sq(&theta[rho_len..rho_len + d]),
                gamma: theta[rho_len + d].exp(),
            },
            Family::Net => {
                let (h, l) = (self.hidden, self.latent);
                let w = theta[1..1 + h * d].to_vec();
                let b = theta[1 + h * d..1 + h * d + h].to_vec();
                let v = theta[1 + h * d + h..].to_vec();
                KernelParams::Net(NetParams {
                    dim: d,
                    hidden: h,
                    latent: l,
                    w,
                    b,
                    v,
                })
            }
        };
        Params { rho0, kernel }
    }
}

/// Free parameter for `ρ₀`: `logit(ρ₀ / RHO_MAX)`.
pub fn rho_to_free(rho0: f64) -> f64 {
    let p = rho0 / RHO_MAX;
    libm::log(p) - libm::log1p(-p)
}

pub fn rho_from_free(t: f64) -> f64 {
    RHO_MAX * crate::math::sigmoid(t)
}

fn rho_from_free_r<R: Real>(t: R) -> R {
    t.sigmoid() * RHO_MAX
}

/// Bandwidth parameters in feature-index order, over a scalar type `R`.
#[derive(Debug, Clone)]
pub(crate) struct Params<R> {
    rho0: Vec<R>,
    kernel: KernelParams<R>,
}

#[derive(Debug, Clone)]
enum KernelParams<R> {
    None,
    Rbf { inv_sq: Vec<R> },
    Rq { inv_sq: Vec<R>, gamma: R },
    Net(NetParams<R>),
}

#[derive(Debug, Clone)]
struct NetParams<R> {
    dim: usize,
    hidden: usize,
    latent: usize,
    w: Vec<R>,
    b: Vec<R>,
    v: Vec<R>,
}

impl NetParams<f64> {
    fn from_weights(w: &ArNetWeights) -> Self {
        NetParams {
            dim: w.dim,
            hidden: w.hidden,
            latent: w.latent,
            w: w.w.clone(),
            b: w.b.clone(),
            v: w.v.clone(),
        }
    }
}

impl<R: Real> NetParams<R> {
    /// Latent rows in *position* order for a point whose coordinates are given in
    /// position order (`x_pos[p]` is feature `order[p]`).
    fn latents(&self, order: &[usize], x_pos: &[f64]) -> Vec<R> {
        let (d, h, l) = (self.dim, self.hidden, self.latent);
        let mut pre: Vec<R> = self.b.clone();
        let mut act = vec![R::cst(0.0); h];
        let mut out = Vec::with_capacity(d * l);
        for (p, &feat) in order.iter().enumerate() {
            for k in 0..h {
                act[k] = pre[k].tanh();
            }
            let rows = &self.v[feat * l * h..(feat + 1) * l * h];
            for r in 0..l {
                let mut z = R::cst(0.0);
                for k in 0..h {
                    z = z + rows[r * h + k] * act[k];
                }
                out.push(z);
            }
            let xp = x_pos[p];
            if xp != 0.0 {
                for k in 0..h {
                    pre[k] = pre[k] + self.w[k * d + feat] * xp;
                }
            }
        }
        out
    }
}

impl Params<f64> {
    pub(crate) fn from_model(model: &BandwidthModel) -> Self {
        let inv_sq = |ls: &[f64]| ls.iter().map(|l| 1.0 / (l * l)).collect::<Vec<_>>();
        match model {
            BandwidthModel::Constant { rho0 } => Params {
                rho0: vec![*rho0],
                kernel: KernelParams::None,
            },
            BandwidthModel::PerDim { rho0 } => Params {
                rho0: rho0.clone(),
                kernel: KernelParams::None,
            },
            BandwidthModel::Rbf { rho0, length_scales } => Params {
                rho0: rho0.values().to_vec(),
                kernel: KernelParams::Rbf {
                    inv_sq: inv_sq(length_scales),
                },
            },
            BandwidthModel::RationalQuadratic {
                rho0,
                length_scales,
                gamma,
            } => Params {
                rho0: rho0.values().to_vec(),
                kernel: KernelParams::Rq {
                    inv_sq: inv_sq(length_scales),
                    gamma: *gamma,
                },
            },
            BandwidthModel::Net { rho0, weights } => Params {
                rho0: vec![*rho0],
                kernel: KernelParams::Net(NetParams::from_weights(weights)),
            },
        }
    }
}

impl<R: Real> Params<R> {
    /// Overrides `ρ₀` of one feature, expanding a shared value to `dim` entries.
    pub(crate) fn set_rho0(&mut self, feature: usize, dim: usize, value: R) {
        if self.rho0.len() == 1 {
            self.rho0 = vec![self.rho0[0]; dim];
        }
        self.rho0[feature] = value;
    }

    /// Re-indexes per-feature parameters into positions of `order`.
    pub(crate) fn positional(&self, order: &[usize]) -> Positional<R> {
        let d = order.len();
        let rho0 = if self.rho0.len() == 1 {
            vec![self.rho0[0]; d]
        } else {
            order.iter().map(|&f| self.rho0[f]).collect()
        };
        let pick = |v: &[R]| order.iter().map(|&f| v[f]).collect::<Vec<R>>();
        let kernel = match &self.kernel {
            KernelParams::None => PosKernel::None,
            KernelParams::Rbf { inv_sq } => PosKernel::Rbf {
                inv_sq: pick(inv_sq),
            },
            KernelParams::Rq { inv_sq, gamma } => PosKernel::Rq {
                inv_sq: pick(inv_sq),
                gamma: *gamma,
            },
            KernelParams::Net(net) => PosKernel::Net {
                net: net.clone(),
                order: order.to_vec(),
            },
        };
        Positional { rho0, kernel }
    }
}

/// Bandwidth laid out for one feature order; all slices are in position order.
#[derive(Debug, Clone)]
pub(crate) struct Positional<R> {
    rho0: Vec<R>,
    kernel: PosKernel<R>,
}

#[derive(Debug, Clone)]
enum PosKernel<R> {
    None,
    Rbf { inv_sq: Vec<R> },
    Rq { inv_sq: Vec<R>, gamma: R },
    Net { net: NetParams<R>, order: Vec<usize> },
}

impl<R: Real> Positional<R> {
    /// True when `ρ^j` does not depend on the points being compared.
    pub(crate) fn is_constant(&self) -> bool {
        matches!(self.kernel, PosKernel::None)
    }

    /// Per-point latent rows (empty unless the bandwidth is a network).
    pub(crate) fn latents(&self, x_pos: &[f64]) -> Vec<R> {
        match &self.kernel {
            PosKernel::Net { net, order } => net.latents(order, x_pos),
            _ => Vec::new(),
        }
    }

    /// Writes `ρ^j` for every position `j` of the pair `(a, b)` into `out`.
    pub(crate) fn rhos(&self, xa: &[f64], za: &[R], xb: &[f64], zb: &[R], out: &mut Vec<R>) {
        let d = self.rho0.len();
        out.clear();
        match &self.kernel {
            PosKernel::None => out.extend_from_slice(&self.rho0),
            PosKernel::Rbf { inv_sq } => {
                let mut dist = R::cst(0.0);
                out.push(self.rho0[0]);
                for j in 1..d {
                    let delta = xa[j - 1] - xb[j - 1];
                    dist = dist + inv_sq[j - 1] * (delta * delta);
                    out.push(self.rho0[j] * (-dist).exp());
                }
            }
            PosKernel::Rq { inv_sq, gamma } => {
                let mut dist = R::cst(0.0);
                out.push(self.rho0[0]);
                for j in 1..d {
                    let delta = xa[j - 1] - xb[j - 1];
                    dist = dist + inv_sq[j - 1] * (delta * delta);
                    let log_k = -(*gamma) * (dist / (*gamma * 2.0) + 1.0).ln();
                    out.push(self.rho0[j] * log_k.exp());
                }
            }
            PosKernel::Net { net, .. } => {
                let l = net.latent;
                let mut dist = R::cst(0.0);
                out.push(self.rho0[0]);
                for j in 1..d {
                    let row = (j - 1) * l;
                    for r in 0..l {
                        let diff = za[row + r] - zb[row + r];
                        dist = dist + diff * diff;
                    }
                    out.push(self.rho0[j] * (-dist).exp());
                }
            }
        }
    }
}

/// Random model of a given family, for property tests and gradient checks.
#[doc(hidden)]
pub fn random_model<G: Rng>(kind: ModelKind, kernel: KernelKind, dim: usize, rng: &mut G) -> BandwidthModel {
    let mut model = BandwidthModel::init(kind, kernel, dim, rng.random());
    let mut theta = model.to_unconstrained();
    for t in theta.iter_mut() {
        *t += rng.random_range(-1.0..1.0);
    }
    if let Ok(m) = model.shape().from_unconstrained(&theta) {
        model = m;
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn families_round_trip_through_init() {
        for kind in [ModelKind::RBp, ModelKind::RdBp, ModelKind::ArBp, ModelKind::ArdBp, ModelKind::ArnetBp] {
            for kernel in [KernelKind::Rbf, KernelKind::Rq] {
                let m = BandwidthModel::init(kind, kernel, 3, 0);
                assert_eq!(m.model_kind(), kind);
                if matches!(kind, ModelKind::ArBp | ModelKind::ArdBp) {
                    assert_eq!(m.kernel_kind(), Some(kernel));
                }
                assert_eq!(ModelKind::parse(kind.name()), Some(kind));
            }
        }
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(rbf_kernel(&[0.3, -1.0], &[0.3, -1.0], &[1.0, 2.0]).unwrap(), 1.0);
        let k = rbf_kernel(&[0.0], &[1.0], &[1.0]).unwrap();
        assert!((k - 0.367_879_441_171_442_3).abs() < 1e-15);
        let k = rbf_kernel(&[0.0, 5.0], &[3.0, -2.0], &[1e12, 1e12]).unwrap();
        assert!((k - 1.0).abs() < 1e-15);
        assert!(rbf_kernel(&[0.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn rq_examples() {
        assert_eq!(rq_kernel(&[1.0], &[1.0], &[0.5], 2.0).unwrap(), 1.0);
        let k = rq_kernel(&[0.0], &[1.0], &[1.0], 1.0).unwrap();
        assert!((k - 2.0 / 3.0).abs() < 1e-15);
        // (1 + r²/(2γ))^-γ → exp(-r²/2), i.e. the RBF kernel with ℓ scaled by √2.
        let a = [0.2, -0.4];
        let b = [1.1, 0.3];
        let ls = [0.8, 1.3];
        let rq = rq_kernel(&a, &b, &ls, 1e6).unwrap();
        let ls_rbf: Vec<f64> = ls.iter().map(|l| l * core::f64::consts::SQRT_2).collect();
        let rbf = rbf_kernel(&a, &b, &ls_rbf).unwrap();
        assert!((rq - rbf).abs() <= 1e-3 * rbf);
    }

    #[test]
    fn rho_examples() {
        let rbf = BandwidthModel::Rbf {
            rho0: Rho0::Shared(0.9),
            length_scales: vec![1.0, 1.0],
        };
        assert_eq!(rbf.rho(1, &[], &[]).unwrap().get(), 0.9);
        assert_eq!(rbf.rho(2, &[0.4], &[0.4]).unwrap().get(), 0.9);
        let r = rbf.rho(2, &[0.0], &[1.0]).unwrap().get();
        assert!((r - 0.331_091_497_054_298).abs() < 1e-12);
        assert!(rbf.rho(3, &[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(rbf.rho(2, &[0.0, 1.0], &[0.0]).is_err());

        let per_dim = BandwidthModel::PerDim { rho0: vec![0.3, 0.7] };
        assert_eq!(per_dim.rho(1, &[], &[]).unwrap().get(), 0.3);
        assert_eq!(per_dim.rho(2, &[5.0], &[-5.0]).unwrap().get(), 0.7);
        let constant = BandwidthModel::Constant { rho0: 0.6 };
        assert_eq!(constant.rho(4, &[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap().get(), 0.6);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_model(ModelKind::ArnetBp, KernelKind::Rbf, 3, &mut rng);
        let BandwidthModel::Net { rho0, .. } = &net else { unreachable!() };
        assert_eq!(net.rho(1, &[], &[]).unwrap().get(), *rho0);
    }

    #[test]
    fn zero_network_is_constant_bandwidth() {
        let model = BandwidthModel::Net {
            rho0: 0.8,
            weights: ArNetWeights::zeros(4, NET_HIDDEN, NET_LATENT),
        };
        let z = arnet_latents(
            match &model {
                BandwidthModel::Net { weights, .. } => weights,
                _ => unreachable!(),
            },
            &[1.0, -2.0, 0.5, 3.0],
        )
        .unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        for j in 1..=4 {
            let a: Vec<f64> = (0..j - 1).map(|k| k as f64).collect();
            let b: Vec<f64> = (0..j - 1).map(|k| -(k as f64) * 3.0).collect();
            assert_eq!(model.rho(j, &a, &b).unwrap().get(), 0.8);
        }
    }

    #[test]
    fn latent_rows_respect_masking() {
        let weights = ArNetWeights::init(5, 8, 3, 11);
        let x = [0.3, -1.2, 0.8, 2.0, -0.4];
        let base = arnet_latents(&weights, &x).unwrap();
        // Row j depends on x^{1:j-1}, so perturbing x^k leaves rows 1..=k unchanged.
        for k in 0..5 {
            let mut y = x;
            y[k] += 0.7;
            let z = arnet_latents(&weights, &y).unwrap();
            for row in 0..=k {
                assert_eq!(&z[row * 3..row * 3 + 3], &base[row * 3..row * 3 + 3]);
            }
            if k + 1 < 5 {
                assert_ne!(&z[(k + 1) * 3..(k + 2) * 3], &base[(k + 1) * 3..(k + 2) * 3]);
            }
        }
        // The last coordinate feeds no row at all.
        let mut y = x;
        y[4] = 100.0;
        assert_eq!(arnet_latents(&weights, &y).unwrap(), base);
        // Row 1 is V_1 · tanh(b); with zero bias it vanishes.
        assert!(base[..3].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn latent_forward_pass_matches_brute_force() {
        let weights = ArNetWeights::init(3, 4, 2, 5);
        let mut weights = weights;
        weights.b = vec![0.1, -0.2, 0.3, 0.05];
        let x = [0.5, -1.0, 2.0];
        let z = arnet_latents(&weights, &x).unwrap();
        for j in 0..3 {
            for r in 0..2 {
                let mut acc = 0.0;
                for h in 0..4 {
                    let mut pre = weights.b[h];
                    for k in 0..j {
                        pre += weights.w[h * 3 + k] * x[k];
                    }
                    acc += weights.v[(j * 2 + r) * 4 + h] * libm::tanh(pre);
                }
                assert!((z[j * 2 + r] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unconstrained_examples() {
        let half = BandwidthModel::Constant { rho0: RHO_MAX / 2.0 };
        assert!(half.to_unconstrained()[0].abs() < 1e-15);
        let m = BandwidthModel::Constant { rho0: 0.5 };
        let back = m.shape().from_unconstrained(&m.to_unconstrained()).unwrap();
        let BandwidthModel::Constant { rho0 } = back else { unreachable!() };
        assert!((rho0 - 0.5).abs() < 1e-12);

        let rbf = BandwidthModel::Rbf {
            rho0: Rho0::Shared(0.9),
            length_scales: vec![1.0, 1.0, 1.0],
        };
        let theta = rbf.to_unconstrained();
        assert_eq!(&theta[1..], &[0.0, 0.0, 0.0]);
        assert!(rbf.shape().from_unconstrained(&theta[1..]).is_err());
    }

    fn close_models(a: &BandwidthModel, b: &BandwidthModel) -> bool {
        let (ta, tb) = (a.to_unconstrained(), b.to_unconstrained());
        a.kind_name() == b.kind_name()
            && ta.len() == tb.len()
            && ta.iter().zip(&tb).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()))
    }

    proptest! {
        #[test]
        fn unconstrained_round_trip(seed in 0u64..500, kind in 0usize..5, kernel in 0usize..2, dim in 1usize..5) {
            let kinds = [ModelKind::RBp, ModelKind::RdBp, ModelKind::ArBp, ModelKind::ArdBp, ModelKind::ArnetBp];
            let kernels = [KernelKind::Rbf, KernelKind::Rq];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(kinds[kind], kernels[kernel], dim, &mut rng);
            prop_assert!(model.validate(dim).is_ok());
            let back = model.shape().from_unconstrained(&model.to_unconstrained()).unwrap();
            prop_assert!(close_models(&model, &back));
            let vals_a = constrained_values(&model);
            let vals_b = constrained_values(&back);
            for (x, y) in vals_a.iter().zip(&vals_b) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn kernel_rho_bounded_by_rho0(seed in 0u64..500, dim in 2usize..5, kind in 2usize..5) {
            let kinds = [ModelKind::RBp, ModelKind::RdBp, ModelKind::ArBp, ModelKind::ArdBp, ModelKind::ArnetBp];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(kinds[kind], KernelKind::Rbf, dim, &mut rng);
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r0 = constrained_values(&model);
            for j in 1..=dim {
                let rho = model.rho(j, &a[..j - 1], &b[..j - 1]).unwrap().get();
                let rho0 = if matches!(&model, BandwidthModel::Rbf { rho0: Rho0::PerDim(_), .. }) { r0[j - 1] } else { r0[0] };
                prop_assert!(rho > 0.0 && rho <= rho0 + 1e-15);
            }
        }

        #[test]
        fn net_rho_ignores_coordinates_at_or_after_j(seed in 0u64..300, dim in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(ModelKind::ArnetBp, KernelKind::Rbf, dim, &mut rng);
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            for j in 1..=dim {
                let base = model.rho(j, &a[..j - 1], &b[..j - 1]).unwrap().get();
                if j >= 2 {
                    // The last prefix coordinate x^{j-1} only feeds row j, which ρ^j does not use.
                    let mut a2 = a.clone();
                    a2[j - 2] += 1.5;
                    let moved = model.rho(j, &a2[..j - 1], &b[..j - 1]).unwrap().get();
                    prop_assert_eq!(base, moved);
                }
            }
        }
    }

    fn constrained_values(model: &BandwidthModel) -> Vec<f64> {
        match model {
            BandwidthModel::Constant { rho0 } => vec![*rho0],
            BandwidthModel::PerDim { rho0 } => rho0.clone(),
            BandwidthModel::Rbf { rho0, length_scales } => {
                rho0.values().iter().chain(length_scales).copied().collect()
            }
            BandwidthModel::RationalQuadratic {
                rho0,
                length_scales,
                gamma,
            } => rho0
                .values()
                .iter()
                .chain(length_scales)
                .chain(core::iter::once(gamma))
                .copied()
                .collect(),
            BandwidthModel::Net { rho0, weights } => core::iter::once(rho0)
                .chain(&weights.w)
                .chain(&weights.b)
                .chain(&weights.v)
                .copied()
                .collect(),
        }
    }
}
