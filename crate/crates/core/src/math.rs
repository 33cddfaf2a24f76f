//! Scalar probability primitives shared by every recursion.
//!
//! All hot-path copula work happens in *score space*: a CDF value `u` is carried
//! together with its normal score `Φ⁻¹(u)`, so the copula log-density and the
//! conditional copula CDF never need to invert the same value twice.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clamp applied to every CDF value carried by the recursion.
pub const UNIT_EPS: f64 = 1e-6;

/// Largest admissible copula correlation.
pub const RHO_MAX: f64 = 0.999;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A probability clamped into `[UNIT_EPS, 1 - UNIT_EPS]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitInterval(f64);

impl UnitInterval {
    /// Clamps a finite value into the admissible range.
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::domain("probability must be finite"));
        }
        Ok(Self(clamp_unit(value)))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Normal score `Φ⁻¹(u)` of the clamped value.
    pub fn score(self) -> f64 {
        quantile_unchecked(self.0)
    }
}

/// A copula correlation in `(0, RHO_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Correlation(f64);

impl Correlation {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::domain("correlation must be finite and positive"));
        }
        Ok(Self(value.min(RHO_MAX)))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[inline]
pub(crate) fn clamp_unit(u: f64) -> f64 {
    u.clamp(UNIT_EPS, 1.0 - UNIT_EPS)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    libm::exp(norm_log_pdf(x))
}

#[inline]
pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// `Φ(x)` without the finiteness check.
#[inline]
pub(crate) fn cdf_unchecked(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain("normal CDF argument must be finite"));
    }
    Ok(cdf_unchecked(x))
}

/// Standard normal quantile for `p` strictly inside `(0, 1)`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("normal quantile needs p in (0, 1)"));
    }
    Ok(quantile_unchecked(p))
}

/// Acklam's rational approximation followed by one Halley step against `Φ`.
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    if p > 0.5 {
        // 1 - p is exact here, and the lower branch evaluates Φ accurately in its tail.
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    let e = cdf_unchecked(x) - p;
    let u = e * libm::sqrt(2.0 * PI) * libm::exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Log of the Gaussian copula density evaluated at normal scores `a = Φ⁻¹(u)`,
/// `b = Φ⁻¹(v)`.
#[inline]
pub(crate) fn copula_log_density_scores(a: f64, b: f64, rho: f64) -> f64 {
    let s = 1.0 - rho * rho;
    -0.5 * libm::log(s) - (rho * rho * (a * a + b * b) - 2.0 * rho * a * b) / (2.0 * s)
}

/// Conditional copula CDF `H(u, v; ρ)` at normal scores.
#[inline]
pub(crate) fn conditional_cdf_scores(a: f64, b: f64, rho: f64) -> f64 {
    let s = 1.0 - rho * rho;
    cdf_unchecked((a - rho * b) / libm::sqrt(s))
}

/// Gaussian copula log-density `log c(u, v; ρ)`.
pub fn copula_log_density(u: UnitInterval, v: UnitInterval, rho: Correlation) -> f64 {
    copula_log_density_scores(u.score(), v.score(), rho.get())
}

/// Gaussian copula density `c(u, v; ρ)`.
pub fn copula_density(u: UnitInterval, v: UnitInterval, rho: Correlation) -> f64 {
    libm::exp(copula_log_density(u, v, rho))
}

/// Conditional copula CDF `H(u, v; ρ) = ∫₀ᵘ c(u', v; ρ) du'`.
pub fn copula_conditional_cdf(u: UnitInterval, v: UnitInterval, rho: Correlation) -> UnitInterval {
    UnitInterval(clamp_unit(conditional_cdf_scores(
        u.score(),
        v.score(),
        rho.get(),
    )))
}

/// Update weight `α_i = (2 - 1/i) / (i + 1)` for step `i ≥ 1`.
pub fn alpha(i: usize) -> Result<f64> {
    if i == 0 {
        return Err(Error::domain("update weight index starts at 1"));
    }
    Ok(alpha_unchecked(i))
}

#[inline]
pub(crate) fn alpha_unchecked(i: usize) -> f64 {
    let i = i as f64;
    (2.0 - 1.0 / i) / (i + 1.0)
}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// Log of the arithmetic mean of `exp(values)`, reduced in slice order.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY || !hi.is_finite() {
        return hi;
    }
    let sum: f64 = values.iter().map(|&v| libm::exp(v - hi)).sum();
    hi + libm::log(sum) - libm::log(values.len() as f64)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
