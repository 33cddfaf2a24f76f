//! Minimal reverse-mode differentiation for the recursions.
//!
//! Every recursion in this crate is written once against [`Real`]. Running it with
//! `f64` gives the plain value; running it with [`Var`] records a tape from which
//! [`Tape::gradient`] pulls exact derivatives of the prequential objective with
//! respect to every bandwidth parameter. The expensive building blocks (copula
//! terms, normal CDF and quantile, the convex CDF mix) are single fused nodes with
//! hand-derived partials, which keeps the tape at a handful of nodes per copula
//! factor.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::math::{self, UNIT_EPS};

/// Scalar type the recursions are generic over.
pub trait Real:
    Copy
    + core::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(x: f64) -> Self;
    fn val(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    /// `log(exp(self) + exp(other))`.
    fn ln_add_exp(self, other: Self) -> Self;
    fn norm_cdf(self) -> Self;
    /// Normal quantile of a value already inside the unit interval.
    fn norm_quantile(self) -> Self;
    /// Copula log-density and conditional CDF at normal scores `(a, b)`.
    fn copula_terms(a: Self, b: Self, rho: Self) -> (Self, Self);
    /// `clamp_unit(u + w (h - u))`.
    fn mix_unit(u: Self, w: Self, h: Self) -> Self;
    fn min(self, other: Self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        math::sigmoid(self)
    }
    #[inline]
    fn ln_add_exp(self, other: Self) -> Self {
        math::ln_add_exp(self, other)
    }
    #[inline]
    fn norm_cdf(self) -> Self {
        math::cdf_unchecked(self)
    }
    #[inline]
    fn norm_quantile(self) -> Self {
        math::quantile_unchecked(self)
    }
    #[inline]
    fn copula_terms(a: Self, b: Self, rho: Self) -> (Self, Self) {
        (
            math::copula_log_density_scores(a, b, rho),
            math::conditional_cdf_scores(a, b, rho),
        )
    }
    #[inline]
    fn mix_unit(u: Self, w: Self, h: Self) -> Self {
        math::clamp_unit(u + w * (h - u))
    }
    #[inline]
    fn min(self, other: Self) -> Self {
        f64::min(self, other)
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 3],
    partials: [f64; 3],
}

/// Append-only record of operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push([NONE; 3], [0.0; 3]);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: [u32; 3], partials: [f64; 3]) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { parents, partials });
        idx
    }

    /// Derivatives of `output` with respect to each of `inputs`.
    pub fn gradient(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Vec<f64> {
        if output.tape.is_none() {
            return vec![0.0; inputs.len()];
        }
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; output.idx as usize + 1];
        adjoint[output.idx as usize] = 1.0;
        for idx in (0..=output.idx as usize).rev() {
            let adj = adjoint[idx];
            if adj == 0.0 {
                continue;
            }
            let node = &nodes[idx];
            for k in 0..3 {
                let p = node.parents[k];
                if p != NONE {
                    adjoint[p as usize] += adj * node.partials[k];
                }
            }
        }
        inputs
            .iter()
            .map(|v| match v.tape {
                Some(_) if (v.idx as usize) < adjoint.len() => adjoint[v.idx as usize],
                _ => 0.0,
            })
            .collect()
    }
}

/// A value on a [`Tape`], or a constant when `tape` is `None`.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Var({})", self.val)
    }
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val,
        }
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push([self.idx, NONE, NONE], [d, 0.0, 0.0]),
                val,
            },
        }
    }

    #[inline]
    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        Self::nary([self, other], [da, db], val)
    }

    #[inline]
    fn nary<const N: usize>(args: [Self; N], partials: [f64; N], val: f64) -> Self {
        let tape = args.iter().find_map(|a| a.tape);
        match tape {
            None => Var::constant(val),
            Some(t) => {
                let mut parents = [NONE; 3];
                let mut dp = [0.0; 3];
                for k in 0..N {
                    if args[k].tape.is_some() {
                        parents[k] = args[k].idx;
                        dp[k] = partials[k];
                    }
                }
                Var {
                    tape: Some(t),
                    idx: t.push(parents, dp),
                    val,
                }
            }
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.binary(o, q, 1.0 / o.val, -q / o.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        self.unary(self.val + o, 1.0)
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        self.unary(self.val - o, 1.0)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.unary(self.val * o, o)
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self.unary(self.val / o, 1.0 / o)
    }
}

impl Real for Var<'_> {
    #[inline]
    fn cst(x: f64) -> Self {
        Var::constant(x)
    }

    #[inline]
    fn val(self) -> f64 {
        self.val
    }

    fn exp(self) -> Self {
        let e = libm::exp(self.val);
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(libm::log(self.val), 1.0 / self.val)
    }

    fn tanh(self) -> Self {
        let t = libm::tanh(self.val);
        self.unary(t, 1.0 - t * t)
    }

    fn sigmoid(self) -> Self {
        let s = math::sigmoid(self.val);
        self.unary(s, s * (1.0 - s))
    }

    fn ln_add_exp(self, other: Self) -> Self {
        let v = math::ln_add_exp(self.val, other.val);
        let wa = libm::exp(self.val - v);
        let wb = libm::exp(other.val - v);
        self.binary(other, v, wa, wb)
    }

    fn norm_cdf(self) -> Self {
        self.unary(math::cdf_unchecked(self.val), math::norm_pdf(self.val))
    }

    fn norm_quantile(self) -> Self {
        let x = math::quantile_unchecked(self.val);
        self.unary(x, 1.0 / math::norm_pdf(x))
    }

    fn copula_terms(a: Self, b: Self, rho: Self) -> (Self, Self) {
        let (x, y, r) = (a.val, b.val, rho.val);
        let s = 1.0 - r * r;
        let log_c = math::copula_log_density_scores(x, y, r);
        let dlc_da = r * (y - r * x) / s;
        let dlc_db = r * (x - r * y) / s;
        let dlc_dr = r / s + (x * y * (1.0 + r * r) - r * (x * x + y * y)) / (s * s);

        let root = libm::sqrt(s);
        let t = (x - r * y) / root;
        let h = math::cdf_unchecked(t);
        let dens = math::norm_pdf(t);
        let dh_da = dens / root;
        let dh_db = -dens * r / root;
        let dh_dr = dens * (r * x - y) / (s * root);

        (
            Var::nary([a, b, rho], [dlc_da, dlc_db, dlc_dr], log_c),
            Var::nary([a, b, rho], [dh_da, dh_db, dh_dr], h),
        )
    }

    fn mix_unit(u: Self, w: Self, h: Self) -> Self {
        let raw = u.val + w.val * (h.val - u.val);
        if raw < UNIT_EPS || raw > 1.0 - UNIT_EPS {
            return Var::constant(math::clamp_unit(raw));
        }
        Var::nary([u, w, h], [1.0 - w.val, h.val - u.val, w.val], raw)
    }

    fn min(self, other: Self) -> Self {
        if self.val <= other.val {
            self
        } else {
            other
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_ops() {
        let tape = Tape::new();
        let x = tape.var(0.7);
        let y = tape.var(-1.3);
        let z = (x * y + x.exp() / y - (x * 2.0).tanh()).ln_add_exp(y.sigmoid().ln());
        let g = tape.gradient(z, &[x, y]);
        let f = |a: f64, b: f64| {
            math::ln_add_exp(a * b + libm::exp(a) / b - libm::tanh(2.0 * a), libm::log(math::sigmoid(b)))
        };
        assert!((z.val() - f(0.7, -1.3)).abs() < 1e-14);
        assert!((g[0] - fd(|a| f(a, -1.3), 0.7)).abs() < 1e-7);
        assert!((g[1] - fd(|b| f(0.7, b), -1.3)).abs() < 1e-7);
    }

    #[test]
    fn copula_terms_partials() {
        let (a0, b0, r0) = (0.4, -1.1, 0.7);
        let tape = Tape::new();
        let (a, b, r) = (tape.var(a0), tape.var(b0), tape.var(r0));
        let (lc, h) = Var::copula_terms(a, b, r);
        let g_lc = tape.gradient(lc, &[a, b, r]);
        let g_h = tape.gradient(h, &[a, b, r]);
        let lcf = |x: f64, y: f64, z: f64| math::copula_log_density_scores(x, y, z);
        let hf = |x: f64, y: f64, z: f64| math::conditional_cdf_scores(x, y, z);
        let expect_lc = [
            fd(|x| lcf(x, b0, r0), a0),
            fd(|y| lcf(a0, y, r0), b0),
            fd(|z| lcf(a0, b0, z), r0),
        ];
        let expect_h = [
            fd(|x| hf(x, b0, r0), a0),
            fd(|y| hf(a0, y, r0), b0),
            fd(|z| hf(a0, b0, z), r0),
        ];
        for k in 0..3 {
            assert!((g_lc[k] - expect_lc[k]).abs() < 1e-7, "log c partial {k}");
            assert!((g_h[k] - expect_h[k]).abs() < 1e-7, "H partial {k}");
        }
    }

    #[test]
    fn quantile_and_cdf_partials() {
        let tape = Tape::new();
        let u = tape.var(0.83);
        let q = u.norm_quantile();
        let c = (q * 0.5).norm_cdf();
        let g = tape.gradient(c, &[u]);
        let f = |p: f64| math::cdf_unchecked(0.5 * math::quantile_unchecked(p));
        assert!((g[0] - fd(f, 0.83)).abs() < 1e-7);
    }

    #[test]
    fn constants_do_not_touch_the_tape() {
        let tape = Tape::new();
        let x = tape.var(1.0);
        let before = tape.len();
        let c = Var::cst(2.0) * Var::cst(3.0) + 1.0;
        assert_eq!(tape.len(), before);
        assert_eq!(c.val(), 7.0);
        let y = x * c;
        assert_eq!(tape.gradient(y, &[x]), vec![7.0]);
        assert_eq!(tape.gradient(c, &[x]), vec![0.0]);
    }
}
