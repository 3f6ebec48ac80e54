//! Coefficient data of the nonlocal Fisher–KPP equation
//!
//! `u_t = D u_xx + a u − ∂x[(V_x + ϰ ∫ W_x u dy) u] − ϰ u ∫ b u dy`
//!
//! together with the Taylor coefficients the moment and germ constructions need.
//! Built-in families carry exact derivatives; callbacks fall back to central
//! finite differences (see [`fd_derivative`]).

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::specfun::hermite_poly;

pub type PointFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type KernelFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Default highest derivative order exposed by a model (EE order 5 plus one).
pub const DEFAULT_K_MAX: usize = 6;

/// Highest order the finite-difference fallback will attempt.
pub const FD_MAX_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("derivative order {requested} exceeds the declared maximum {k_max}")]
    OrderExceeded { requested: usize, k_max: usize },
    #[error("finite-difference fallback supports orders up to {FD_MAX_ORDER}, requested {0}")]
    FiniteDifferenceOrder(usize),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite coefficient value at x={x}, t={t}")]
    NonFinite { x: f64, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

/// A coefficient `f(x, t)` such as the growth rate `a` or the potential `V`.
#[derive(Clone)]
pub enum Coefficient {
    Zero,
    Constant(f64),
    /// `c[0] + c[1] x + c[2] x² + …`
    Polynomial(Vec<f64>),
    Callback {
        f: PointFn,
        time_dependent: bool,
    },
}

/// A two-point function `k(x, y, t)`: the influence kernel `b` or the nonlocal potential `W`.
#[derive(Clone)]
pub enum Kernel {
    Zero,
    Constant(f64),
    /// `amplitude · exp(−((x − y − shift)/range)²)`; nonzero `shift` makes it asymmetric.
    Gaussian {
        amplitude: f64,
        range: f64,
        shift: f64,
    },
    /// `amplitude · exp(−(x − y)²/range²) · cos(wavenumber (x − y))`
    CosineGaussian {
        amplitude: f64,
        range: f64,
        wavenumber: f64,
    },
    Callback {
        f: KernelFn,
        time_dependent: bool,
    },
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Zero => write!(f, "Zero"),
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Polynomial(c) => write!(f, "Polynomial({c:?})"),
            Coefficient::Callback { time_dependent, .. } => {
                write!(f, "Callback {{ time_dependent: {time_dependent} }}")
            }
        }
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Zero => write!(f, "Zero"),
            Kernel::Constant(c) => write!(f, "Constant({c})"),
            Kernel::Gaussian { amplitude, range, shift } => {
                write!(f, "Gaussian {{ amplitude: {amplitude}, range: {range}, shift: {shift} }}")
            }
            Kernel::CosineGaussian { amplitude, range, wavenumber } => {
                write!(f, "CosineGaussian {{ amplitude: {amplitude}, range: {range}, wavenumber: {wavenumber} }}")
            }
            Kernel::Callback { time_dependent, .. } => {
                write!(f, "Callback {{ time_dependent: {time_dependent} }}")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// finite differences

/// Fornberg weights for the `m`-th derivative at 0 on the given offsets (unit spacing).
pub fn fornberg_weights(m: usize, offsets: &[f64]) -> Vec<f64> {
    let n = offsets.len();
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = offsets[0];
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = offsets[i];
        for j in 0..i {
            let c3 = offsets[i] - offsets[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Offsets and weights of the 6th-order-accurate central stencil for derivative `k`.
fn central_stencil(k: usize) -> (Vec<f64>, Vec<f64>) {
    let half = (k + 1) / 2 + 2;
    let offsets: Vec<f64> = (-(half as i64)..=half as i64).map(|i| i as f64).collect();
    let weights = fornberg_weights(k, &offsets);
    (offsets, weights)
}

/// Step used by the finite-difference fallback for total derivative order `k`.
///
/// `h = ε^{1/(k+6)} (1 + |x|)` keeps the Richardson-refined truncation error of
/// the 6th-order stencil and the O(ε/h^k) rounding error both near 1e−7 for
/// unit-scale functions up to order 4.
pub fn fd_step(k: usize, x: f64) -> f64 {
    f64::EPSILON.powf(1.0 / (k as f64 + 6.0)) * (1.0 + x.abs())
}

fn check_fd_order(k: usize) -> Result<(), ModelError> {
    if k > FD_MAX_ORDER {
        Err(ModelError::FiniteDifferenceOrder(k))
    } else {
        Ok(())
    }
}

/// `d^k f/dx^k` at `x`: 6th-order central stencil plus one Richardson pass with `h/2`.
pub fn fd_derivative(f: &dyn Fn(f64) -> f64, k: usize, x: f64) -> Result<f64, ModelError> {
    check_fd_order(k)?;
    if k == 0 {
        return Ok(f(x));
    }
    let (offs, w) = central_stencil(k);
    let at = |h: f64| -> f64 {
        let s: f64 = offs.iter().zip(&w).map(|(o, wi)| wi * f(x + o * h)).sum();
        s / h.powi(k as i32)
    };
    let h = fd_step(k, x);
    Ok((64.0 * at(0.5 * h) - at(h)) / 63.0)
}

/// Mixed partial `∂x^k ∂y^l f` at `(x, y)` by a tensor-product stencil.
pub fn fd_mixed(f: &dyn Fn(f64, f64) -> f64, k: usize, l: usize, x: f64, y: f64) -> Result<f64, ModelError> {
    check_fd_order(k + l)?;
    if k == 0 {
        return fd_derivative(&|yy| f(x, yy), l, y);
    }
    if l == 0 {
        return fd_derivative(&|xx| f(xx, y), k, x);
    }
    let (ox, wx) = central_stencil(k);
    let (oy, wy) = central_stencil(l);
    let at = |h: f64| -> f64 {
        let mut s = 0.0;
        for (o1, w1) in ox.iter().zip(&wx) {
            for (o2, w2) in oy.iter().zip(&wy) {
                s += w1 * w2 * f(x + o1 * h, y + o2 * h);
            }
        }
        s / h.powi((k + l) as i32)
    };
    let h = fd_step(k + l, x.abs().max(y.abs()));
    Ok((64.0 * at(0.5 * h) - at(h)) / 63.0)
}

// ---------------------------------------------------------------------------
// coefficient families

impl Coefficient {
    pub fn constant(c: f64) -> Self {
        Coefficient::Constant(c)
    }

    pub fn polynomial(c: impl Into<Vec<f64>>) -> Self {
        Coefficient::Polynomial(c.into())
    }

    pub fn callback(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Callback { f: Arc::new(f), time_dependent: true }
    }

    pub fn mode(&self) -> DerivativeMode {
        match self {
            Coefficient::Callback { .. } => DerivativeMode::FiniteDifference,
            _ => DerivativeMode::Analytic,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coefficient::Zero => true,
            Coefficient::Constant(c) => *c == 0.0,
            Coefficient::Polynomial(c) => c.iter().all(|v| *v == 0.0),
            Coefficient::Callback { .. } => false,
        }
    }

    /// Constant value if the coefficient is spatially and temporally constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Coefficient::Zero => Some(0.0),
            Coefficient::Constant(c) => Some(*c),
            Coefficient::Polynomial(c) if c.iter().skip(1).all(|v| *v == 0.0) => {
                Some(c.first().copied().unwrap_or(0.0))
            }
            _ => None,
        }
    }

    pub fn time_dependent(&self) -> bool {
        matches!(self, Coefficient::Callback { time_dependent: true, .. })
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        match self {
            Coefficient::Zero => 0.0,
            Coefficient::Constant(c) => *c,
            Coefficient::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ci| acc * x + ci),
            Coefficient::Callback { f, .. } => f(x, t),
        }
    }

    /// `∂^k f/∂x^k` at `(x, t)`.
    pub fn dx(&self, k: usize, x: f64, t: f64) -> Result<f64, ModelError> {
        match self {
            Coefficient::Zero => Ok(0.0),
            Coefficient::Constant(c) => Ok(if k == 0 { *c } else { 0.0 }),
            Coefficient::Polynomial(c) => {
                let mut acc = 0.0;
                for j in (k..c.len()).rev() {
                    let falling: f64 = ((j - k + 1)..=j).map(|v| v as f64).product();
                    acc = acc * x + c[j] * falling;
                }
                Ok(acc)
            }
            Coefficient::Callback { f, .. } => fd_derivative(&|xx| f(xx, t), k, x),
        }
    }
}

impl Kernel {
    pub fn gaussian(amplitude: f64, range: f64) -> Self {
        Kernel::Gaussian { amplitude, range, shift: 0.0 }
    }

    pub fn callback(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Kernel::Callback { f: Arc::new(f), time_dependent: true }
    }

    pub fn mode(&self) -> DerivativeMode {
        match self {
            Kernel::Callback { .. } => DerivativeMode::FiniteDifference,
            _ => DerivativeMode::Analytic,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Kernel::Zero => true,
            Kernel::Constant(c) => *c == 0.0,
            Kernel::Gaussian { amplitude, .. } | Kernel::CosineGaussian { amplitude, .. } => *amplitude == 0.0,
            Kernel::Callback { .. } => false,
        }
    }

    pub fn time_dependent(&self) -> bool {
        matches!(self, Kernel::Callback { time_dependent: true, .. })
    }

    /// Built-in kernels depend on `x − y` only.
    pub fn is_translation_invariant(&self) -> bool {
        !matches!(self, Kernel::Callback { .. })
    }

    /// Translation invariant and even in `x − y`.
    pub fn is_symmetric_difference_kernel(&self) -> bool {
        match self {
            Kernel::Gaussian { shift, .. } => *shift == 0.0,
            Kernel::Callback { .. } => false,
            _ => true,
        }
    }

    /// `∫ k(r) dr` over the real line, for the translation-invariant families.
    pub fn integral(&self) -> Option<f64> {
        use std::f64::consts::PI;
        match self {
            Kernel::Zero => Some(0.0),
            Kernel::Gaussian { amplitude, range, .. } => Some(amplitude * range * PI.sqrt()),
            Kernel::CosineGaussian { amplitude, range, wavenumber } => {
                Some(amplitude * range * PI.sqrt() * (-0.25 * wavenumber * wavenumber * range * range).exp())
            }
            Kernel::Constant(_) | Kernel::Callback { .. } => None,
        }
    }

    pub fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Constant(c) => *c,
            Kernel::Gaussian { amplitude, range, shift } => {
                let u = (x - y - shift) / range;
                amplitude * (-u * u).exp()
            }
            Kernel::CosineGaussian { amplitude, range, wavenumber } => {
                let r = x - y;
                amplitude * (-(r * r) / (range * range)).exp() * (wavenumber * r).cos()
            }
            Kernel::Callback { f, .. } => f(x, y, t),
        }
    }

    /// `n`-th derivative of the profile `g(r)` of a translation-invariant built-in.
    fn profile_derivative(&self, n: usize, r: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Constant(c) => {
                if n == 0 {
                    *c
                } else {
                    0.0
                }
            }
            Kernel::Gaussian { amplitude, range, shift } => {
                let u = (r - shift) / range;
                let h = hermite_poly(n, Complex64::new(u, 0.0)).map(|z| z.re).unwrap_or(f64::NAN);
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                amplitude * sign * range.powi(-(n as i32)) * h * (-u * u).exp()
            }
            Kernel::CosineGaussian { amplitude, range, wavenumber } => {
                let u = Complex64::new(r / range, -0.5 * wavenumber * range);
                let h = hermite_poly(n, u).unwrap_or(Complex64::new(f64::NAN, 0.0));
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                let damp = (-0.25 * wavenumber * wavenumber * range * range).exp();
                (amplitude * damp * sign * range.powi(-(n as i32)) * h * (-u * u).exp()).re
            }
            Kernel::Callback { .. } => unreachable!("callbacks have no profile"),
        }
    }

    /// `∂x^k ∂y^l k(x, y, t)`.
    pub fn partial(&self, k: usize, l: usize, x: f64, y: f64, t: f64) -> Result<f64, ModelError> {
        match self {
            Kernel::Callback { f, .. } => fd_mixed(&|xx, yy| f(xx, yy, t), k, l, x, y),
            _ => {
                let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                Ok(sign * self.profile_derivative(k + l, x - y))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// model

/// Which two-point kernel a query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Influence,
    NonlocalPotential,
}

/// Coefficient data of the equation.
///
/// The influence kernel `b` here is unrelated to the germ normalization also
/// called `b` elsewhere; the latter lives in [`crate::germ`].
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub diffusion: f64,
    pub kappa: f64,
    pub growth: Coefficient,
    pub influence: Kernel,
    pub potential: Coefficient,
    pub nonlocal_potential: Kernel,
    pub k_max: usize,
}

impl ModelSpec {
    /// Model with zero coefficients; `kappa = 0` is admitted as the degenerate linear case.
    pub fn new(diffusion: f64, kappa: f64) -> Result<Self, ModelError> {
        let m = ModelSpec {
            diffusion,
            kappa,
            growth: Coefficient::Zero,
            influence: Kernel::Zero,
            potential: Coefficient::Zero,
            nonlocal_potential: Kernel::Zero,
            k_max: DEFAULT_K_MAX,
        };
        m.validate()?;
        Ok(m)
    }

    /// Constant growth, Gaussian influence kernel, no convection.
    pub fn gaussian_competition(
        diffusion: f64,
        kappa: f64,
        growth: f64,
        amplitude: f64,
        range: f64,
    ) -> Result<Self, ModelError> {
        let mut m = Self::new(diffusion, kappa)?;
        m.growth = Coefficient::Constant(growth);
        m.influence = Kernel::gaussian(amplitude, range);
        m.validate()?;
        Ok(m)
    }

    pub fn with_growth(mut self, a: Coefficient) -> Self {
        self.growth = a;
        self
    }

    pub fn with_influence(mut self, b: Kernel) -> Self {
        self.influence = b;
        self
    }

    pub fn with_potential(mut self, v: Coefficient) -> Self {
        self.potential = v;
        self
    }

    pub fn with_nonlocal_potential(mut self, w: Kernel) -> Self {
        self.nonlocal_potential = w;
        self
    }

    pub fn with_diffusion(mut self, d: f64) -> Self {
        self.diffusion = d;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "diffusion must be positive and finite, got {}",
                self.diffusion
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "kappa must be nonnegative and finite, got {}",
                self.kappa
            )));
        }
        let kernel_ok = |k: &Kernel, name: &str| -> Result<(), ModelError> {
            match k {
                Kernel::Gaussian { amplitude, range, shift } => {
                    if !(range > &0.0) || !range.is_finite() || !amplitude.is_finite() || !shift.is_finite() {
                        return Err(ModelError::InvalidParameter(format!("{name}: bad Gaussian parameters")));
                    }
                }
                Kernel::CosineGaussian { amplitude, range, wavenumber } => {
                    if !(range > &0.0) || !range.is_finite() || !amplitude.is_finite() || !wavenumber.is_finite() {
                        return Err(ModelError::InvalidParameter(format!("{name}: bad cosine-Gaussian parameters")));
                    }
                }
                Kernel::Constant(c) if !c.is_finite() => {
                    return Err(ModelError::InvalidParameter(format!("{name}: non-finite constant")));
                }
                _ => {}
            }
            Ok(())
        };
        kernel_ok(&self.influence, "influence kernel")?;
        kernel_ok(&self.nonlocal_potential, "nonlocal potential")?;
        for (c, name) in [(&self.growth, "growth"), (&self.potential, "potential")] {
            let bad = match c {
                Coefficient::Constant(v) => !v.is_finite(),
                Coefficient::Polynomial(v) => v.iter().any(|x| !x.is_finite()),
                _ => false,
            };
            if bad {
                return Err(ModelError::InvalidParameter(format!("{name}: non-finite coefficient")));
            }
        }
        Ok(())
    }

    fn check_order(&self, requested: usize) -> Result<(), ModelError> {
        if requested > self.k_max {
            Err(ModelError::OrderExceeded { requested, k_max: self.k_max })
        } else {
            Ok(())
        }
    }

    pub fn kernel(&self, which: KernelKind) -> &Kernel {
        match which {
            KernelKind::Influence => &self.influence,
            KernelKind::NonlocalPotential => &self.nonlocal_potential,
        }
    }

    /// True when no coefficient depends on time (lets solvers cache kernel matrices).
    pub fn is_autonomous(&self) -> bool {
        !(self.growth.time_dependent()
            || self.potential.time_dependent()
            || self.influence.time_dependent()
            || self.nonlocal_potential.time_dependent())
    }

    /// `a_k(t) = ∂^k a/∂x^k` at `x = X`.
    pub fn taylor_a(&self, k: usize, t: f64, x: f64) -> Result<f64, ModelError> {
        self.check_order(k)?;
        self.growth.dx(k, x, t)
    }

    /// `b_{k,l}(t) = ∂x^k ∂y^l b` at `x = y = X`.
    pub fn taylor_b(&self, k: usize, l: usize, t: f64, x: f64) -> Result<f64, ModelError> {
        self.check_order(k + l)?;
        self.influence.partial(k, l, x, x, t)
    }

    /// `V_k(t) = ∂^k V_x/∂x^k` at `x = X`, i.e. a derivative of order `k + 1` of `V`.
    pub fn taylor_v(&self, k: usize, t: f64, x: f64) -> Result<f64, ModelError> {
        self.check_order(k + 1)?;
        self.potential.dx(k + 1, x, t)
    }

    /// `W_{k,l}(t) = ∂x^k ∂y^l W_x` at `x = y = X`.
    pub fn taylor_w(&self, k: usize, l: usize, t: f64, x: f64) -> Result<f64, ModelError> {
        self.check_order(k + l + 1)?;
        self.nonlocal_potential.partial(k + 1, l, x, x, t)
    }

    /// `∂^l k(x, y, t)/∂y^l` at `y = x_u`, as a function of the free `x`.
    ///
    /// For [`KernelKind::NonlocalPotential`] this is the derivative of `W` itself;
    /// use [`ModelSpec::partial_w_x`] for the `W_x` version entering the velocity.
    pub fn partial_kernel_y(&self, which: KernelKind, l: usize, x: f64, x_u: f64, t: f64) -> Result<f64, ModelError> {
        self.check_order(l)?;
        self.kernel(which).partial(0, l, x, x_u, t)
    }

    /// `∂x^k ∂y^l W_x(x, y, t)` at `y = x_u`.
    pub fn partial_w_x(&self, k: usize, l: usize, x: f64, x_u: f64, t: f64) -> Result<f64, ModelError> {
        self.check_order(k + l + 1)?;
        self.nonlocal_potential.partial(k + 1, l, x, x_u, t)
    }

    /// `∂x^k ∂y^l b(x, y, t)` at `y = x_u`.
    pub fn partial_b(&self, k: usize, l: usize, x: f64, x_u: f64, t: f64) -> Result<f64, ModelError> {
        self.check_order(k + l)?;
        self.influence.partial(k, l, x, x_u, t)
    }

    /// `∂x^k V_x` at `(x, t)`.
    pub fn potential_x(&self, k: usize, x: f64, t: f64) -> Result<f64, ModelError> {
        self.check_order(k + 1)?;
        self.potential.dx(k + 1, x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fornberg_reproduces_textbook_stencils() {
        let w = fornberg_weights(2, &[-1.0, 0.0, 1.0]);
        assert_eq!(w, vec![1.0, -2.0, 1.0]);
        let w = fornberg_weights(2, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let expect = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_growth_taylor() {
        let m = ModelSpec::new(0.01, 1.0).unwrap().with_growth(Coefficient::Constant(2.0));
        assert_eq!(m.taylor_a(0, 0.3, 1.7).unwrap(), 2.0);
        for k in 1..=6 {
            assert_eq!(m.taylor_a(k, 0.3, 1.7).unwrap(), 0.0);
        }
        assert!(matches!(m.taylor_a(7, 0.0, 0.0), Err(ModelError::OrderExceeded { .. })));
    }

    #[test]
    fn quadratic_growth_second_derivative() {
        let m = ModelSpec::new(0.01, 1.0).unwrap().with_growth(Coefficient::polynomial(vec![0.0, 0.0, 1.0]));
        assert_eq!(m.taylor_a(2, 0.0, 0.0).unwrap(), 2.0);
        let h = 1e-5;
        let f = |x: f64| x * x;
        let fd = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
        assert!((fd - m.taylor_a(2, 0.0, 0.0).unwrap()).abs() < 1e-6);
        let cb = Coefficient::callback(|x, _| x * x);
        assert!((cb.dx(2, 0.0, 0.0).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_kernel_taylor_values() {
        let (b0, g) = (1.3, 0.7);
        let m = ModelSpec::new(0.01, 1.0).unwrap().with_influence(Kernel::gaussian(b0, g));
        assert!((m.taylor_b(0, 0, 0.0, 0.4).unwrap() - b0).abs() < 1e-15);
        assert_eq!(m.taylor_b(1, 0, 0.0, 0.4).unwrap(), 0.0);
        let beta = m.taylor_b(2, 0, 0.0, 0.4).unwrap();
        assert!((beta + 2.0 * b0 / (g * g)).abs() < 1e-13);
        let cb = Kernel::callback(move |x, y, _| b0 * (-((x - y) / g).powi(2)).exp());
        assert!((cb.partial(2, 0, 0.4, 0.4, 0.0).unwrap() - beta).abs() < 1e-6);
    }

    #[test]
    fn partial_kernel_y_values() {
        let (b0, g) = (1.0, 0.5);
        let m = ModelSpec::new(0.01, 1.0).unwrap().with_influence(Kernel::gaussian(b0, g));
        let v = m.partial_kernel_y(KernelKind::Influence, 0, 0.3, -0.1, 0.0).unwrap();
        assert!((v - b0 * (-(0.4f64 / g).powi(2)).exp()).abs() < 1e-15);
        assert_eq!(m.partial_kernel_y(KernelKind::Influence, 1, 0.2, 0.2, 0.0).unwrap(), 0.0);
        let v2 = m.partial_kernel_y(KernelKind::Influence, 2, 0.2, 0.2, 0.0).unwrap();
        assert!((v2 + 2.0 * b0 / (g * g)).abs() < 1e-12);
        let fd = fd_derivative(&|y| m.influence.value(0.2, y, 0.0), 2, 0.2).unwrap();
        assert!((fd - v2).abs() < 1e-6);
    }

    #[test]
    fn potential_taylor_is_shifted_by_one_order() {
        // V = x²/2 → V_x = x, V_1 = 1
        let m = ModelSpec::new(0.01, 1.0).unwrap().with_potential(Coefficient::polynomial(vec![0.0, 0.0, 0.5]));
        assert_eq!(m.taylor_v(0, 0.0, 0.7).unwrap(), 0.7);
        assert_eq!(m.taylor_v(1, 0.0, 0.7).unwrap(), 1.0);
        assert!(matches!(m.taylor_v(6, 0.0, 0.0), Err(ModelError::OrderExceeded { .. })));
    }

    fn builtin_kernels() -> Vec<Kernel> {
        vec![
            Kernel::Constant(0.7),
            Kernel::gaussian(1.2, 0.8),
            Kernel::Gaussian { amplitude: 0.9, range: 1.1, shift: 0.3 },
            Kernel::CosineGaussian { amplitude: 1.0, range: 0.9, wavenumber: 2.0 },
        ]
    }

    #[test]
    fn analytic_and_finite_difference_providers_agree() {
        let probes = [
            (-1.0, 0.0),
            (-1.0, 0.5),
            (-1.0, 1.0),
            (0.0, 0.0),
            (0.0, 0.5),
            (0.0, 1.0),
            (1.0, 0.0),
            (1.0, 0.5),
            (1.0, 1.0),
        ];
        let coeffs = [Coefficient::Constant(1.5), Coefficient::polynomial(vec![0.3, -1.0, 0.5, 0.25, -0.1])];
        for c in &coeffs {
            let cc = c.clone();
            let fd = Coefficient::callback(move |x, t| cc.value(x, t));
            for &(x, t) in &probes {
                for k in 0..=4 {
                    let a = c.dx(k, x, t).unwrap();
                    let b = fd.dx(k, x, t).unwrap();
                    assert!((a - b).abs() < 1e-6, "coefficient k={k} x={x}: {a} vs {b}");
                }
            }
        }
        for kern in builtin_kernels() {
            let kk = kern.clone();
            let fd = Kernel::callback(move |x, y, t| kk.value(x, y, t));
            for &(x, t) in &probes {
                let y = 0.5 * x - 0.2;
                for k in 0..=4 {
                    for l in 0..=(4 - k) {
                        let a = kern.partial(k, l, x, y, t).unwrap();
                        let b = fd.partial(k, l, x, y, t).unwrap();
                        assert!((a - b).abs() < 1e-6, "{kern:?} ({k},{l}) at {x}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn cosine_gaussian_integral_matches_quadrature() {
        let k = Kernel::CosineGaussian { amplitude: 1.0, range: 0.9, wavenumber: 2.0 };
        let n = 20_000;
        let h = 40.0 / n as f64;
        let q: f64 = (0..=n).map(|i| k.value(-20.0 + i as f64 * h, 0.0, 0.0)).sum::<f64>() * h;
        assert!((q - k.integral().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ModelSpec::new(0.0, 1.0).is_err());
        assert!(ModelSpec::new(0.01, -1.0).is_err());
        let m = ModelSpec::new(0.01, 1.0).unwrap().with_influence(Kernel::gaussian(1.0, 0.0));
        assert!(m.validate().is_err());
        assert!(matches!(fd_derivative(&|x| x, 9, 0.0), Err(ModelError::FiniteDifferenceOrder(9))));
    }

    proptest! {
        #[test]
        fn translation_invariant_chain_rule(
            b0 in 0.1f64..3.0, g in 0.3f64..2.0, shift in -0.5f64..0.5,
            kappa_w in 0.0f64..3.0, x in -2.0f64..2.0, k in 0usize..=4, l in 0usize..=4,
        ) {
            prop_assume!(k + l <= 4);
            for kern in [
                Kernel::Gaussian { amplitude: b0, range: g, shift },
                Kernel::CosineGaussian { amplitude: b0, range: g, wavenumber: kappa_w },
            ] {
                let mixed = kern.partial(k, l, x, x, 0.0).unwrap();
                let pure = kern.partial(k + l, 0, x, x, 0.0).unwrap();
                let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                prop_assert!((mixed - sign * pure).abs() <= 1e-9);
            }
        }
    }
}
