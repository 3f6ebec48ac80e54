//! Hermite polynomials, Hermite functions and the closed-form Gaussian-Hermite
//! integrals used when normalizing trajectory-coherent states.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

/// Complex scalar used for Hermite evaluation off the real axis.
pub type ComplexScalar = Complex64;

/// Largest polynomial degree accepted by the evaluators in this module.
pub const HERMITE_MAX_DEGREE: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecFunError {
    #[error("Hermite degree {0} exceeds the supported cap of {HERMITE_MAX_DEGREE}")]
    DegreeCap(usize),
    #[error("non-finite argument {0}")]
    NonFinite(String),
    #[error("Gaussian width must be positive, got {0}")]
    NonPositiveWidth(f64),
}

fn check_degree(n: usize) -> Result<(), SpecFunError> {
    if n > HERMITE_MAX_DEGREE {
        Err(SpecFunError::DegreeCap(n))
    } else {
        Ok(())
    }
}

/// Physicists' Hermite polynomial `H_n(z)` by forward recurrence
/// `H_{n+1} = 2 z H_n - 2 n H_{n-1}`.
pub fn hermite_poly(n: usize, z: ComplexScalar) -> Result<ComplexScalar, SpecFunError> {
    check_degree(n)?;
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(SpecFunError::NonFinite(format!("{z}")));
    }
    Ok(scaled_hermite(n, 2.0 * z, Complex64::new(1.0, 0.0)))
}

/// Real-argument convenience wrapper around [`hermite_poly`].
pub fn hermite(n: usize, x: f64) -> Result<f64, SpecFunError> {
    Ok(hermite_poly(n, Complex64::new(x, 0.0))?.re)
}

/// Evaluates `G_n = r^n H_n(w / r)` through the recurrence
/// `G_{k+1} = 2w G_k - 2k r^2 G_{k-1}`, written in terms of `two_w = 2w` and `r2 = r^2`.
///
/// The result is a polynomial in `r^2`, so it is branch free and stays finite as `r -> 0`.
pub(crate) fn scaled_hermite(n: usize, two_w: Complex64, r2: Complex64) -> Complex64 {
    let mut prev = Complex64::new(1.0, 0.0);
    if n == 0 {
        return prev;
    }
    let mut cur = two_w;
    for k in 1..n {
        let next = two_w * cur - 2.0 * k as f64 * r2 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// All L2-normalized Hermite functions `u_0(x) .. u_n(x)`.
///
/// Uses the normalized three-term recurrence so that large degrees neither
/// overflow nor underflow at moderate `|x|`.
pub fn hermite_functions(n: usize, x: f64) -> Result<Vec<f64>, SpecFunError> {
    check_degree(n)?;
    if !x.is_finite() {
        return Err(SpecFunError::NonFinite(format!("{x}")));
    }
    let mut out = Vec::with_capacity(n + 1);
    let u0 = PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(u0);
    if n >= 1 {
        out.push(2f64.sqrt() * x * u0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
        out.push(next);
    }
    Ok(out)
}

/// Hermite function `u_n(x) = H_n(x) e^{-x^2/2} / (2^n n! sqrt(pi))^{1/2}`.
pub fn hermite_function(n: usize, x: f64) -> Result<f64, SpecFunError> {
    Ok(hermite_functions(n, x)?[n])
}

/// `ln(n!)` accumulated in floating point; exact enough for the normalizations here.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `I_n = ∫ H_n(y) e^{-y^2/2} dy`: zero for odd `n`, `sqrt(2π) (2l)!/l!` for `n = 2l`.
pub fn gauss_hermite_i(n: usize) -> Result<f64, SpecFunError> {
    check_degree(n)?;
    if n % 2 == 1 {
        return Ok(0.0);
    }
    let l = n / 2;
    Ok((2.0 * PI).sqrt() * (ln_factorial(2 * l) - ln_factorial(l)).exp())
}

/// `J_n = ∫ y^2 H_{2n}(y) e^{-y^2/2} dy = sqrt(2π) (2n)!/n! (1 + 4n)`.
pub fn gauss_hermite_j(n: usize) -> Result<f64, SpecFunError> {
    check_degree(2 * n)?;
    let ratio = (ln_factorial(2 * n) - ln_factorial(n)).exp();
    Ok((2.0 * PI).sqrt() * ratio * (1.0 + 4.0 * n as f64))
}

/// `∫ exp(-w^2 y^2 + 2 s y) dy = (sqrt(π)/w) exp(s^2/w^2)` for `w > 0`.
pub fn gaussian_linear_integral(width: f64, s: f64) -> Result<f64, SpecFunError> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(SpecFunError::NonPositiveWidth(width));
    }
    if !s.is_finite() {
        return Err(SpecFunError::NonFinite(format!("{s}")));
    }
    Ok(PI.sqrt() / width * (s * s / (width * width)).exp())
}
