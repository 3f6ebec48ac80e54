//! Small perturbations of the homogeneous (Verhulst) background for the
//! constant-growth, Gaussian-kernel equation
//! `u_t = D u_xx + a u − ϰ u ∫ b(x − y) u(y) dy`, `b(r) = b0 exp(−r²/γ²)`.
//!
//! The first-order correction `ū¹` has a closed Fourier representation; with a
//! Hermite-function initial profile it becomes a factorially convergent series
//! in `X(t) = ϰ b0 √π γ χ(t)`, where `χ = ∫β`. That series alternates, so beyond
//! [`SERIES_X_LIMIT`] the evaluators switch to direct spectral quadrature.

use std::f64::consts::{PI, SQRT_2};
use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{Field, FieldError, FieldGrid};
use crate::model::{ModelError, ModelSpec};
use crate::quad::simpson_weights;
use crate::specfun::{hermite_functions, ln_factorial, scaled_hermite, SpecFunError};

/// Stop the k-series once the tail bound is below this fraction of the partial sum.
pub const TAIL_RTOL: f64 = 1e-14;
/// Hard cap on the number of k-terms.
pub const K_MAX: usize = 200;
/// Above this `X` the alternating series loses more than ~4 digits to cancellation.
pub const SERIES_X_LIMIT: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LargeTimeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("background blows up before t = {t} (kernel mass B < 0)")]
    BlowUp { t: f64 },
    #[error("k-series hit the cap of {k} terms with relative tail bound {tail:e}")]
    TruncationCap { k: usize, tail: f64 },
    #[error("alternating series at X = {x:.3} exceeds the cancellation limit {limit}; use the spectral path")]
    Cancellation { x: f64, limit: f64 },
    #[error("perturbation leaves the grid: boundary/max ratio {ratio:e}")]
    BoundaryMass { ratio: f64 },
    #[error("odd panel count {0}; Simpson needs an even count")]
    OddPanels(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, LargeTimeError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeTimeParams {
    pub a: f64,
    pub b0: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub diffusion: f64,
    pub beta0: f64,
    pub eps: f64,
    pub theta: f64,
    pub x0: f64,
    /// Profile normalizer `N`.
    pub norm: f64,
    /// Hermite index of the initial profile.
    pub n: usize,
}

impl Default for LargeTimeParams {
    fn default() -> Self {
        LargeTimeParams {
            a: 1.0,
            b0: 1.0,
            gamma: 1.0,
            kappa: 1.0,
            diffusion: 0.01,
            beta0: 1.0,
            eps: 0.05,
            theta: 2.0,
            x0: 0.0,
            norm: 1.0,
            n: 0,
        }
    }
}

impl LargeTimeParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a", self.a),
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("diffusion", self.diffusion),
            ("beta0", self.beta0),
            ("eps", self.eps),
            ("theta", self.theta),
            ("norm", self.norm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(LargeTimeError::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.b0.is_finite() || !self.x0.is_finite() {
            return Err(LargeTimeError::InvalidParams("b0 and x0 must be finite".into()));
        }
        let bound = 0.1 * self.beta0 / self.profile_l2();
        if self.eps >= bound {
            return Err(LargeTimeError::InvalidParams(format!(
                "eps = {} is not small: need eps < 0.1 beta0/||phi|| = {bound}",
                self.eps
            )));
        }
        Ok(())
    }

    /// `B = ∫ b = b0 γ √π`.
    pub fn kernel_mass(&self) -> f64 {
        self.b0 * self.gamma * PI.sqrt()
    }

    /// `a/(ϰB)`, the stationary level; `None` unless `B > 0`.
    pub fn limit(&self) -> Option<f64> {
        let b = self.kernel_mass();
        (b > 0.0).then(|| self.a / (self.kappa * b))
    }

    /// `‖φ‖₂ = N/√θ`.
    pub fn profile_l2(&self) -> f64 {
        self.norm / self.theta.sqrt()
    }

    /// `φ(x) = N u_n(θ(x − x0))`.
    pub fn profile(&self, x: f64) -> Result<f64> {
        Ok(self.norm * crate::specfun::hermite_function(self.n, self.theta * (x - self.x0))?)
    }

    /// The full equation with these coefficients, for the direct solver.
    pub fn model(&self) -> Result<ModelSpec> {
        Ok(ModelSpec::gaussian_competition(self.diffusion, self.kappa, self.a, self.b0, self.gamma)?)
    }

    fn z(&self) -> f64 {
        self.kappa * self.beta0 * self.kernel_mass() / self.a
    }

    /// `ln(β/β0) = at − ϰBχ`, computed without overflow.
    fn ln_growth(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(LargeTimeError::NegativeTime(t));
        }
        let z = self.z();
        let e = (-self.a * t).exp();
        // β0 e^{at}/(1 + z(e^{at} − 1)) = β0/(e^{−at} + z(1 − e^{−at}))
        let den = e + z * (-(-self.a * t).exp_m1());
        if !(den > 0.0) || !den.is_finite() {
            return Err(LargeTimeError::BlowUp { t });
        }
        Ok(-den.ln())
    }

    /// `X(t) = ϰ b0 √π γ χ(t)`, the k-series argument.
    pub fn series_argument(&self, t: f64) -> Result<f64> {
        Ok(self.kappa * self.b0 * PI.sqrt() * self.gamma * chi(t, self)?)
    }
}

/// Homogeneous background `β(t) = β0 e^{at}/(1 + ϰβ0B(e^{at} − 1)/a)`.
pub fn background(t: f64, p: &LargeTimeParams) -> Result<f64> {
    Ok(p.beta0 * p.ln_growth(t)?.exp())
}

/// `χ(t) = ∫₀ᵗ β = ln(1 + ϰβ0B(e^{at} − 1)/a)/(ϰB)`; `β0(e^{at} − 1)/a` when `B = 0`.
pub fn chi(t: f64, p: &LargeTimeParams) -> Result<f64> {
    let ln_g = p.ln_growth(t)?;
    let kb = p.kappa * p.kernel_mass();
    if kb == 0.0 {
        return Ok(p.beta0 * (p.a * t).exp_m1() / p.a);
    }
    let z = p.z();
    let c = (p.a * t).exp_m1();
    if p.a * t < 1.0 {
        // ln(1 + zc)/(ϰB), accurate for small zc
        let zc = z * c;
        let ratio = if zc == 0.0 { 1.0 } else { zc.ln_1p() / zc };
        return Ok(p.beta0 * c / p.a * ratio);
    }
    // ln(1 + zc) = at − ln(β/β0)
    Ok((p.a * t - ln_g) / kb)
}

/// Fourier image `b̃(p) = (γ/√2) b0 exp(−p²γ²/4)` of the Gaussian kernel (unitary convention).
pub fn kernel_fourier(pval: f64, p: &LargeTimeParams) -> f64 {
    p.gamma / SQRT_2 * p.b0 * (-0.25 * pval * pval * p.gamma * p.gamma).exp()
}

/// Fourier image of the Hermite profile: `(−i)^n (N/θ) e^{−i p x0} u_n(p/θ)`.
pub fn profile_fourier(pval: f64, p: &LargeTimeParams) -> Result<Complex64> {
    let un = crate::specfun::hermite_function(p.n, pval / p.theta)?;
    Ok(neg_i_pow(p.n) * Complex64::from_polar(p.norm / p.theta * un, -pval * p.x0))
}

/// `ũ¹(p, t) = φ̃(p) exp{−Dp²t + at − ϰ[B + √(2π) b̃(p)] χ(t)}`.
pub fn u1_fourier(pval: f64, t: f64, p: &LargeTimeParams, phi_hat: impl Fn(f64) -> Complex64) -> Result<Complex64> {
    Ok(phi_hat(pval) * spectral_multiplier(pval, t, p)?)
}

/// `exp{−Dp²t + at − ϰ[B + √(2π) b̃(p)] χ(t)}`.
fn spectral_multiplier(pval: f64, t: f64, p: &LargeTimeParams) -> Result<f64> {
    let ln_g = p.ln_growth(t)?;
    let x = p.series_argument(t)?;
    Ok(multiplier_from(pval, t, ln_g, x, p))
}

fn multiplier_from(pval: f64, t: f64, ln_g: f64, x: f64, p: &LargeTimeParams) -> f64 {
    let q = pval * pval;
    (ln_g - p.diffusion * q * t - x * (-0.25 * q * p.gamma * p.gamma).exp()).exp()
}

fn neg_i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// Outcome of a k-series summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum {
    pub value: f64,
    /// Number of terms used.
    pub terms: usize,
    /// Bound on the neglected tail.
    pub tail: f64,
}

/// `Σ_k (−X)^k/k! f(k)` for `f` with `|f(k+1)| ≤ |f(k)|` asymptotically.
///
/// Once `k ≥ 2X` the weights shrink at least geometrically with ratio `X/(k+1)`,
/// which gives the tail bound used for stopping.
fn k_series(x: f64, mut f: impl FnMut(usize) -> f64) -> Result<SeriesSum> {
    let mut w = 1.0;
    let mut sum = 0.0;
    let mut tail = f64::INFINITY;
    for k in 0..K_MAX {
        let term = w * f(k);
        sum += term;
        let r = x / (k + 1) as f64;
        if k as f64 >= 2.0 * x && r < 1.0 {
            tail = term.abs() * r / (1.0 - r);
            if tail <= TAIL_RTOL * sum.abs() {
                return Ok(SeriesSum { value: sum, terms: k + 1, tail });
            }
        }
        w *= -r;
    }
    Err(LargeTimeError::TruncationCap { k: K_MAX, tail: tail / sum.abs() })
}

fn check_series_argument(x: f64) -> Result<()> {
    if x > SERIES_X_LIMIT {
        return Err(LargeTimeError::Cancellation { x, limit: SERIES_X_LIMIT });
    }
    Ok(())
}

/// `ū¹_n(x, t)` by the Hermite k-series.
///
/// Each k-term is a Gaussian times `(−i)^n μ^n H_n(2iθy/√(Q² − 4))` with
/// `Q = (4Dt + kγ²)θ²`, `μ² = (Q − 2)/(Q + 2)`. That product equals the real
/// polynomial `Σ_j n!/(j!(n−2j)!) (2v)^{n−2j} μ^{2j}`, `v = 2θy/(Q + 2)`, which is
/// branch free across `Q = 2` and so needs no complex arithmetic.
pub fn u1_series(x: f64, t: f64, p: &LargeTimeParams) -> Result<f64> {
    Ok(u1_series_sum(x, t, p)?.value)
}

/// [`u1_series`] with the truncation report.
pub fn u1_series_sum(x: f64, t: f64, p: &LargeTimeParams) -> Result<SeriesSum> {
    let xs = p.series_argument(t)?;
    check_series_argument(xs)?;
    let ln_g = p.ln_growth(t)?;
    let n = p.n;
    let cn = (-0.5 * (n as f64 * 2f64.ln() + ln_factorial(n) + 0.5 * PI.ln())).exp();
    let y = x - p.x0;
    let th = p.theta;
    let mut s = k_series(xs, |k| {
        let q = (4.0 * p.diffusion * t + k as f64 * p.gamma * p.gamma) * th * th;
        let mu2 = (q - 2.0) / (q + 2.0);
        let v = 2.0 * th * y / (q + 2.0);
        let poly = scaled_hermite(n, Complex64::new(2.0 * v, 0.0), Complex64::new(-mu2, 0.0)).re;
        (2.0 / (q + 2.0)).sqrt() * (-th * th * y * y / (q + 2.0)).exp() * poly
    })?;
    let scale = p.norm * cn * ln_g.exp();
    s.value *= scale;
    s.tail *= scale;
    Ok(s)
}

/// Node set for trapezoid quadrature over the spectral variable.
fn spectral_nodes(p: &LargeTimeParams, t: f64, y_max: f64) -> (Vec<f64>, f64) {
    let th = p.theta;
    // u_n(p/θ) is below e^{-72} past this point
    let p_max = th * ((2.0 * p.n as f64 + 1.0).sqrt() + 12.0);
    // resolve the oscillation e^{ipy} and keep aliased images far from the field
    let width = 20.0 / th + 20.0 * p.gamma + 20.0 * (p.diffusion * t).sqrt();
    let h = (0.05 * th).min(2.0 * PI / (4.0 * (y_max + width)));
    let m = (p_max / h).ceil() as usize;
    ((0..=2 * m).map(|i| (i as f64 - m as f64) * h).collect(), h)
}

/// `ū¹_n` at the points `xs` by direct quadrature of its Fourier representation.
///
/// The integrand is entire and Gaussian-decaying, so the trapezoid rule is
/// spectrally accurate; this path has no cancellation issue at large `X`.
pub fn u1_spectral(xs: &[f64], t: f64, p: &LargeTimeParams) -> Result<Vec<f64>> {
    let ln_g = p.ln_growth(t)?;
    let xarg = p.series_argument(t)?;
    let y_max = xs.iter().fold(0.0f64, |m, x| m.max((x - p.x0).abs()));
    let (nodes, h) = spectral_nodes(p, t, y_max);
    let mut weights = Vec::with_capacity(nodes.len());
    for &q in &nodes {
        let un = crate::specfun::hermite_function(p.n, q / p.theta)?;
        weights.push(h * un * multiplier_from(q, t, ln_g, xarg, p));
    }
    // Re[(−i)^n e^{ipy}] = cos(py − nπ/2)
    let shift = 0.5 * PI * (p.n % 4) as f64;
    let scale = p.norm / (p.theta * (2.0 * PI).sqrt());
    Ok(xs
        .par_iter()
        .map(|&x| {
            let y = x - p.x0;
            scale * nodes.iter().zip(&weights).map(|(&q, &w)| w * (q * y - shift).cos()).sum::<f64>()
        })
        .collect())
}

/// `ū¹_n` on a grid: the k-series while `X ≤` [`SERIES_X_LIMIT`], spectral quadrature beyond.
pub fn u1_field(grid: &FieldGrid, t: f64, p: &LargeTimeParams) -> Result<Field> {
    let xs = grid.nodes();
    let values = if p.series_argument(t)? <= SERIES_X_LIMIT {
        xs.par_iter().map(|&x| u1_series(x, t, p)).collect::<Result<Vec<_>>>()?
    } else {
        u1_spectral(&xs, t, p)?
    };
    Ok(Field::new(*grid, values)?)
}

/// `u₀ + εū¹ = β(t) + εū¹(x, t)`.
pub fn perturbed_field(grid: &FieldGrid, t: f64, p: &LargeTimeParams) -> Result<Field> {
    let beta = background(t, p)?;
    Ok(u1_field(grid, t, p)?.map(|_, v| beta + p.eps * v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientMethod {
    /// Closed-form k-series (initial index 0).
    Series,
    /// Quadrature over the spectral variable.
    Quadrature,
}

/// Coefficients of `ū¹_n` in the basis `u_m(θ(x − x0))`, `m ≤ m_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSeries {
    pub n: usize,
    pub m_max: usize,
    pub times: Vec<f64>,
    /// `values[i][m] = C_m(times[i])`.
    pub values: Vec<Vec<f64>>,
    pub method: Vec<CoefficientMethod>,
    /// k-terms used (0 for quadrature).
    pub terms: Vec<usize>,
    /// Largest neglected-tail bound over `m` (0 for quadrature).
    pub tail: Vec<f64>,
}

impl CoefficientSeries {
    /// `Σ_m C_m(t_i) u_m(θ(x − x0))`.
    pub fn reconstruct(&self, i: usize, x: f64, p: &LargeTimeParams) -> Result<f64> {
        let u = hermite_functions(self.m_max, p.theta * (x - p.x0))?;
        Ok(self.values[i].iter().zip(&u).map(|(c, u)| c * u).sum())
    }

    /// CSV `t,m,C_m`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,m,C_m")?;
        for (t, row) in self.times.iter().zip(&self.values) {
            for (m, c) in row.iter().enumerate() {
                writeln!(w, "{t},{m},{c:e}")?;
            }
        }
        Ok(())
    }
}

/// `C_m^(n)(t)` for every requested time.
///
/// Index 0 uses the closed k-series `C_{2l} = N √((2l)!)/(2^{l−1} l!) (β/β0)
/// Σ_k (−X)^k/k! (Q_k + 4)^{−1/2} (Q_k/(Q_k + 4))^l` while `X ≤` [`SERIES_X_LIMIT`];
/// other indices, and large `X`, use the spectral integral
/// `C_m = (−i)^{n−m} N ∫ u_n(s) u_m(s) E(θs) ds`. Entries with `n − m` odd are exactly zero.
pub fn coefficients(n: usize, times: &[f64], m_max: usize, p: &LargeTimeParams) -> Result<CoefficientSeries> {
    let rows = times.par_iter().map(|&t| coefficients_at(n, t, m_max, p)).collect::<Result<Vec<_>>>()?;
    let mut out = CoefficientSeries {
        n,
        m_max,
        times: times.to_vec(),
        values: Vec::with_capacity(times.len()),
        method: Vec::with_capacity(times.len()),
        terms: Vec::with_capacity(times.len()),
        tail: Vec::with_capacity(times.len()),
    };
    for (values, method, terms, tail) in rows {
        out.values.push(values);
        out.method.push(method);
        out.terms.push(terms);
        out.tail.push(tail);
    }
    Ok(out)
}

type CoefficientRow = (Vec<f64>, CoefficientMethod, usize, f64);

fn coefficients_at(n: usize, t: f64, m_max: usize, p: &LargeTimeParams) -> Result<CoefficientRow> {
    let ln_g = p.ln_growth(t)?;
    let xarg = p.series_argument(t)?;
    if n == 0 && xarg <= SERIES_X_LIMIT {
        let mut values = vec![0.0; m_max + 1];
        let mut terms = 0;
        let mut tail = 0.0f64;
        for l in 0..=m_max / 2 {
            let s = even_coefficient_series(l, t, ln_g, xarg, p)?;
            values[2 * l] = s.value;
            terms = terms.max(s.terms);
            tail = tail.max(s.tail);
        }
        return Ok((values, CoefficientMethod::Series, terms, tail));
    }
    let big = n.max(m_max);
    let s_max = (2.0 * big as f64 + 1.0).sqrt() + 9.0;
    let h = 0.01;
    let k = (s_max / h).ceil() as usize;
    let mut acc = vec![0.0; m_max + 1];
    for i in 0..=2 * k {
        let s = (i as f64 - k as f64) * h;
        let u = hermite_functions(big, s)?;
        let e = multiplier_from(p.theta * s, t, ln_g, xarg, p);
        for (m, a) in acc.iter_mut().enumerate() {
            *a += h * u[n] * u[m] * e;
        }
    }
    let values = acc
        .iter()
        .enumerate()
        .map(|(m, a)| {
            if (n + m) % 2 == 1 {
                0.0
            } else {
                // (−i)^{n−m} = (−1)^{(n−m)/2}
                let sign = if ((n as i64 - m as i64) / 2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                sign * p.norm * a
            }
        })
        .collect();
    Ok((values, CoefficientMethod::Quadrature, 0, 0.0))
}

fn even_coefficient_series(l: usize, t: f64, ln_g: f64, xarg: f64, p: &LargeTimeParams) -> Result<SeriesSum> {
    let th2 = p.theta * p.theta;
    let mut s = k_series(xarg, |k| {
        let q = (4.0 * p.diffusion * t + k as f64 * p.gamma * p.gamma) * th2;
        let ratio = q / (q + 4.0);
        let pow = if l == 0 { 1.0 } else { ratio.powi(l as i32) };
        pow / (q + 4.0).sqrt()
    })?;
    // N √((2l)!)/(2^{l−1} l!)
    let lf = 0.5 * ln_factorial(2 * l) - (l as f64 - 1.0) * 2f64.ln() - ln_factorial(l);
    let scale = p.norm * (lf + ln_g).exp();
    s.value *= scale;
    s.tail *= scale;
    Ok(s)
}

/// Large-time form `N √((2l)!)/(2^l l! θ² √(Dt)) exp(b0 π a t/(γB))`.
///
/// Kept for comparison only: it does not follow from the sign-correct series (see `u1_series`).
pub fn coefficient_asymptote(l: usize, t: f64, p: &LargeTimeParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(LargeTimeError::InvalidParams(format!("asymptote needs t > 0, got {t}")));
    }
    let lf = 0.5 * ln_factorial(2 * l) - l as f64 * 2f64.ln() - ln_factorial(l);
    let b = p.kernel_mass();
    Ok(p.norm * lf.exp() / (p.theta * p.theta * (p.diffusion * t).sqrt()) * (p.b0 * PI * p.a * t / (p.gamma * b)).exp())
}

/// Second-order correction `ū²(·, t) = −∫₀ᵗ ds ∫ G(x, y, t, s) f(y, s) dy` on `grid`,
/// with `f = ϰ ū¹ (b ∗ ū¹)`.
///
/// The time integral uses composite Simpson with `panels` (even) subintervals.
/// Spatial integrals (the convolution and the forward transform of `f`) are
/// trapezoid sums on the grid. The propagator is applied in Fourier space through
/// a trapezoid sum over the spectral variable, which stays accurate as `s → t`,
/// where `G` degenerates to a delta.
pub fn u2_correction(grid: &FieldGrid, t: f64, panels: usize, p: &LargeTimeParams) -> Result<Field> {
    if t < 0.0 {
        return Err(LargeTimeError::NegativeTime(t));
    }
    if panels == 0 || panels % 2 == 1 {
        return Err(LargeTimeError::OddPanels(panels));
    }
    if t == 0.0 {
        return Ok(Field::zeros(*grid));
    }
    let ratio = u1_field(grid, t, p)?.boundary_ratio();
    if ratio > 1e-8 {
        return Err(LargeTimeError::BoundaryMass { ratio });
    }
    let xs = grid.nodes();
    let w = grid.weights();
    let dx = grid.dx();
    let len = grid.x_max - grid.x_min;
    let hp = PI / len;
    let mp = (PI / dx / hp).ceil() as usize;
    let ps: Vec<f64> = (0..=2 * mp).map(|i| (i as f64 - mp as f64) * hp).collect();
    let cos: Vec<Vec<f64>> = ps.iter().map(|&q| xs.iter().map(|&x| (q * x).cos()).collect()).collect();
    let sin: Vec<Vec<f64>> = ps.iter().map(|&q| xs.iter().map(|&x| (q * x).sin()).collect()).collect();
    // Toeplitz lags of b(x_i − x_j)
    let lags: Vec<f64> = (0..grid.n).map(|k| p.b0 * (-((k as f64 * dx) / p.gamma).powi(2)).exp()).collect();
    let ln_gt = p.ln_growth(t)?;
    let chi_t = chi(t, p)?;
    let sw = simpson_weights(panels, t / panels as f64);
    let slices = (0..=panels)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let s = t * i as f64 / panels as f64;
            let u = u1_field(grid, s, p)?.values;
            let f: Vec<f64> = (0..grid.n)
                .map(|a| {
                    let conv: f64 = (0..grid.n).map(|b| w[b] * lags[a.abs_diff(b)] * u[b]).sum();
                    p.kappa * u[a] * conv
                })
                .collect();
            let ln_gs = p.ln_growth(s)?;
            let dchi = chi_t - chi(s, p)?;
            let mut out = vec![0.0; grid.n];
            for (j, &q) in ps.iter().enumerate() {
                // multiplier of G(·, ·, t, s)
                let g = (ln_gt
                    - ln_gs
                    - p.diffusion * q * q * (t - s)
                    - p.kappa * SQRT_2 * PI.sqrt() * kernel_fourier(q, p) * dchi)
                    .exp();
                let (c, sn) = (&cos[j], &sin[j]);
                let mut fc = 0.0;
                let mut fs = 0.0;
                for b in 0..grid.n {
                    fc += w[b] * f[b] * c[b];
                    fs += w[b] * f[b] * sn[b];
                }
                let scale = hp * g / (2.0 * PI);
                for a in 0..grid.n {
                    out[a] += scale * (c[a] * fc + sn[a] * fs);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; grid.n];
    for (wi, slice) in sw.iter().zip(&slices) {
        for (v, s) in values.iter_mut().zip(slice) {
            *v -= wi * s;
        }
    }
    Ok(Field::new(*grid, values)?)
}

/// Number of strict interior local maxima with value `≥ threshold · max(f)`.
pub fn mode_count(f: &Field, threshold: f64) -> usize {
    let v = &f.values;
    let top = f.max();
    (1..v.len().saturating_sub(1)).filter(|&i| v[i] > v[i - 1] && v[i] > v[i + 1] && v[i] >= threshold * top).count()
}

/// Default relative height a secondary maximum needs to count as a mode.
pub const MODE_THRESHOLD: f64 = 0.1;

/// Mode count of `u₀ + εū¹` at each time.
///
/// `u₀` is spatially constant, so the maxima are those of `εū¹`; counting on the
/// perturbation alone keeps the threshold meaningful and avoids roundoff ripples
/// from adding a large constant.
pub fn mode_timeline(
    grid: &FieldGrid,
    times: &[f64],
    threshold: f64,
    p: &LargeTimeParams,
) -> Result<Vec<(f64, usize)>> {
    times.par_iter().map(|&t| Ok((t, mode_count(&u1_field(grid, t, p)?.map(|_, v| p.eps * v), threshold)))).collect()
}

/// First time at which the mode count reaches `at_least`, if any.
pub fn first_transition(timeline: &[(f64, usize)], at_least: usize) -> Option<f64> {
    timeline.iter().find(|(_, c)| *c >= at_least).map(|(t, _)| *t)
}

/// CSV `t,mode_count`.
pub fn write_mode_timeline<W: Write>(timeline: &[(f64, usize)], mut w: W) -> io::Result<()> {
    writeln!(w, "t,mode_count")?;
    for (t, c) in timeline {
        writeln!(w, "{t},{c}")?;
    }
    Ok(())
}

/// CSV `t,beta,chi`.
pub fn write_background<W: Write>(times: &[f64], p: &LargeTimeParams, mut w: W) -> io::Result<()> {
    writeln!(w, "t,beta,chi")?;
    for &t in times {
        let b = background(t, p).map_err(io::Error::other)?;
        let c = chi(t, p).map_err(io::Error::other)?;
        writeln!(w, "{t},{b:e},{c:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive;

    fn params() -> LargeTimeParams {
        LargeTimeParams::default()
    }

    fn grid() -> FieldGrid {
        FieldGrid::dirichlet(-8.0, 8.0, 641).unwrap()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn background_cases() {
        let p = params();
        assert_eq!(background(0.0, &p).unwrap(), p.beta0);
        let free = LargeTimeParams { b0: 0.0, ..p };
        let t = 1.3f64;
        assert!((background(t, &free).unwrap() - (t).exp()).abs() < 1e-14 * t.exp());
        let lim = p.limit().unwrap();
        let t = 28.0; // e^{-at} < 1e-12
        assert!((background(t, &p).unwrap() - lim).abs() <= 1e-8 * lim);
        // finite-time blow-up for a negative kernel
        let neg = LargeTimeParams { b0: -1.0, ..p };
        assert!(matches!(background(5.0, &neg), Err(LargeTimeError::BlowUp { .. })));
    }

    #[test]
    fn chi_matches_quadrature_and_limit() {
        let p = params();
        assert_eq!(chi(0.0, &p).unwrap(), 0.0);
        for t in [0.1, 0.5, 0.99, 1.0, 1.01, 2.0, 3.5, 5.0] {
            let q = adaptive(|s| background(s, &p).unwrap(), 0.0, t, 1e-13);
            let c = chi(t, &p).unwrap();
            assert!((c - q).abs() <= 1e-10 * q, "t={t}: {c} vs {q}");
        }
        let free = LargeTimeParams { b0: 0.0, ..p };
        assert!((chi(2.0, &free).unwrap() - (2f64.exp() - 1.0)).abs() < 1e-13);
        let lim = p.a / (p.kappa * p.kernel_mass());
        let r = chi(400.0, &p).unwrap() / 400.0;
        assert!((r - lim).abs() < 1e-2 * lim);
    }

    #[test]
    fn kernel_fourier_matches_quadrature() {
        let p = LargeTimeParams { gamma: 0.7, b0: 1.3, ..params() };
        assert!((kernel_fourier(0.0, &p) - p.gamma * p.b0 / SQRT_2).abs() < 1e-15);
        assert!(kernel_fourier(60.0, &p) < 1e-100);
        for q in [0.0, 0.5, 1.7, 4.0] {
            let num = adaptive(|r| p.b0 * (-(r / p.gamma).powi(2)).exp() * (q * r).cos(), -12.0, 12.0, 1e-14)
                / (2.0 * PI).sqrt();
            assert!((num - kernel_fourier(q, &p)).abs() < 1e-10, "p={q}");
        }
        // √(2π) b̃(0) = B
        assert!(((2.0 * PI).sqrt() * kernel_fourier(0.0, &p) - p.kernel_mass()).abs() < 1e-14);
    }

    #[test]
    fn u1_fourier_solves_the_spectral_ode() {
        let p = params();
        let phi = |q: f64| profile_fourier(q, &p).unwrap();
        let q0 = phi(0.7);
        assert_eq!(u1_fourier(0.7, 0.0, &p, phi).unwrap(), q0);
        // at p = 0 the exponent is at − 2ϰBχ
        let t = 1.2;
        let e = spectral_multiplier(0.0, t, &p).unwrap();
        let expect = (p.a * t - 2.0 * p.kappa * p.kernel_mass() * chi(t, &p).unwrap()).exp();
        assert!((e - expect).abs() < 1e-13 * expect);
        for q in [0.0, 0.8, 2.5] {
            for t in [0.3, 1.0, 2.0] {
                let h = 1e-3;
                let f = |s: f64| u1_fourier(q, s, &p, phi).unwrap();
                let dt = (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h);
                let beta = background(t, &p).unwrap();
                let rate = p.diffusion * q * q - p.a
                    + p.kappa * (p.kernel_mass() + (2.0 * PI).sqrt() * kernel_fourier(q, &p)) * beta;
                let res = dt + rate * f(t);
                assert!(res.norm() <= 1e-9 * f(t).norm().max(1e-300), "p={q} t={t}: {res}");
            }
        }
    }

    #[test]
    fn series_reproduces_initial_profile() {
        for n in [0, 1, 2, 5] {
            let p = LargeTimeParams { n, x0: 0.3, ..params() };
            for x in [-1.2, -0.1, 0.3, 0.77, 2.0] {
                let s = u1_series(x, 0.0, &p).unwrap();
                let phi = p.profile(x).unwrap();
                assert!((s - phi).abs() <= 1e-10 * (1.0 + phi.abs()), "n={n} x={x}: {s} vs {phi}");
            }
        }
    }

    #[test]
    fn series_matches_spectral_quadrature() {
        let g = grid();
        for n in [0, 1, 3] {
            let p = LargeTimeParams { n, x0: 0.2, ..params() };
            for t in [0.5, 1.0, 2.0] {
                let series: Vec<f64> = g.nodes().iter().map(|&x| u1_series(x, t, &p).unwrap()).collect();
                let spec = u1_spectral(&g.nodes(), t, &p).unwrap();
                let e = rel_l2(&series, &spec);
                assert!(e <= 1e-10, "n={n} t={t}: {e:e}");
            }
        }
    }

    #[test]
    fn series_refuses_large_argument_and_field_switches() {
        let p = params();
        let t = 12.0;
        assert!(p.series_argument(t).unwrap() > SERIES_X_LIMIT);
        assert!(matches!(u1_series(0.0, t, &p), Err(LargeTimeError::Cancellation { .. })));
        let f = u1_field(&grid(), t, &p).unwrap();
        assert!(f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn parity_and_linearity() {
        let p = LargeTimeParams { x0: 0.4, ..params() };
        let twice = LargeTimeParams { norm: 2.0, ..p };
        for t in [0.3, 1.0] {
            for y in [0.1, 0.6, 1.9] {
                let l = u1_series(p.x0 - y, t, &p).unwrap();
                let r = u1_series(p.x0 + y, t, &p).unwrap();
                assert!((l - r).abs() <= 1e-14 * l.abs().max(1e-300));
                assert_eq!(u1_series(p.x0 + y, t, &twice).unwrap(), 2.0 * r);
            }
        }
        let odd = LargeTimeParams { n: 1, ..p };
        let l = u1_series(p.x0 - 0.5, 0.8, &odd).unwrap();
        let r = u1_series(p.x0 + 0.5, 0.8, &odd).unwrap();
        assert!((l + r).abs() <= 1e-14 * r.abs());
    }

    #[test]
    fn coefficient_identities_at_start() {
        let p = params();
        let c = coefficients(0, &[0.0, 0.7], 9, &p).unwrap();
        assert!((c.values[0][0] - 1.0).abs() <= 1e-10);
        for l in 1..=4 {
            assert!(c.values[0][2 * l].abs() <= 1e-10);
            assert!(c.values[1][2 * l] != 0.0);
        }
        for row in &c.values {
            for l in 0..=3 {
                assert_eq!(row[2 * l + 1], 0.0);
            }
        }
        assert!(c.method.iter().all(|m| *m == CoefficientMethod::Series));
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let p = params();
        for t in [0.2, 1.0, 2.5] {
            let (series, ..) = coefficients_at(0, t, 12, &p).unwrap();
            // the quadrature path is forced by asking for index 0 through a general-n row
            let quad = quadrature_row(0, t, 12, &p);
            for m in 0..=12 {
                assert!((series[m] - quad[m]).abs() <= 1e-11, "t={t} m={m}: {} vs {}", series[m], quad[m]);
            }
        }
    }

    fn quadrature_row(n: usize, t: f64, m_max: usize, p: &LargeTimeParams) -> Vec<f64> {
        // a throwaway params copy with a huge series limit would not change the path,
        // so compute the integral directly with the same rule
        let ln_g = p.ln_growth(t).unwrap();
        let x = p.series_argument(t).unwrap();
        let h = 0.005;
        let k = (14.0 / h) as usize;
        let mut acc = vec![0.0; m_max + 1];
        for i in 0..=2 * k {
            let s = (i as f64 - k as f64) * h;
            let u = hermite_functions(m_max.max(n), s).unwrap();
            let e = multiplier_from(p.theta * s, t, ln_g, x, p);
            for m in 0..=m_max {
                acc[m] += h * u[n] * u[m] * e;
            }
        }
        acc.iter()
            .enumerate()
            .map(|(m, a)| {
                if (n + m) % 2 == 1 {
                    0.0
                } else if ((m as i64 - n as i64) / 2) % 2 == 0 {
                    p.norm * a
                } else {
                    -p.norm * a
                }
            })
            .collect()
    }

    #[test]
    fn coefficients_reconstruct_the_series() {
        // narrow kernel relative to the profile scale, so sixteen modes suffice
        let p = LargeTimeParams { gamma: 0.25, theta: 1.0, ..params() };
        let g = grid();
        let times = [0.0, 0.25, 0.5, 1.0];
        let c = coefficients(0, &times, 16, &p).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let rec: Vec<f64> = g.nodes().iter().map(|&x| c.reconstruct(i, x, &p).unwrap()).collect();
            let direct: Vec<f64> = g.nodes().iter().map(|&x| u1_series(x, t, &p).unwrap()).collect();
            let e = rel_l2(&rec, &direct);
            assert!(e <= 1e-6, "t={t}: {e:e}");
        }
    }

    #[test]
    fn general_index_coefficients() {
        let p = LargeTimeParams { n: 2, ..params() };
        let c = coefficients(2, &[0.0, 0.8], 8, &p).unwrap();
        for m in 0..=8 {
            let expect = if m == 2 { 1.0 } else { 0.0 };
            assert!((c.values[0][m] - expect).abs() <= 1e-10, "m={m}");
        }
        let g = grid();
        let rec: Vec<f64> = g.nodes().iter().map(|&x| c.reconstruct(1, x, &p).unwrap()).collect();
        let direct: Vec<f64> = g.nodes().iter().map(|&x| u1_series(x, 0.8, &p).unwrap()).collect();
        // truncated expansion; the leading modes carry most of the field
        assert!(rel_l2(&rec, &direct) < 0.2);
        assert!(c.values[1].iter().skip(1).step_by(2).all(|v| *v == 0.0));
    }

    #[test]
    fn asymptote_prefactor_and_monotonicity() {
        let p = params();
        let r = coefficient_asymptote(1, 3.0, &p).unwrap() / coefficient_asymptote(0, 3.0, &p).unwrap();
        assert!((r - SQRT_2 / 2.0).abs() < 1e-14);
        let mut prev = 0.0;
        for t in [1.0, 2.0, 4.0, 8.0] {
            let v = coefficient_asymptote(2, t, &p).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(coefficient_asymptote(0, 0.0, &p).is_err());
    }

    #[test]
    fn mode_count_cases() {
        let g = grid();
        let one = g.sample(|x| (-x * x).exp());
        assert_eq!(mode_count(&one, 0.5), 1);
        let two = g.sample(|x| (-(x - 2.0).powi(2)).exp() + (-(x + 2.0).powi(2)).exp());
        assert_eq!(mode_count(&two, 0.5), 2);
        let small = g.sample(|x| (-(x - 2.0).powi(2)).exp() + 0.1 * (-(x + 2.0).powi(2)).exp());
        assert_eq!(mode_count(&small, 0.5), 1);
    }

    #[test]
    fn perturbed_profile_becomes_multimodal() {
        let p = params();
        let g = FieldGrid::dirichlet(-10.0, 10.0, 2001).unwrap();
        let times: Vec<f64> = (0..=40).map(|i| 0.25 * i as f64).collect();
        let tl = mode_timeline(&g, &times, MODE_THRESHOLD, &p).unwrap();
        assert_eq!(tl[0].1, 1);
        let t = first_transition(&tl, 2).expect("no transition");
        // side lobes grow monotonically, so once multimodal it stays so
        assert!(tl.iter().filter(|(s, _)| *s >= t).all(|(_, c)| *c >= 3), "{tl:?}");
    }

    #[test]
    fn second_order_vanishes_when_expected() {
        let g = FieldGrid::dirichlet(-6.0, 6.0, 161).unwrap();
        let p = params();
        assert!(u2_correction(&g, 0.0, 4, &p).unwrap().values.iter().all(|v| *v == 0.0));
        assert!(matches!(u2_correction(&g, 0.5, 3, &p), Err(LargeTimeError::OddPanels(3))));
        let free = LargeTimeParams { kappa: 1e-300, ..p };
        let u = u2_correction(&g, 0.5, 4, &free).unwrap();
        assert!(u.max_abs() < 1e-290);
    }

    #[test]
    fn second_order_satisfies_its_equation() {
        let p = params();
        let g = FieldGrid::dirichlet(-6.0, 6.0, 241).unwrap();
        let t = 0.5;
        let h = 1e-3;
        let panels = 24;
        let at = |s: f64| u2_correction(&g, s, panels, &p).unwrap();
        let (um, u0, up) = (at(t - h), at(t), at(t + h));
        let dx = g.dx();
        let beta = background(t, &p).unwrap();
        let u1 = u1_field(&g, t, &p).unwrap().values;
        let w = g.weights();
        let conv = |v: &[f64], a: usize| -> f64 {
            (0..g.n).map(|b| w[b] * p.b0 * (-((g.x(a) - g.x(b)) / p.gamma).powi(2)).exp() * v[b]).sum()
        };
        let mut worst = 0.0f64;
        let mut fmax = 0.0f64;
        for a in 40..g.n - 40 {
            let ut = (up.values[a] - um.values[a]) / (2.0 * h);
            let v = &u0.values;
            let uxx = (-v[a - 2] + 16.0 * v[a - 1] - 30.0 * v[a] + 16.0 * v[a + 1] - v[a + 2]) / (12.0 * dx * dx);
            let f = p.kappa * u1[a] * conv(&u1, a);
            let res = ut - p.diffusion * uxx + p.kappa * beta * conv(v, a)
                - (p.a - p.kappa * p.kernel_mass() * beta) * v[a]
                + f;
            worst = worst.max(res.abs());
            fmax = fmax.max(f.abs());
        }
        assert!(worst <= 1e-5 * fmax, "residual {worst:e} vs |f| {fmax:e}");
    }

    #[test]
    fn params_validation_and_csv() {
        let mut p = params();
        assert!(p.validate().is_ok());
        p.eps = 0.2;
        assert!(p.validate().is_err());
        let p = params();
        let c = coefficients(0, &[0.0, 1.0], 4, &p).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,m,C_m\n0,0,1"));
        assert_eq!(s.lines().count(), 1 + 2 * 5);
        let mut buf = Vec::new();
        write_background(&[0.0, 1.0], &p, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,beta,chi\n0,1e0,0e0"));
    }
}
