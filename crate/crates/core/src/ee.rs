//! Moment (Einstein–Ehrenfest) dynamics: mass `σ`, center `x` and central
//! moments `α^(2..M)` of a trajectory-concentrated solution.
//!
//! Truncation rule at order `M`: a product `α^(k1)···α^(ks)` is kept iff
//! `k1 + … + ks ≤ M` (with `α^(0) = 1`, `α^(1) = 0`); moments above `M` vanish.
//! Since `α^(k) = O(D^{k/2})`, this keeps exactly the terms up to `O(D^{M/2})`.

use std::io::{self, Write};

use thiserror::Error;

use crate::field::Field;
use crate::model::{ModelError, ModelSpec};
use crate::ode::{self, DenseTrajectory, OdeError, OdeOptions, Termination};

pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EeError {
    #[error("truncation order {0} outside the supported range {MIN_ORDER}..={MAX_ORDER}")]
    OrderOutOfRange(usize),
    #[error("invalid moment state: {0}")]
    InvalidState(String),
    #[error("field has nonpositive total mass {0}")]
    NonPositiveMass(f64),
    #[error("field contains non-finite values")]
    NonFiniteField,
    #[error("moment dynamics broke down at t={t}: {reason}")]
    Breakdown { t: f64, reason: String },
    #[error("t={t} outside the trajectory window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },
    #[error("closed form is singular for a = 0; integrate the system instead")]
    SingularClosedForm,
    #[error("closed form needs constant growth, no convection and a symmetric difference kernel: {0}")]
    NotSpecialCase(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `(σ, x, α^(2), …, α^(M))` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub order: usize,
    pub sigma: f64,
    pub x: f64,
    /// `α^(2) … α^(M)`
    pub alpha: Vec<f64>,
}

pub(crate) fn check_order(m: usize) -> Result<(), EeError> {
    if (MIN_ORDER..=MAX_ORDER).contains(&m) {
        Ok(())
    } else {
        Err(EeError::OrderOutOfRange(m))
    }
}

impl MomentState {
    pub fn new(order: usize, sigma: f64, x: f64, alpha: Vec<f64>) -> Result<Self, EeError> {
        check_order(order)?;
        if alpha.len() != order - 1 {
            return Err(EeError::InvalidState(format!(
                "order {order} needs {} central moments, got {}",
                order - 1,
                alpha.len()
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(EeError::InvalidState(format!("sigma must be positive, got {sigma}")));
        }
        if !x.is_finite() || alpha.iter().any(|a| !a.is_finite()) {
            return Err(EeError::InvalidState("non-finite entry".into()));
        }
        if alpha[0] < 0.0 {
            return Err(EeError::InvalidState(format!("variance must be nonnegative, got {}", alpha[0])));
        }
        Ok(MomentState { order, sigma, x, alpha })
    }

    /// Order-2 state `(σ, x, α^(2))`.
    pub fn gaussian(sigma: f64, x: f64, variance: f64) -> Result<Self, EeError> {
        Self::new(2, sigma, x, vec![variance])
    }

    /// `α^(k)` with `α^(0) = 1`, `α^(1) = 0` and zero above the truncation order.
    pub fn alpha(&self, k: usize) -> f64 {
        match k {
            0 => 1.0,
            1 => 0.0,
            k if k <= self.order => self.alpha[k - 2],
            _ => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        self.alpha[0]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.order + 1);
        v.push(self.sigma);
        v.push(self.x);
        v.extend_from_slice(&self.alpha);
        v
    }

    /// Reads `(σ, x, α…)` without validation (used for integrator states).
    pub fn from_slice(order: usize, v: &[f64]) -> Self {
        MomentState { order, sigma: v[0], x: v[1], alpha: v[2..order + 1].to_vec() }
    }

    /// Same moments truncated or zero-extended to another order.
    pub fn with_order(&self, order: usize) -> Result<Self, EeError> {
        check_order(order)?;
        let alpha = (2..=order).map(|k| self.alpha(k)).collect();
        Self::new(order, self.sigma, self.x, alpha)
    }
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for k in 1..=n {
        f[k] = f[k - 1] * k as f64;
    }
    f
}

/// Right-hand side `(σ̇, ẋ, α̇^(2..M))` of the truncated moment system.
pub fn ee_rhs(order: usize, state: &MomentState, t: f64, model: &ModelSpec) -> Result<Vec<f64>, EeError> {
    check_order(order)?;
    let m = order;
    let th = if state.order == m { state.clone() } else { state.with_order(m)? };
    let al = |k: usize| th.alpha(k);
    let fact = factorials(m + 1);
    let (sigma, x) = (th.sigma, th.x);
    let kappa = model.kappa;
    let d = model.diffusion;

    let a: Vec<f64> = (0..=m).map(|k| model.taylor_a(k, t, x)).collect::<Result<_, _>>()?;
    let v: Vec<f64> = (0..=m).map(|k| model.taylor_v(k, t, x)).collect::<Result<_, _>>()?;
    let mut b = vec![vec![0.0; m + 1]; m + 1];
    let mut w = vec![vec![0.0; m + 1]; m + 1];
    let kernel_b = !model.influence.is_zero() && kappa != 0.0;
    let kernel_w = !model.nonlocal_potential.is_zero() && kappa != 0.0;
    for k in 0..=m {
        for l in 0..=(m - k) {
            if kernel_b {
                b[k][l] = model.taylor_b(k, l, t, x)?;
            }
            if kernel_w {
                w[k][l] = model.taylor_w(k, l, t, x)?;
            }
        }
    }

    // mass
    let mut sa = 0.0;
    for k in 0..=m {
        sa += a[k] * al(k) / fact[k];
    }
    let mut sb = 0.0;
    for k in 0..=m {
        for l in 0..=(m - k) {
            sb += b[k][l] * al(k) * al(l) / (fact[k] * fact[l]);
        }
    }
    let sigma_dot = sigma * (sa - sigma * kappa * sb);

    // center
    let mut x_dot = 0.0;
    for k in 0..m {
        let mut inner = a[k];
        for l in 0..=(m - k - 1) {
            inner -= sigma * kappa * b[k][l] * al(l) / fact[l];
        }
        x_dot += al(k + 1) * inner / fact[k];
    }
    for k in 0..=m {
        let mut inner = v[k];
        for l in 0..=(m - k) {
            inner += sigma * kappa * w[k][l] * al(l) / fact[l];
        }
        x_dot += al(k) * inner / fact[k];
    }

    let mut out = Vec::with_capacity(m + 1);
    out.push(sigma_dot);
    out.push(x_dot);

    // central moments
    for n in 2..=m {
        let nf = n as f64;
        let mut r = d * nf * (nf - 1.0) * al(n - 2);
        for k in 0..=m {
            if k + n - 1 <= m {
                r += nf * v[k] * (al(k + n - 1) - al(k) * al(n - 1)) / fact[k];
            }
            if k + n <= m {
                r += a[k] * (al(k + n) - al(k) * al(n) - nf * al(k + 1) * al(n - 1)) / fact[k];
            }
        }
        for k in 0..=m {
            for l in 0..=m {
                let kl = fact[k] * fact[l];
                if l + k + n - 1 <= m {
                    r += kappa * sigma * nf * w[k][l] * al(l) * (al(k + n - 1) - al(k) * al(n - 1)) / kl;
                }
                if l + k + n <= m {
                    r += kappa * sigma * b[k][l] * al(l) * (-al(n + k) + nf * al(k + 1) * al(n - 1) + al(k) * al(n))
                        / kl;
                }
            }
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
}

impl Default for EeOptions {
    fn default() -> Self {
        EeOptions { rtol: 1e-10, atol: 1e-10, max_step: f64::INFINITY }
    }
}

impl EeOptions {
    pub fn ode(&self) -> OdeOptions {
        OdeOptions { rtol: self.rtol, atol: self.atol, max_step: self.max_step, ..OdeOptions::default() }
    }
}

/// Time history of the moment system with cubic Hermite interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct EETrajectory {
    pub order: usize,
    pub dense: DenseTrajectory,
}

impl EETrajectory {
    /// Wraps a dense trajectory whose first `order + 1` components are the moments.
    pub fn from_dense(order: usize, dense: DenseTrajectory) -> Self {
        EETrajectory { order, dense }
    }

    pub fn t_start(&self) -> f64 {
        self.dense.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.dense.t_end()
    }

    pub fn times(&self) -> &[f64] {
        &self.dense.t
    }

    fn window_error(&self, t: f64) -> EeError {
        EeError::OutsideWindow { t, start: self.t_start(), end: self.t_end() }
    }

    pub fn state(&self, t: f64) -> Result<MomentState, EeError> {
        let v = self.dense.eval(t).ok_or_else(|| self.window_error(t))?;
        Ok(MomentState::from_slice(self.order, &v))
    }

    /// `(σ̇, ẋ, α̇…)` of the interpolant.
    pub fn rate(&self, t: f64) -> Result<Vec<f64>, EeError> {
        let v = self.dense.eval_derivative(t).ok_or_else(|| self.window_error(t))?;
        Ok(v[..self.order + 1].to_vec())
    }

    pub fn initial(&self) -> MomentState {
        MomentState::from_slice(self.order, &self.dense.y[0])
    }

    pub fn sigma(&self, t: f64) -> Result<f64, EeError> {
        Ok(self.state(t)?.sigma)
    }

    pub fn center(&self, t: f64) -> Result<f64, EeError> {
        Ok(self.state(t)?.x)
    }

    /// CSV with columns `t, sigma, x, alpha2..alphaM` at the stored nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t,sigma,x")?;
        for k in 2..=self.order {
            write!(w, ",alpha{k}")?;
        }
        writeln!(w)?;
        for (t, y) in self.dense.t.iter().zip(&self.dense.y) {
            write!(w, "{t}")?;
            for v in &y[..self.order + 1] {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub(crate) fn breakdown(e: OdeError) -> EeError {
    let t = match &e {
        OdeError::NonFinite { t } | OdeError::StepUnderflow { t } | OdeError::Rhs { t, .. } => *t,
        OdeError::TooManySteps { t, .. } => *t,
        OdeError::Invalid(_) => f64::NAN,
    };
    EeError::Breakdown { t, reason: e.to_string() }
}

/// Integrates the order-`initial.order` moment system over `t_span`.
pub fn integrate_ee(
    initial: &MomentState,
    t_span: (f64, f64),
    model: &ModelSpec,
    opts: &EeOptions,
) -> Result<EETrajectory, EeError> {
    check_order(initial.order)?;
    let m = initial.order;
    if !(t_span.0.is_finite() && t_span.1.is_finite()) || t_span.1 < t_span.0 {
        return Err(EeError::InvalidState(format!("bad time span {t_span:?}")));
    }
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<(), String> {
        let s = MomentState::from_slice(m, y);
        let r = ee_rhs(m, &s, t, model).map_err(|e| e.to_string())?;
        out.copy_from_slice(&r);
        Ok(())
    };
    let mass = |_: f64, y: &[f64]| y[0];
    let (dense, term) =
        ode::integrate(rhs, t_span.0, &initial.to_vec(), t_span.1, &opts.ode(), Some(&mass)).map_err(breakdown)?;
    if let Termination::Event { t } = term {
        return Err(EeError::Breakdown { t, reason: "mass reached zero".into() });
    }
    Ok(EETrajectory { order: m, dense })
}

/// Moments of a sampled function by trapezoid quadrature.
pub fn moments_of_field(f: &Field, order: usize) -> Result<MomentState, EeError> {
    check_order(order)?;
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(EeError::NonFiniteField);
    }
    let w = f.grid.weights();
    let xs = f.grid.nodes();
    let sigma: f64 = (0..f.grid.n).map(|i| w[i] * f.values[i]).sum();
    let scale: f64 = (0..f.grid.n).map(|i| w[i] * f.values[i].abs()).sum();
    // Anything at the level of quadrature rounding counts as zero mass.
    if !(sigma > 1e-10 * scale) || sigma <= 0.0 {
        return Err(EeError::NonPositiveMass(sigma));
    }
    let x: f64 = (0..f.grid.n).map(|i| w[i] * xs[i] * f.values[i]).sum::<f64>() / sigma;
    let alpha = (2..=order)
        .map(|k| (0..f.grid.n).map(|i| w[i] * (xs[i] - x).powi(k as i32) * f.values[i]).sum::<f64>() / sigma)
        .collect();
    MomentState::new(order, sigma, x, alpha)
}

/// Integration constants in Cauchy form: the initial moments of `phi`.
pub fn match_constants(phi: &Field, order: usize) -> Result<MomentState, EeError> {
    moments_of_field(phi, order)
}

/// Parameters of the order-2 constant-growth, symmetric-kernel case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormParams {
    pub growth: f64,
    pub kappa: f64,
    /// kernel value `b(0)`
    pub kernel_center: f64,
    /// kernel curvature `β = b''(0)`
    pub kernel_curvature: f64,
    pub diffusion: f64,
    pub sigma0: f64,
    pub x0: f64,
    pub variance0: f64,
}

impl ClosedFormParams {
    /// Extracts the parameters from a model, checking that it is the special case.
    pub fn from_model(model: &ModelSpec, initial: &MomentState) -> Result<Self, EeError> {
        let growth =
            model.growth.as_constant().ok_or_else(|| EeError::NotSpecialCase("growth rate is not constant".into()))?;
        if !model.potential.is_zero() && model.potential.as_constant().is_none() {
            return Err(EeError::NotSpecialCase("potential is not constant".into()));
        }
        if !model.nonlocal_potential.is_zero() {
            return Err(EeError::NotSpecialCase("nonlocal potential is present".into()));
        }
        if !model.influence.is_symmetric_difference_kernel() {
            return Err(EeError::NotSpecialCase("influence kernel is not an even function of x − y".into()));
        }
        Ok(ClosedFormParams {
            growth,
            kappa: model.kappa,
            kernel_center: model.taylor_b(0, 0, 0.0, initial.x)?,
            kernel_curvature: model.taylor_b(2, 0, 0.0, initial.x)?,
            diffusion: model.diffusion,
            sigma0: initial.sigma,
            x0: initial.x,
            variance0: initial.variance(),
        })
    }
}

/// Closed-form order-2 solution: Bernoulli-type mass law, fixed center, linear variance growth.
pub fn closed_form_m2(p: &ClosedFormParams, t: f64) -> Result<MomentState, EeError> {
    if p.growth == 0.0 {
        return Err(EeError::SingularClosedForm);
    }
    let a = p.growth;
    let w = p.kernel_center + p.kernel_curvature * (p.variance0 - 2.0 * p.diffusion / a);
    let denom = (-a * t).exp() * (a / p.sigma0 - p.kappa * w)
        + 2.0 * p.diffusion * p.kappa * p.kernel_curvature * t
        + p.kappa * w;
    let sigma = a / denom;
    MomentState::new(2, sigma, p.x0, vec![2.0 * p.diffusion * t + p.variance0]).map_err(|e| match e {
        EeError::InvalidState(_) => EeError::Breakdown { t, reason: format!("closed-form mass {sigma}") },
        other => other,
    })
}
