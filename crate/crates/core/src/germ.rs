//! System in variations along the moment trajectory: the real germ
//! `(W^(±), Z^(±))`, its skew-product invariant, the ratio `Q = W^(−)/Z^(−)`
//! and the amplitude/phase factors of the leading-order solution.

use std::io::{self, Write};

use thiserror::Error;

use crate::ee::{self, EETrajectory, EeError, EeOptions, MomentState};
use crate::model::{ModelError, ModelSpec};
use crate::ode::{self, DenseTrajectory, OdeOptions, Termination};

/// Relative tolerance on `{a^(−), a^(+)} = 2b`.
pub const SKEW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GermError {
    #[error("germ normalization b must be positive and finite, got {0}")]
    InvalidNormalization(f64),
    #[error("t={t} outside the germ window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },
    #[error("focal point of the {branch:?} branch at t={t}")]
    FocalPoint { t: f64, branch: Branch },
    #[error("skew product drifted by {drift:e} (relative) at t={t}")]
    SkewDrift { t: f64, drift: f64 },
    #[error("integration of the variations failed at t={t}: {reason}")]
    Breakdown { t: f64, reason: String },
    #[error(transparent)]
    Ee(#[from] EeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Minus,
    Plus,
}

/// How the validity window of a germ ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowEnd {
    /// The requested span was covered.
    Completed,
    /// `W^(−) Z^(−)` reached zero at `t`; nothing past `t` is available.
    SignCondition { t: f64 },
    /// The moment mass reached zero at `t` (joint integration only).
    MassCollapse { t: f64 },
}

/// `Λ^(M)(x, t)`: local drift `V_x` plus the truncated nonlocal drift of the state.
pub fn lambda_at(x: f64, state: &MomentState, t: f64, model: &ModelSpec) -> Result<f64, ModelError> {
    let mut v = if model.potential.is_zero() { 0.0 } else { model.potential_x(0, x, t)? };
    if model.kappa != 0.0 && !model.nonlocal_potential.is_zero() {
        let mut s = 0.0;
        let mut fact = 1.0;
        for l in 0..=state.order {
            if l > 0 {
                fact *= l as f64;
            }
            let al = state.alpha(l);
            if al != 0.0 {
                s += model.partial_w_x(0, l, x, state.x, t)? * al / fact;
            }
        }
        v += model.kappa * state.sigma * s;
    }
    Ok(v)
}

/// `∂_x Λ^(M)` at the trajectory point `x = x(t)`.
pub fn lambda_x_at(state: &MomentState, t: f64, model: &ModelSpec) -> Result<f64, ModelError> {
    let mut v = if model.potential.is_zero() { 0.0 } else { model.taylor_v(1, t, state.x)? };
    if model.kappa != 0.0 && !model.nonlocal_potential.is_zero() {
        let mut s = 0.0;
        let mut fact = 1.0;
        for l in 0..=state.order {
            if l > 0 {
                fact *= l as f64;
            }
            let al = state.alpha(l);
            if al != 0.0 {
                s += model.taylor_w(1, l, t, state.x)? * al / fact;
            }
        }
        v += model.kappa * state.sigma * s;
    }
    Ok(v)
}

pub fn lambda_x_on_trajectory(t: f64, traj: &EETrajectory, model: &ModelSpec) -> Result<f64, GermError> {
    Ok(lambda_x_at(&traj.state(t)?, t, model)?)
}

/// Germ `(W^(±), Z^(±))` on its validity window.
#[derive(Debug, Clone, PartialEq)]
pub struct GermState {
    pub b: f64,
    pub window_end: WindowEnd,
    /// First zero of `Z^(+)`, if any; the (+) branch is unusable from there on.
    pub plus_focal_time: Option<f64>,
    /// Largest relative skew-product deviation over the stored nodes.
    pub max_skew_drift: f64,
    dense: DenseTrajectory,
    offset: usize,
}

/// Values `(W^(−), Z^(−), W^(+), Z^(+))` at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GermValues {
    pub wm: f64,
    pub zm: f64,
    pub wp: f64,
    pub zp: f64,
}

impl GermValues {
    pub fn skew(&self) -> f64 {
        self.wp * self.zm - self.zp * self.wm
    }
}

impl GermState {
    pub fn t_start(&self) -> f64 {
        self.dense.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.dense.t_end()
    }

    pub fn times(&self) -> &[f64] {
        &self.dense.t
    }

    pub fn values(&self, t: f64) -> Result<GermValues, GermError> {
        let v = self.dense.eval(t).ok_or(GermError::OutsideWindow { t, start: self.t_start(), end: self.t_end() })?;
        let o = self.offset;
        Ok(GermValues { wm: v[o], zm: v[o + 1], wp: v[o + 2], zp: v[o + 3] })
    }

    pub fn initial(&self) -> GermValues {
        let v = &self.dense.y[0];
        let o = self.offset;
        GermValues { wm: v[o], zm: v[o + 1], wp: v[o + 2], zp: v[o + 3] }
    }

    pub fn skew(&self, t: f64) -> Result<f64, GermError> {
        Ok(self.values(t)?.skew())
    }

    /// Ratio `Z^(+)/Z^(−)`, the squared spreading factor of the excited states.
    pub fn z_ratio(&self, t: f64) -> Result<f64, GermError> {
        let g = self.values(t)?;
        if g.zm == 0.0 {
            return Err(GermError::FocalPoint { t, branch: Branch::Minus });
        }
        Ok(g.zp / g.zm)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,Wm,Zm,Wp,Zp,skew,Q")?;
        let o = self.offset;
        for (t, y) in self.dense.t.iter().zip(&self.dense.y) {
            let g = GermValues { wm: y[o], zm: y[o + 1], wp: y[o + 2], zp: y[o + 3] };
            writeln!(w, "{t},{},{},{},{},{},{}", g.wm, g.zm, g.wp, g.zp, g.skew(), g.wm / g.zm)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GermOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
}

impl Default for GermOptions {
    fn default() -> Self {
        GermOptions { rtol: 1e-12, atol: 1e-12, max_step: f64::INFINITY }
    }
}

impl GermOptions {
    fn ode(&self) -> OdeOptions {
        OdeOptions { rtol: self.rtol, atol: self.atol, max_step: self.max_step, ..OdeOptions::default() }
    }
}

fn check_b(b: f64) -> Result<(), GermError> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(GermError::InvalidNormalization(b))
    }
}

fn variations(lx: f64, g: &[f64], out: &mut [f64]) {
    out[0] = -lx * g[0];
    out[1] = -2.0 * g[0] + lx * g[1];
    out[2] = -lx * g[2];
    out[3] = -2.0 * g[2] + lx * g[3];
}

fn finish(b: f64, dense: DenseTrajectory, offset: usize, window_end: WindowEnd) -> Result<GermState, GermError> {
    let mut g = GermState { b, window_end, plus_focal_time: None, max_skew_drift: 0.0, dense, offset };
    for (t, y) in g.dense.t.iter().zip(&g.dense.y) {
        let v = GermValues { wm: y[offset], zm: y[offset + 1], wp: y[offset + 2], zp: y[offset + 3] };
        let drift = (v.skew() - 2.0 * b).abs() / (2.0 * b);
        if drift > SKEW_TOLERANCE {
            return Err(GermError::SkewDrift { t: *t, drift });
        }
        g.max_skew_drift = g.max_skew_drift.max(drift);
    }
    g.plus_focal_time = g.dense.first_sign_change(offset + 3);
    Ok(g)
}

fn initial_germ(b: f64) -> [f64; 4] {
    [-b, 1.0, b, 1.0]
}

/// Integrates the variations for a given `Λ_x(t)` from `W^(±) = ±b`, `Z^(±) = 1` at `t_span.0`.
pub fn integrate_variations_with(
    lambda_x: impl Fn(f64) -> Result<f64, String>,
    b: f64,
    t_span: (f64, f64),
    opts: &GermOptions,
) -> Result<GermState, GermError> {
    check_b(b)?;
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<(), String> {
        variations(lambda_x(t)?, y, out);
        Ok(())
    };
    let sign = |_: f64, y: &[f64]| -y[0] * y[1] / b;
    let (dense, term) = ode::integrate(rhs, t_span.0, &initial_germ(b), t_span.1, &opts.ode(), Some(&sign))
        .map_err(|e| GermError::Breakdown { t: t_span.0, reason: e.to_string() })?;
    let end = match term {
        Termination::Completed => WindowEnd::Completed,
        Termination::Event { t } => WindowEnd::SignCondition { t },
    };
    finish(b, dense, 0, end)
}

/// Variations along a precomputed moment trajectory.
pub fn integrate_variations(
    traj: &EETrajectory,
    b: f64,
    t_span: (f64, f64),
    model: &ModelSpec,
    opts: &GermOptions,
) -> Result<GermState, GermError> {
    for t in [t_span.0, t_span.1] {
        if !traj.dense.contains(t) {
            return Err(GermError::OutsideWindow { t, start: traj.t_start(), end: traj.t_end() });
        }
    }
    integrate_variations_with(|t| lambda_x_on_trajectory(t, traj, model).map_err(|e| e.to_string()), b, t_span, opts)
}

/// Moments and variations integrated as one system with shared step control.
///
/// Both results stop at the first of: end of span, mass collapse, sign-condition violation.
pub fn integrate_joint(
    initial: &MomentState,
    b: f64,
    t_span: (f64, f64),
    model: &ModelSpec,
    opts: &GermOptions,
) -> Result<(EETrajectory, GermState), GermError> {
    check_b(b)?;
    let m = initial.order;
    ee::check_order(m)?;
    let n = m + 1;
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<(), String> {
        let s = MomentState::from_slice(m, y);
        let r = ee::ee_rhs(m, &s, t, model).map_err(|e| e.to_string())?;
        out[..n].copy_from_slice(&r);
        let lx = lambda_x_at(&s, t, model).map_err(|e| e.to_string())?;
        variations(lx, &y[n..], &mut out[n..]);
        Ok(())
    };
    let sigma0 = initial.sigma;
    let guard = |_: f64, y: &[f64]| (y[0] / sigma0).min(-y[n] * y[n + 1] / b);
    let mut y0 = initial.to_vec();
    y0.extend_from_slice(&initial_germ(b));
    let (dense, term) = ode::integrate(rhs, t_span.0, &y0, t_span.1, &opts.ode(), Some(&guard))
        .map_err(ee::breakdown)
        .map_err(GermError::Ee)?;
    let end = match term {
        Termination::Completed => WindowEnd::Completed,
        Termination::Event { t } => {
            let y = dense.y.last().unwrap();
            if y[0] / sigma0 <= -y[n] * y[n + 1] / b {
                WindowEnd::MassCollapse { t }
            } else {
                WindowEnd::SignCondition { t }
            }
        }
    };
    let traj = EETrajectory::from_dense(m, dense.clone());
    let germ = finish(b, dense, n, end)?;
    Ok((traj, germ))
}

/// `Q(t) = W^(−)/Z^(−)`.
pub fn q_ratio(g: &GermState, t: f64) -> Result<f64, GermError> {
    let v = g.values(t)?;
    if v.zm == 0.0 {
        return Err(GermError::FocalPoint { t, branch: Branch::Minus });
    }
    Ok(v.wm / v.zm)
}

/// Leading amplitude factor `exp(S/D) = σ(t)/σ(t_0)`.
pub fn action_and_mass_factor(traj: &EETrajectory, t: f64) -> Result<f64, GermError> {
    Ok(traj.sigma(t)? / traj.initial().sigma)
}

/// `exp φ(t) = sqrt|Z(t_0) W(t) / (Z(t) W(t_0))|` for one branch.
pub fn phase_factor(g: &GermState, t: f64, branch: Branch) -> Result<f64, GermError> {
    let v = g.values(t)?;
    let v0 = g.initial();
    let (w, z, w0, z0) = match branch {
        Branch::Minus => (v.wm, v.zm, v0.wm, v0.zm),
        Branch::Plus => {
            if let Some(tf) = g.plus_focal_time {
                if t >= tf {
                    return Err(GermError::FocalPoint { t: tf, branch });
                }
            }
            (v.wp, v.zp, v0.wp, v0.zp)
        }
    };
    if z == 0.0 || w0 == 0.0 {
        return Err(GermError::FocalPoint { t, branch });
    }
    Ok((z0 * w / (z * w0)).abs().sqrt())
}

/// Default moment-integration options used when the germ is integrated separately.
pub fn default_ee_options() -> EeOptions {
    EeOptions { rtol: 1e-12, atol: 1e-12, ..EeOptions::default() }
}
