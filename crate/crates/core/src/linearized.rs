//! Associated linear operator `L̂ = −∂_t + D∂²_x − ∂_x(Λ ·) + A` built on a
//! moment trajectory, its grid application, and the first two correction
//! operators of the semiclassical expansion of `D L̂` about the trajectory.
//!
//! With `p̂ = D∂_x` and `Δx = x − x(t)`, the corrections are
//! `L̂₁ = c₁ p̂ − ½Λ_xx p̂Δx² + D A_x Δx` and
//! `L̂₂ = c₂ p̂ − Λ₍₃₎/6 p̂Δx³ + ½D A₍₂₎ Δx²`, where `p̂Δx^k` acts as `p̂ ∘ Δx^k`.

use std::io::{self, Write};

use thiserror::Error;

use crate::ee::{self, EETrajectory, EeError, MomentState};
use crate::field::{derivative4, laplacian4, Field, FieldError};
use crate::germ;
use crate::model::{ModelError, ModelSpec};

/// Largest end-point magnitude, relative to the maximum, accepted by [`apply_operator`].
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearizedError {
    #[error("grid too narrow: boundary values reach {ratio:e} of the maximum")]
    GridTooNarrow { ratio: f64 },
    #[error("order-{order} corrections need moments up to order {needed}, trajectory has {have}")]
    InsufficientOrder { order: usize, needed: usize, have: usize },
    #[error("expansion order must be 1 or 2, got {0}")]
    UnsupportedOrder(usize),
    #[error(transparent)]
    Ee(#[from] EeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone)]
pub struct AssociatedOperator {
    pub traj: EETrajectory,
    pub model: ModelSpec,
}

/// Source of `∂_t v` for [`apply_operator`].
#[derive(Debug, Clone, Copy)]
pub enum TimeDerivative<'a> {
    /// Exact or externally computed `∂_t v` on the same grid.
    Field(&'a Field),
    /// Central difference `(after − before) / (2 dt)` of snapshots at `t ± dt`.
    Snapshots { before: &'a Field, after: &'a Field, dt: f64 },
    /// Treat `∂_t v` as zero (stationary part only).
    Zero,
}

/// Scalar multipliers of the operator monomials in one correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionCoefficients {
    pub order: usize,
    /// multiplier of `p̂`
    pub p: f64,
    /// multiplier of `p̂ Δx^{order+1}`
    pub p_dx: f64,
    /// multiplier of `Δx^order`
    pub dx: f64,
}

impl AssociatedOperator {
    pub fn new(traj: EETrajectory, model: ModelSpec) -> Self {
        AssociatedOperator { traj, model }
    }

    pub fn order(&self) -> usize {
        self.traj.order
    }

    pub fn state(&self, t: f64) -> Result<MomentState, LinearizedError> {
        Ok(self.traj.state(t)?)
    }

    pub fn coeff_lambda(&self, x: f64, t: f64) -> Result<f64, LinearizedError> {
        Ok(germ::lambda_at(x, &self.state(t)?, t, &self.model)?)
    }

    pub fn coeff_a(&self, x: f64, t: f64) -> Result<f64, LinearizedError> {
        let s = self.state(t)?;
        Ok(growth_field(x, &s, t, &self.model)?)
    }

    /// `Λ₍k₎ = ∂^k_x Λ` at the trajectory point.
    pub fn lambda_derivative(&self, k: usize, t: f64) -> Result<f64, LinearizedError> {
        Ok(lambda_derivative(k, &self.state(t)?, t, &self.model)?)
    }

    /// `A₍k₎ = ∂^k_x A` at the trajectory point.
    pub fn a_derivative(&self, k: usize, t: f64) -> Result<f64, LinearizedError> {
        Ok(a_derivative(k, &self.state(t)?, t, &self.model)?)
    }

    /// `(σ̇, ẋ, α̇…)` from the moment system at the interpolated state.
    pub fn moment_rates(&self, t: f64) -> Result<Vec<f64>, LinearizedError> {
        let s = self.state(t)?;
        Ok(ee::ee_rhs(s.order, &s, t, &self.model)?)
    }

    pub fn expansion_coefficients(&self, order: usize, t: f64) -> Result<ExpansionCoefficients, LinearizedError> {
        expansion_coefficients(order, &self.state(t)?, t, &self.model)
    }
}

fn nonlocal_sum(s: &MomentState, mut term: impl FnMut(usize) -> Result<f64, ModelError>) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    let mut fact = 1.0;
    for l in 0..=s.order {
        if l > 0 {
            fact *= l as f64;
        }
        let al = s.alpha(l);
        if al != 0.0 {
            sum += term(l)? * al / fact;
        }
    }
    Ok(sum)
}

/// `A(x) = a(x) − ϰσ Σ_l b_l(x, x̄) α^(l)/l!`.
pub fn growth_field(x: f64, s: &MomentState, t: f64, model: &ModelSpec) -> Result<f64, ModelError> {
    let mut v = model.growth.value(x, t);
    if model.kappa != 0.0 && !model.influence.is_zero() {
        v -= model.kappa * s.sigma * nonlocal_sum(s, |l| model.partial_b(0, l, x, s.x, t))?;
    }
    Ok(v)
}

pub fn lambda_derivative(k: usize, s: &MomentState, t: f64, model: &ModelSpec) -> Result<f64, ModelError> {
    let mut v = if model.potential.is_zero() { 0.0 } else { model.taylor_v(k, t, s.x)? };
    if model.kappa != 0.0 && !model.nonlocal_potential.is_zero() {
        v += model.kappa * s.sigma * nonlocal_sum(s, |l| model.taylor_w(k, l, t, s.x))?;
    }
    Ok(v)
}

pub fn a_derivative(k: usize, s: &MomentState, t: f64, model: &ModelSpec) -> Result<f64, ModelError> {
    let mut v = if model.growth.is_zero() { 0.0 } else { model.taylor_a(k, t, s.x)? };
    if model.kappa != 0.0 && !model.influence.is_zero() {
        v -= model.kappa * s.sigma * nonlocal_sum(s, |l| model.taylor_b(k, l, t, s.x))?;
    }
    Ok(v)
}

/// Multipliers of `L̂₁` (order 1) or `L̂₂` (order 2) exactly as the expansion is written.
pub fn expansion_coefficients(
    order: usize,
    s: &MomentState,
    t: f64,
    model: &ModelSpec,
) -> Result<ExpansionCoefficients, LinearizedError> {
    let k = model.kappa * s.sigma;
    let b_sum = |i: usize| -> Result<f64, ModelError> {
        if k == 0.0 || model.influence.is_zero() {
            Ok(0.0)
        } else {
            nonlocal_sum(s, |l| model.taylor_b(i, l, t, s.x))
        }
    };
    let w_sum = |i: usize| -> Result<f64, ModelError> {
        if k == 0.0 || model.nonlocal_potential.is_zero() {
            Ok(0.0)
        } else {
            nonlocal_sum(s, |l| model.taylor_w(i, l, t, s.x))
        }
    };
    let a = |i: usize| -> Result<f64, ModelError> {
        if model.growth.is_zero() {
            Ok(0.0)
        } else {
            model.taylor_a(i, t, s.x)
        }
    };
    let v = |i: usize| -> Result<f64, ModelError> {
        if model.potential.is_zero() {
            Ok(0.0)
        } else {
            model.taylor_v(i, t, s.x)
        }
    };
    let d = model.diffusion;
    match order {
        1 => Ok(ExpansionCoefficients {
            order,
            p: s.alpha(2) * (a(1)? - k * b_sum(1)? + 0.5 * v(2)? + 0.5 * k * w_sum(2)?),
            p_dx: -0.5 * lambda_derivative(2, s, t, model)?,
            dx: d * a_derivative(1, s, t, model)?,
        }),
        2 => {
            if s.order < 3 {
                return Err(LinearizedError::InsufficientOrder { order, needed: 3, have: s.order });
            }
            Ok(ExpansionCoefficients {
                order,
                p: 0.5 * s.alpha(3) * (a(2)? - k * b_sum(2)? + (v(3)? + k * w_sum(3)?) / 3.0),
                p_dx: -lambda_derivative(3, s, t, model)? / 6.0,
                dx: 0.5 * d * a_derivative(2, s, t, model)?,
            })
        }
        other => Err(LinearizedError::UnsupportedOrder(other)),
    }
}

fn check_boundary(v: &Field) -> Result<(), LinearizedError> {
    let ratio = v.boundary_ratio();
    if ratio > BOUNDARY_TOLERANCE {
        Err(LinearizedError::GridTooNarrow { ratio })
    } else {
        Ok(())
    }
}

/// `L̂ v` on the grid; spatial derivatives are 4th-order central differences with zero padding.
pub fn apply_operator(
    v: &Field,
    dt_v: TimeDerivative<'_>,
    t: f64,
    op: &AssociatedOperator,
) -> Result<Field, LinearizedError> {
    check_boundary(v)?;
    let s = op.state(t)?;
    apply_with_state(v, dt_v, t, &s, &op.model)
}

/// [`apply_operator`] with explicit moments instead of a trajectory lookup.
pub fn apply_with_state(
    v: &Field,
    dt_v: TimeDerivative<'_>,
    t: f64,
    s: &MomentState,
    model: &ModelSpec,
) -> Result<Field, LinearizedError> {
    let g = v.grid;
    let n = g.n;
    let dx = g.dx();
    let xs = g.nodes();
    let mut lv = vec![0.0; n];
    laplacian4(&v.values, dx, g.boundary, &mut lv);
    let mut flux = vec![0.0; n];
    for i in 0..n {
        flux[i] = germ::lambda_at(xs[i], s, t, model)? * v.values[i];
    }
    let mut dflux = vec![0.0; n];
    derivative4(&flux, dx, g.boundary, &mut dflux);
    let dt: Vec<f64> = match dt_v {
        TimeDerivative::Field(f) => {
            v.check_same_grid(f)?;
            f.values.clone()
        }
        TimeDerivative::Snapshots { before, after, dt } => {
            v.check_same_grid(before)?;
            v.check_same_grid(after)?;
            (0..n).map(|i| (after.values[i] - before.values[i]) / (2.0 * dt)).collect()
        }
        TimeDerivative::Zero => vec![0.0; n],
    };
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = -dt[i] + model.diffusion * lv[i] - dflux[i] + growth_field(xs[i], s, t, model)? * v.values[i];
    }
    Ok(Field { grid: g, values: out })
}

/// `(L̂₁ + L̂₂) v` plus the identity part `D(A(x̄) − σ̇/σ) v`, evaluated on the grid.
///
/// When the coefficients are polynomial of low enough degree this equals `D L̂ v` for the
/// leading state exactly (up to grid error), since that state is annihilated by `L̂₀`.
pub fn correction_terms(v: &Field, t: f64, op: &AssociatedOperator) -> Result<Field, LinearizedError> {
    let s = op.state(t)?;
    let rates = ee::ee_rhs(s.order, &s, t, &op.model)?;
    let d = op.model.diffusion;
    let g = v.grid;
    let n = g.n;
    let dx = g.dx();
    let xs = g.nodes();
    let c1 = expansion_coefficients(1, &s, t, &op.model)?;
    let c2 = if s.order >= 3 { Some(expansion_coefficients(2, &s, t, &op.model)?) } else { None };
    let p = |w: &[f64]| {
        let mut o = vec![0.0; n];
        derivative4(w, dx, g.boundary, &mut o);
        o.iter_mut().for_each(|x| *x *= d);
        o
    };
    let pow = |k: i32| -> Vec<f64> { (0..n).map(|i| (xs[i] - s.x).powi(k) * v.values[i]).collect() };
    let pv = p(&v.values);
    let p2 = p(&pow(2));
    let identity = d * (a_derivative(0, &s, t, &op.model)? - rates[0] / s.sigma);
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let dxi = xs[i] - s.x;
            c1.p * pv[i] + c1.p_dx * p2[i] + c1.dx * dxi * v.values[i] + identity * v.values[i]
        })
        .collect();
    if let Some(c2) = c2 {
        let p3 = p(&pow(3));
        for i in 0..n {
            let dxi = xs[i] - s.x;
            out[i] += c2.p * pv[i] + c2.p_dx * p3[i] + c2.dx * dxi * dxi * v.values[i];
        }
    }
    Ok(Field { grid: g, values: out })
}

/// One line of a residual report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRecord {
    pub t: f64,
    pub residual_l2: f64,
    pub residual_over_norm: f64,
}

impl ResidualRecord {
    pub fn new(t: f64, residual: &Field, v: &Field) -> Self {
        let r = residual.l2_norm();
        let nv = v.l2_norm();
        ResidualRecord { t, residual_l2: r, residual_over_norm: if nv > 0.0 { r / nv } else { 0.0 } }
    }
}

pub fn write_residual_csv<W: Write>(records: &[ResidualRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "t,residual_L2,residual_over_norm")?;
    for r in records {
        writeln!(w, "{},{},{}", r.t, r.residual_l2, r.residual_over_norm)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ee::{integrate_ee, EeOptions};
    use crate::field::FieldGrid;
    use crate::model::{Coefficient, Kernel};
    use std::f64::consts::PI;

    fn op_for(model: ModelSpec, s0: MomentState, t1: f64) -> AssociatedOperator {
        let traj = integrate_ee(&s0, (0.0, t1), &model, &EeOptions::default()).unwrap();
        AssociatedOperator::new(traj, model)
    }

    #[test]
    fn coefficient_special_cases() {
        let s0 = MomentState::gaussian(0.7, 0.2, 0.01).unwrap();
        let op = op_for(ModelSpec::new(0.01, 1.0).unwrap(), s0.clone(), 1.0);
        assert_eq!(op.coeff_lambda(0.4, 0.5).unwrap(), 0.0);
        let op = op_for(
            ModelSpec::new(0.01, 1.0).unwrap().with_potential(Coefficient::polynomial(vec![0.0, 1.5])),
            s0.clone(),
            1.0,
        );
        assert!((op.coeff_lambda(-0.3, 0.5).unwrap() - 1.5).abs() < 1e-14);
        let op = op_for(
            ModelSpec::new(0.01, 0.0).unwrap().with_growth(Coefficient::polynomial(vec![1.0, 0.5])),
            s0.clone(),
            1.0,
        );
        assert!((op.coeff_a(0.3, 0.5).unwrap() - 1.15).abs() < 1e-14);
        let m = ModelSpec::new(0.01, 2.0)
            .unwrap()
            .with_growth(Coefficient::Constant(1.0))
            .with_influence(Kernel::Constant(0.5));
        let op = op_for(m, s0, 1.0);
        let sigma = op.traj.sigma(0.7).unwrap();
        assert!((op.coeff_a(5.0, 0.7).unwrap() - (1.0 - 2.0 * sigma * 0.5)).abs() < 1e-14);
    }

    #[test]
    fn growth_coefficient_tracks_mass_rate() {
        // |A(x̄) − σ̇/σ| = O(D) in the order-2 special case
        let mut errs = Vec::new();
        for d in [0.02, 0.01, 0.005] {
            let m = ModelSpec::gaussian_competition(d, 1.0, 1.0, 1.0, 1.0).unwrap();
            let s0 = MomentState::gaussian(0.5, 0.0, d).unwrap();
            let op = op_for(m, s0, 1.0);
            let r = op.moment_rates(1.0).unwrap();
            let s = op.state(1.0).unwrap();
            errs.push((op.coeff_a(s.x, 1.0).unwrap() - r[0] / s.sigma).abs());
        }
        assert!((errs[0] / errs[1] - 2.0).abs() < 0.05 && (errs[1] / errs[2] - 2.0).abs() < 0.05, "{errs:?}");
    }

    #[test]
    fn expansion_coefficient_examples() {
        let s = MomentState::gaussian(0.8, 0.0, 0.02).unwrap();
        let m = ModelSpec::gaussian_competition(0.01, 1.0, 1.0, 1.0, 1.0).unwrap();
        let c = expansion_coefficients(1, &s, 0.0, &m).unwrap();
        assert!(c.p.abs() < 1e-15 && c.p_dx == 0.0 && c.dx.abs() < 1e-15);
        // Λ quadratic: V_x = 0.3 x² → Λ_xx = 0.6
        let m = ModelSpec::new(0.01, 0.0).unwrap().with_potential(Coefficient::polynomial(vec![0.0, 0.0, 0.0, 0.1]));
        assert!((expansion_coefficients(1, &s, 0.0, &m).unwrap().p_dx + 0.3).abs() < 1e-14);
        // A linear: Δx multiplier D A_x
        let m = ModelSpec::new(0.01, 0.0).unwrap().with_growth(Coefficient::polynomial(vec![1.0, 0.4]));
        assert!((expansion_coefficients(1, &s, 0.0, &m).unwrap().dx - 0.004).abs() < 1e-16);
        assert!(matches!(
            expansion_coefficients(2, &s, 0.0, &m),
            Err(LinearizedError::InsufficientOrder { needed: 3, .. })
        ));
        assert_eq!(expansion_coefficients(3, &s, 0.0, &m), Err(LinearizedError::UnsupportedOrder(3)));
        let s3 = MomentState::new(3, 0.8, 0.0, vec![0.02, 0.001]).unwrap();
        let m = ModelSpec::new(0.01, 0.0).unwrap().with_growth(Coefficient::polynomial(vec![1.0, 0.0, 0.6]));
        let c2 = expansion_coefficients(2, &s3, 0.0, &m).unwrap();
        assert!((c2.p - 0.5 * 0.001 * 1.2).abs() < 1e-16 && (c2.dx - 0.5 * 0.01 * 1.2).abs() < 1e-16);
    }

    fn heat(x: f64, t: f64, d: f64) -> f64 {
        (-(x * x) / (4.0 * d * (t + 1.0))).exp() / (4.0 * PI * d * (t + 1.0)).sqrt()
    }

    #[test]
    fn heat_kernel_residual_is_grid_small() {
        let d = 0.01;
        let s0 = MomentState::gaussian(1.0, 0.0, 2.0 * d).unwrap();
        let op = op_for(ModelSpec::new(d, 0.0).unwrap(), s0, 1.0);
        let t = 0.5;
        let mut res = Vec::new();
        for n in [401, 801] {
            let g = FieldGrid::dirichlet(-1.5, 1.5, n).unwrap();
            let v = g.sample(|x| heat(x, t, d));
            let h = 1e-3;
            let (vb, va) = (g.sample(|x| heat(x, t - h, d)), g.sample(|x| heat(x, t + h, d)));
            let r = apply_operator(&v, TimeDerivative::Snapshots { before: &vb, after: &va, dt: h }, t, &op).unwrap();
            res.push(r.l2_norm() / v.l2_norm());
        }
        // O(Δt²) floor from the snapshot stencil, O(Δx⁴) from space
        assert!(res[1] < 1e-5, "{res:?}");
        let g = FieldGrid::dirichlet(-1.5, 1.5, 401).unwrap();
        let z = apply_operator(&Field::zeros(g), TimeDerivative::Zero, t, &op).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn narrow_grid_rejected() {
        let d = 0.01;
        let s0 = MomentState::gaussian(1.0, 0.0, 2.0 * d).unwrap();
        let op = op_for(ModelSpec::new(d, 0.0).unwrap(), s0, 1.0);
        let g = FieldGrid::dirichlet(-0.2, 0.2, 101).unwrap();
        let v = g.sample(|x| heat(x, 0.5, d));
        assert!(matches!(
            apply_operator(&v, TimeDerivative::Zero, 0.5, &op),
            Err(LinearizedError::GridTooNarrow { .. })
        ));
    }

    #[test]
    fn residual_csv() {
        let mut buf = Vec::new();
        write_residual_csv(&[ResidualRecord { t: 0.5, residual_l2: 1e-3, residual_over_norm: 2e-3 }], &mut buf)
            .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,residual_L2,residual_over_norm\n0.5,0.001,0.002\n");
    }
}
