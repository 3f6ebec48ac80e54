//! Direct method-of-lines solver: the brute-force reference for every asymptotic claim.
//!
//! Space: 4th-order central second differences, 2nd-order central differences for
//! the convection divergence, trapezoid (rectangle, when periodic) quadrature for the
//! nonlocal integrals, applied as a direct O(N²) sum. Time: classical RK4 with a
//! uniform step inside each output interval.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{derivative2, laplacian4, Boundary, Field, FieldError, FieldGrid};
use crate::largetime::{self, LargeTimeError, LargeTimeParams};
use crate::linearized::{AssociatedOperator, LinearizedError};
use crate::model::{Kernel, ModelError, ModelSpec};

/// Growth of `max|u|` over its initial value treated as a blown-up explicit scheme.
pub const GROWTH_LIMIT: f64 = 1e6;
/// Dirichlet end-point magnitude, relative to the maximum, that still counts as "zero".
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;
/// Diffusive stability factor: `dt ≤ 0.4 Δx²/(2D)`.
const DIFFUSIVE_CFL: f64 = 0.2;
/// Reaction steps are limited for accuracy, not stability: RK4 at `r dt = 0.05`
/// keeps the relative error per unit time near 1e−8.
const REACTION_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("output times must be finite and nondecreasing, starting at the initial time")]
    InvalidTimes,
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("explicit scheme unstable at t = {t}: max|u| grew by {growth:e}")]
    Unstable { t: f64, growth: f64 },
    #[error("solution reaches the Dirichlet boundary at t = {t}: boundary/max = {ratio:e}")]
    BoundaryMass { t: f64, ratio: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linearized(#[from] LinearizedError),
    #[error(transparent)]
    LargeTime(#[from] LargeTimeError),
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPolicy {
    /// Record the worst ratio in the result.
    Monitor,
    /// Fail when a snapshot exceeds [`OracleOptions::boundary_tolerance`].
    Enforce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Fixed step; `None` picks the stability bound.
    pub dt: Option<f64>,
    pub boundary_policy: BoundaryPolicy,
    pub boundary_tolerance: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { dt: None, boundary_policy: BoundaryPolicy::Monitor, boundary_tolerance: BOUNDARY_TOLERANCE }
    }
}

/// Snapshots of a direct solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub steps: usize,
    /// Largest step used.
    pub dt: f64,
    /// Worst Dirichlet boundary ratio over the snapshots (0 when periodic).
    pub max_boundary_ratio: f64,
    /// Most negative `min(u)/max(u)` over the snapshots (positivity monitor).
    pub min_over_max: f64,
}

impl Solution {
    pub fn last(&self) -> &Field {
        self.fields.last().expect("solution has at least the initial snapshot")
    }

    /// `(mass, center, variance)` of snapshot `i`.
    pub fn moments(&self, i: usize) -> (f64, f64, f64) {
        field_moments(&self.fields[i])
    }

    /// Positivity monitor: `min(u) ≥ −1e−10 max(u)` on every snapshot.
    pub fn positivity_ok(&self) -> bool {
        self.min_over_max >= -1e-10
    }

    /// CSV `t,mass,center,variance`.
    pub fn write_trajectory_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,mass,center,variance")?;
        for (i, t) in self.times.iter().enumerate() {
            let (m, c, v) = self.moments(i);
            writeln!(w, "{t},{m:e},{c:e},{v:e}")?;
        }
        Ok(())
    }
}

pub fn field_moments(f: &Field) -> (f64, f64, f64) {
    let m = f.integral();
    let c = f.weighted_integral(|x| x) / m;
    let v = f.weighted_integral(|x| (x - c) * (x - c)) / m;
    (m, c, v)
}

/// Dirichlet grid covering `[lo − width·sd, hi + width·sd]` with `points_per_sd` nodes per `sd`.
pub fn localized_grid(lo: f64, hi: f64, sd: f64, width: f64, points_per_sd: f64) -> Result<FieldGrid> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo) + width * sd;
    Ok(FieldGrid::centered(center, half, sd / points_per_sd)?)
}

/// `x ↦ Σ_j w_j k(x_i, x_j) u_j` on a fixed grid.
enum KernelOp {
    Zero,
    /// Translation-invariant kernel: `lags[d + n − 1] = w · k(d Δx)`, images summed when periodic.
    Toeplitz(Vec<f64>),
    Dense(Vec<f64>),
    Dynamic {
        kernel: Kernel,
        dx_order: usize,
    },
}

impl KernelOp {
    /// Discretized `∂^k_x`-kernel; `dx_order` selects `b` (0) or `W_x` (1).
    fn build(kernel: &Kernel, dx_order: usize, grid: &FieldGrid) -> Result<Self> {
        if kernel.is_zero() {
            return Ok(KernelOp::Zero);
        }
        let n = grid.n;
        let dx = grid.dx();
        let w = grid.weights();
        if kernel.is_translation_invariant() {
            // Dirichlet end weights differ, so the Toeplitz form needs uniform weights
            if grid.boundary == Boundary::Periodic {
                let period = grid.period();
                let images: i32 = if matches!(kernel, Kernel::Constant(_)) { 0 } else { 3 };
                let mut lags = vec![0.0; 2 * n - 1];
                for (idx, lag) in lags.iter_mut().enumerate() {
                    let d = idx as f64 - (n - 1) as f64;
                    let mut s = 0.0;
                    for m in -images..=images {
                        s += kernel.partial(dx_order, 0, d * dx + m as f64 * period, 0.0, 0.0)?;
                    }
                    *lag = dx * s;
                }
                return Ok(KernelOp::Toeplitz(lags));
            }
        }
        if kernel.time_dependent() {
            return Ok(KernelOp::Dynamic { kernel: kernel.clone(), dx_order });
        }
        let xs = grid.nodes();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = w[j] * kernel.partial(dx_order, 0, xs[i], xs[j], 0.0)?;
            }
        }
        Ok(KernelOp::Dense(m))
    }

    fn apply(&self, grid: &FieldGrid, u: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let n = u.len();
        match self {
            KernelOp::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            KernelOp::Toeplitz(lags) => out.par_iter_mut().enumerate().for_each(|(i, o)| {
                // lags already hold the image sums, so no wrapping is needed
                let mut s = 0.0;
                for (j, uj) in u.iter().enumerate() {
                    let d = i as isize - j as isize;
                    s += lags[(d + n as isize - 1) as usize] * uj;
                }
                *o = s;
            }),
            KernelOp::Dense(m) => out.par_iter_mut().enumerate().for_each(|(i, o)| {
                let row = &m[i * n..(i + 1) * n];
                *o = row.iter().zip(u).map(|(a, b)| a * b).sum();
            }),
            KernelOp::Dynamic { kernel, dx_order } => {
                let xs = grid.nodes();
                let w = grid.weights();
                let rows: Vec<std::result::Result<f64, ModelError>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += w[j] * kernel.partial(*dx_order, 0, xs[i], xs[j], t)? * u[j];
                        }
                        Ok(s)
                    })
                    .collect();
                for (o, r) in out.iter_mut().zip(rows) {
                    *o = r?;
                }
            }
        }
        Ok(())
    }
}

/// Right-hand side `du/dt = F(t, u)`.
trait Rhs: Sync {
    fn eval(&self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()>;
    /// Stable step estimate at `(t, u)`.
    fn stable_dt(&self, t: f64, u: &[f64]) -> Result<f64>;
}

struct NonlinearRhs<'a> {
    grid: FieldGrid,
    model: &'a ModelSpec,
    b: KernelOp,
    wx: KernelOp,
}

impl<'a> NonlinearRhs<'a> {
    fn new(grid: FieldGrid, model: &'a ModelSpec) -> Result<Self> {
        Ok(NonlinearRhs {
            grid,
            model,
            b: KernelOp::build(&model.influence, 0, &grid)?,
            wx: KernelOp::build(&model.nonlocal_potential, 1, &grid)?,
        })
    }

    /// Reaction rate `a − ϰ b∗u` and velocity `V_x + ϰ W_x∗u` on the grid.
    fn coefficients(&self, t: f64, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = u.len();
        let xs = self.grid.nodes();
        let mut conv = vec![0.0; n];
        self.b.apply(&self.grid, u, t, &mut conv)?;
        let mut rate = vec![0.0; n];
        for i in 0..n {
            rate[i] = self.model.growth.value(xs[i], t) - self.model.kappa * conv[i];
        }
        let mut vel = vec![0.0; n];
        self.wx.apply(&self.grid, u, t, &mut vel)?;
        let has_v = !self.model.potential.is_zero();
        for i in 0..n {
            vel[i] *= self.model.kappa;
            if has_v {
                vel[i] += self.model.potential.dx(1, xs[i], t)?;
            }
        }
        Ok((rate, vel))
    }
}

fn assemble(grid: &FieldGrid, d: f64, u: &[f64], rate: &[f64], vel: &[f64], out: &mut [f64]) {
    let n = u.len();
    let dx = grid.dx();
    laplacian4(u, dx, grid.boundary, out);
    let flux: Vec<f64> = (0..n).map(|i| vel[i] * u[i]).collect();
    let mut dflux = vec![0.0; n];
    derivative2(&flux, dx, grid.boundary, &mut dflux);
    for i in 0..n {
        out[i] = d * out[i] - dflux[i] + rate[i] * u[i];
    }
}

fn stable_step(grid: &FieldGrid, d: f64, rate: &[f64], vel: &[f64]) -> f64 {
    let dx = grid.dx();
    let mut dt = if d > 0.0 { DIFFUSIVE_CFL * dx * dx / d } else { f64::INFINITY };
    let vmax = vel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if vmax > 0.0 {
        dt = dt.min(0.5 * dx / vmax);
    }
    let rmax = rate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if rmax > 0.0 {
        dt = dt.min(REACTION_STEP / rmax);
    }
    dt
}

impl Rhs for NonlinearRhs<'_> {
    fn eval(&self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        let (rate, vel) = self.coefficients(t, u)?;
        assemble(&self.grid, self.model.diffusion, u, &rate, &vel, out);
        Ok(())
    }

    fn stable_dt(&self, t: f64, u: &[f64]) -> Result<f64> {
        let (rate, vel) = self.coefficients(t, u)?;
        Ok(stable_step(&self.grid, self.model.diffusion, &rate, &vel))
    }
}

struct AssociatedRhs<'a> {
    grid: FieldGrid,
    op: &'a AssociatedOperator,
}

impl AssociatedRhs<'_> {
    fn coefficients(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let xs = self.grid.nodes();
        let mut rate = Vec::with_capacity(xs.len());
        let mut vel = Vec::with_capacity(xs.len());
        for &x in &xs {
            rate.push(self.op.coeff_a(x, t)?);
            vel.push(self.op.coeff_lambda(x, t)?);
        }
        Ok((rate, vel))
    }
}

impl Rhs for AssociatedRhs<'_> {
    fn eval(&self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        let (rate, vel) = self.coefficients(t)?;
        assemble(&self.grid, self.op.model.diffusion, u, &rate, &vel, out);
        Ok(())
    }

    fn stable_dt(&self, t: f64, _u: &[f64]) -> Result<f64> {
        let (rate, vel) = self.coefficients(t)?;
        Ok(stable_step(&self.grid, self.op.model.diffusion, &rate, &vel))
    }
}

struct PerturbationRhs {
    grid: FieldGrid,
    p: LargeTimeParams,
    b: KernelOp,
}

impl Rhs for PerturbationRhs {
    fn eval(&self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        let beta = largetime::background(t, &self.p)?;
        let n = u.len();
        let mut conv = vec![0.0; n];
        self.b.apply(&self.grid, u, t, &mut conv)?;
        let r = self.p.a - self.p.kappa * self.p.kernel_mass() * beta;
        laplacian4(u, self.grid.dx(), self.grid.boundary, out);
        for i in 0..n {
            out[i] = self.p.diffusion * out[i] + r * u[i] - self.p.kappa * beta * conv[i];
        }
        Ok(())
    }

    fn stable_dt(&self, t: f64, _u: &[f64]) -> Result<f64> {
        let beta = largetime::background(t, &self.p)?;
        let r = (self.p.a - self.p.kappa * self.p.kernel_mass() * beta).abs()
            + self.p.kappa * beta * self.p.kernel_mass().abs();
        Ok(stable_step(&self.grid, self.p.diffusion, &[r], &[0.0]))
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OracleError::InvalidTimes);
    }
    Ok(())
}

fn integrate(u0: &Field, times: &[f64], rhs: &impl Rhs, opts: &OracleOptions) -> Result<Solution> {
    check_times(times)?;
    let grid = u0.grid;
    let n = grid.n;
    let dt_max = match opts.dt {
        Some(dt) if dt > 0.0 && dt.is_finite() => dt,
        Some(dt) => return Err(OracleError::InvalidStep(dt)),
        None => rhs.stable_dt(times[0], &u0.values)?,
    };
    let scale0 = u0.max_abs().max(f64::MIN_POSITIVE);
    let mut u = u0.values.clone();
    let mut sol = Solution {
        times: vec![times[0]],
        fields: vec![u0.clone()],
        steps: 0,
        dt: 0.0,
        max_boundary_ratio: 0.0,
        min_over_max: 0.0,
    };
    let record = |sol: &mut Solution, t: f64, f: Field| -> Result<()> {
        if grid.boundary == Boundary::DirichletZero {
            let ratio = f.boundary_ratio();
            sol.max_boundary_ratio = sol.max_boundary_ratio.max(ratio);
            if opts.boundary_policy == BoundaryPolicy::Enforce && ratio > opts.boundary_tolerance {
                return Err(OracleError::BoundaryMass { t, ratio });
            }
        }
        let mx = f.max();
        if mx > 0.0 {
            sol.min_over_max = sol.min_over_max.min(f.min() / mx);
        }
        Ok(())
    };
    record(&mut sol, times[0], u0.clone())?;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for w in times.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let span = tb - ta;
        let steps = if span > 0.0 { (span / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize } else { 0 };
        let h = if steps > 0 { span / steps as f64 } else { 0.0 };
        sol.dt = sol.dt.max(h);
        for s in 0..steps {
            let t = ta + s as f64 * h;
            rhs.eval(t, &u, &mut k1)?;
            for i in 0..n {
                tmp[i] = u[i] + 0.5 * h * k1[i];
            }
            rhs.eval(t + 0.5 * h, &tmp, &mut k2)?;
            for i in 0..n {
                tmp[i] = u[i] + 0.5 * h * k2[i];
            }
            rhs.eval(t + 0.5 * h, &tmp, &mut k3)?;
            for i in 0..n {
                tmp[i] = u[i] + h * k3[i];
            }
            rhs.eval(t + h, &tmp, &mut k4)?;
            for i in 0..n {
                u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            sol.steps += 1;
            let growth = u.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale0;
            if !(growth <= GROWTH_LIMIT) {
                return Err(OracleError::Unstable { t: t + h, growth });
            }
        }
        let f = Field::new(grid, u.clone())?;
        record(&mut sol, tb, f.clone())?;
        sol.times.push(tb);
        sol.fields.push(f);
    }
    Ok(sol)
}

/// Solves the full nonlinear equation from `u0`, returning snapshots at `times` (`times[0]` is the start).
pub fn solve_nonlinear(u0: &Field, model: &ModelSpec, times: &[f64], opts: &OracleOptions) -> Result<Solution> {
    model.validate()?;
    let rhs = NonlinearRhs::new(u0.grid, model)?;
    integrate(u0, times, &rhs, opts)
}

/// Solves the associated linear equation `v_t = D v_xx − ∂_x(Λ v) + A v` built on `op`'s trajectory.
pub fn solve_linear_associated(
    u0: &Field,
    op: &AssociatedOperator,
    times: &[f64],
    opts: &OracleOptions,
) -> Result<Solution> {
    let rhs = AssociatedRhs { grid: u0.grid, op };
    integrate(u0, times, &rhs, opts)
}

/// Solves the first-order perturbation equation of the homogeneous background,
/// `ū_t = D ū_xx + (a − ϰBβ) ū − ϰβ b∗ū`, from `phi`.
pub fn solve_linear_perturbation(
    phi: &Field,
    p: &LargeTimeParams,
    times: &[f64],
    opts: &OracleOptions,
) -> Result<Solution> {
    let rhs =
        PerturbationRhs { grid: phi.grid, p: *p, b: KernelOp::build(&Kernel::gaussian(p.b0, p.gamma), 0, &phi.grid)? };
    integrate(phi, times, &rhs, opts)
}
