//! Trajectory-coherent states: the vacuum carried by the moment trajectory and
//! the germ, its excitations by the creation operator, the biorthogonal dual
//! family, and the leading-order solutions of the nonlinear equation.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::ee::{EETrajectory, EeError, MomentState};
use crate::field::{derivative4, Field, FieldGrid};
use crate::germ::{self, Branch, GermError, GermOptions, GermState, WindowEnd};
use crate::model::ModelSpec;
use crate::specfun::{hermite_poly, ln_factorial, scaled_hermite};

pub const MAX_EXCITATION: usize = 50;

/// Imaginary parts above this fraction of the term-magnitude bound are reported.
pub const REALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoherentError {
    #[error("excitation {0} exceeds the cap of {MAX_EXCITATION}")]
    ExcitationCap(usize),
    #[error("state {0} is odd: odd states carry zero mass and have no moment normalization")]
    OddState(usize),
    #[error("sign condition W(−)Z(−) < 0 fails at t={0}")]
    SignCondition(f64),
    #[error("state {n} has imaginary part {im:e} at x={x}, t={t}")]
    NotReal { n: usize, x: f64, t: f64, im: f64 },
    #[error("germ normalization b must be positive and finite, got {0}")]
    InvalidNormalization(f64),
    #[error("diffusion must be positive, got {0}")]
    InvalidDiffusion(f64),
    #[error(transparent)]
    Germ(#[from] GermError),
    #[error(transparent)]
    Ee(#[from] EeError),
}

/// `N_D = (b/(πD))^{1/4}`.
pub fn normalizer(b: f64, d: f64) -> f64 {
    (b / (PI * d)).powf(0.25)
}

/// Coherent basis attached to one moment trajectory and one germ.
#[derive(Debug, Clone)]
pub struct CoherentBasis {
    pub traj: EETrajectory,
    pub germ: GermState,
    pub diffusion: f64,
}

/// Everything the state formulas need at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub center: f64,
    /// `σ(t)/σ(t₀)`
    pub mass_ratio: f64,
    pub wm: f64,
    pub zm: f64,
    pub wp: f64,
    pub zp: f64,
    pub b: f64,
    pub d: f64,
}

impl Frame {
    fn nd(&self) -> f64 {
        normalizer(self.b, self.d)
    }

    pub fn vacuum(&self, x: f64) -> f64 {
        let dx = x - self.center;
        self.nd()
            * (-self.wm / (self.b * self.zm)).sqrt()
            * self.mass_ratio
            * (self.wm * dx * dx / (2.0 * self.d * self.zm)).exp()
    }

    /// `r^n H_n(c/r)` with `r² = Z(+)/Z(−)` and `c = √(b/D) Δx / Z(−)`, evaluated
    /// over complex scalars when `r` is imaginary.
    fn excitation_factor(&self, n: usize, x: f64) -> Result<f64, CoherentError> {
        let c = (self.b / self.d).sqrt() * (x - self.center) / self.zm;
        let r2 = self.zp / self.zm;
        hermite_factor(n, c, r2, x, self.t)
    }

    pub fn state(&self, n: usize, x: f64) -> Result<f64, CoherentError> {
        if n > MAX_EXCITATION {
            return Err(CoherentError::ExcitationCap(n));
        }
        let g = self.excitation_factor(n, x)?;
        Ok(sign(n) * (-0.5 * (n as f64 * 2f64.ln() + ln_factorial(n))).exp() * g * self.vacuum(x))
    }

    pub fn dual_vacuum(&self, x: f64) -> f64 {
        let dx = x - self.center;
        self.nd() / self.mass_ratio
            * (-self.b / (self.wm * self.zp)).sqrt()
            * (-self.wp * dx * dx / (2.0 * self.d * self.zp)).exp()
    }

    pub fn dual_state(&self, n: usize, x: f64) -> Result<f64, CoherentError> {
        if n > MAX_EXCITATION {
            return Err(CoherentError::ExcitationCap(n));
        }
        let c = (self.b / self.d).sqrt() * (x - self.center) / self.zp;
        let g = hermite_factor(n, c, self.zm / self.zp, x, self.t)?;
        Ok(sign(n) * (-0.5 * (n as f64 * 2f64.ln() + ln_factorial(n))).exp() * g * self.dual_vacuum(x))
    }

    /// Variance `−D Z(−)/W(−)` of the vacuum.
    pub fn vacuum_variance(&self) -> f64 {
        -self.d * self.zm / self.wm
    }

    /// `â(−) f = −[Z(−) D f' − W(−) Δx f]/√(2bD)` on a grid.
    pub fn annihilate(&self, f: &Field) -> Field {
        self.ladder(f, -1.0, self.zm, self.wm)
    }

    /// `â(+) f = [Z(+) D f' − W(+) Δx f]/√(2bD)` on a grid.
    pub fn create(&self, f: &Field) -> Field {
        self.ladder(f, 1.0, self.zp, self.wp)
    }

    fn ladder(&self, f: &Field, s: f64, z: f64, w: f64) -> Field {
        let g = f.grid;
        let mut d = vec![0.0; g.n];
        derivative4(&f.values, g.dx(), g.boundary, &mut d);
        let k = s / (2.0 * self.b * self.d).sqrt();
        let values = (0..g.n).map(|i| k * (z * self.d * d[i] - w * (g.x(i) - self.center) * f.values[i])).collect();
        Field { grid: g, values }
    }
}

fn sign(n: usize) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `r^n H_n(c/r)` for real `c`, `r²`.
fn hermite_factor(n: usize, c: f64, r2: f64, x: f64, t: f64) -> Result<f64, CoherentError> {
    if r2.abs() <= 1e-6 {
        // r → 0: the polynomial form in r² is the stable one
        return Ok(scaled_hermite(n, Complex64::new(2.0 * c, 0.0), Complex64::new(r2, 0.0)).re);
    }
    let r = Complex64::new(r2, 0.0).sqrt();
    let h = hermite_poly(n, Complex64::new(c, 0.0) / r).expect("degree below cap") * r.powu(n as u32);
    // bound on the magnitude of the terms that combine into h
    let (mut gm, mut g) = (1.0, 2.0 * c.abs());
    if n == 0 {
        g = 1.0;
    }
    for k in 1..n {
        let next = 2.0 * c.abs() * g + 2.0 * k as f64 * r2.abs() * gm;
        gm = g;
        g = next;
    }
    if h.im.abs() > REALITY_TOLERANCE * g.max(f64::MIN_POSITIVE) {
        return Err(CoherentError::NotReal { n, x, t, im: h.im });
    }
    Ok(h.re)
}

impl CoherentBasis {
    pub fn new(traj: EETrajectory, germ: GermState, diffusion: f64) -> Result<Self, CoherentError> {
        if !(diffusion > 0.0) {
            return Err(CoherentError::InvalidDiffusion(diffusion));
        }
        Ok(CoherentBasis { traj, germ, diffusion })
    }

    /// Integrates moments and germ jointly from `initial` and wraps them.
    pub fn from_moments(
        initial: &MomentState,
        b: f64,
        t_span: (f64, f64),
        model: &ModelSpec,
        opts: &GermOptions,
    ) -> Result<Self, CoherentError> {
        let (traj, germ) = germ::integrate_joint(initial, b, t_span, model, opts)?;
        Self::new(traj, germ, model.diffusion)
    }

    pub fn b(&self) -> f64 {
        self.germ.b
    }

    pub fn t_end(&self) -> f64 {
        self.germ.t_end().min(self.traj.t_end())
    }

    pub fn window_end(&self) -> WindowEnd {
        self.germ.window_end
    }

    pub fn frame(&self, t: f64) -> Result<Frame, CoherentError> {
        let g = self.germ.values(t)?;
        if !(g.wm * g.zm < 0.0) {
            return Err(CoherentError::SignCondition(t));
        }
        let s = self.traj.state(t)?;
        Ok(Frame {
            t,
            center: s.x,
            mass_ratio: s.sigma / self.traj.initial().sigma,
            wm: g.wm,
            zm: g.zm,
            wp: g.wp,
            zp: g.zp,
            b: self.germ.b,
            d: self.diffusion,
        })
    }

    /// Frame for the dual family, which needs `Z(+) > 0`.
    pub fn dual_frame(&self, t: f64) -> Result<Frame, CoherentError> {
        let f = self.frame(t)?;
        let before_focal = self.germ.plus_focal_time.is_none_or(|tf| t < tf);
        if !(f.zp > 0.0) || !before_focal {
            let tf = self.germ.plus_focal_time.unwrap_or(t);
            return Err(GermError::FocalPoint { t: tf, branch: Branch::Plus }.into());
        }
        Ok(f)
    }

    pub fn vacuum(&self, x: f64, t: f64) -> Result<f64, CoherentError> {
        Ok(self.frame(t)?.vacuum(x))
    }

    pub fn state(&self, n: usize, x: f64, t: f64) -> Result<f64, CoherentError> {
        self.frame(t)?.state(n, x)
    }

    pub fn dual_state(&self, n: usize, x: f64, t: f64) -> Result<f64, CoherentError> {
        self.dual_frame(t)?.dual_state(n, x)
    }

    pub fn state_field(&self, n: usize, t: f64, grid: &FieldGrid) -> Result<Field, CoherentError> {
        let f = self.frame(t)?;
        let values = grid.nodes().into_iter().map(|x| f.state(n, x)).collect::<Result<_, _>>()?;
        Ok(Field { grid: *grid, values })
    }

    pub fn dual_field(&self, n: usize, t: f64, grid: &FieldGrid) -> Result<Field, CoherentError> {
        let f = self.dual_frame(t)?;
        let values = grid.nodes().into_iter().map(|x| f.dual_state(n, x)).collect::<Result<_, _>>()?;
        Ok(Field { grid: *grid, values })
    }

    /// Dirichlet grid around `x(t)` wide enough for states up to `n` (and their duals).
    pub fn grid_for(&self, n: usize, t: f64, points_per_sd: f64) -> Result<FieldGrid, CoherentError> {
        let f = self.frame(t)?;
        let mut sd = f.vacuum_variance().sqrt();
        if f.zp > 0.0 {
            // the dual weight can be wider than the vacuum
            sd = sd.max((self.diffusion * f.zp / f.wp.abs().max(1e-300)).sqrt().min(1e3 * sd));
        }
        let half = sd * (12.0 + 3.0 * (n as f64 + 1.0).sqrt());
        Ok(FieldGrid::centered(f.center, half, sd / points_per_sd).expect("positive width"))
    }
}

/// Moments of the coherent state `n` at the initial time, used as the moment-system constants.
pub fn initial_moment_constants(n: usize, d: f64, b: f64, x0: f64) -> Result<MomentState, CoherentError> {
    if n % 2 == 1 {
        return Err(CoherentError::OddState(n));
    }
    if n > MAX_EXCITATION {
        return Err(CoherentError::ExcitationCap(n));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(CoherentError::InvalidNormalization(b));
    }
    if !(d > 0.0) {
        return Err(CoherentError::InvalidDiffusion(d));
    }
    let l = n / 2;
    let sigma =
        (4.0 * PI * d / b).powf(0.25) * (0.5 * ln_factorial(2 * l) - l as f64 * 2f64.ln() - ln_factorial(l)).exp();
    Ok(MomentState::gaussian(sigma, x0, d * (1.0 + 2.0 * n as f64) / b)?)
}

/// Leading-order asymptotic solution `u_n(x, t)` of the nonlinear equation.
#[derive(Debug, Clone)]
pub struct AssembledSolution {
    pub n: usize,
    /// `None` only for an odd state assembled with `allow_odd_zero`.
    pub basis: Option<CoherentBasis>,
}

impl AssembledSolution {
    pub fn value(&self, x: f64, t: f64) -> Result<f64, CoherentError> {
        match &self.basis {
            Some(b) => b.state(self.n, x, t),
            None => Ok(0.0),
        }
    }

    pub fn field(&self, t: f64, grid: &FieldGrid) -> Result<Field, CoherentError> {
        match &self.basis {
            Some(b) => b.state_field(self.n, t, grid),
            None => Ok(Field::zeros(*grid)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub b: f64,
    pub x0: f64,
    /// Return the zero solution for odd `n` instead of an error.
    pub allow_odd_zero: bool,
    pub germ: GermOptions,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { b: 1.0, x0: 0.0, allow_odd_zero: false, germ: GermOptions::default() }
    }
}

/// Constants from the state's own moments, then moments and germ integrated jointly (order 2).
pub fn assemble_solution(
    n: usize,
    model: &ModelSpec,
    t_span: (f64, f64),
    opts: &AssemblyOptions,
) -> Result<AssembledSolution, CoherentError> {
    if n % 2 == 1 && opts.allow_odd_zero {
        if n > MAX_EXCITATION {
            return Err(CoherentError::ExcitationCap(n));
        }
        return Ok(AssembledSolution { n, basis: None });
    }
    let c = initial_moment_constants(n, model.diffusion, opts.b, opts.x0)?;
    let basis = CoherentBasis::from_moments(&c, opts.b, t_span, model, &opts.germ)?;
    Ok(AssembledSolution { n, basis: Some(basis) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ee::moments_of_field;

    fn basis(d: f64, b: f64, n: usize, t1: f64) -> (CoherentBasis, ModelSpec) {
        let m = ModelSpec::gaussian_competition(d, 1.0, 1.0, 1.0, 1.0).unwrap();
        let c = initial_moment_constants(n, d, b, 0.3).unwrap();
        (CoherentBasis::from_moments(&c, b, (0.0, t1), &m, &GermOptions::default()).unwrap(), m)
    }

    #[test]
    fn vacuum_at_start() {
        let (d, b) = (0.01, 0.7);
        let (cb, _) = basis(d, b, 0, 1.0);
        let nd = normalizer(b, d);
        assert!((cb.vacuum(0.3, 0.0).unwrap() - nd).abs() < 1e-14);
        let f = cb.frame(0.0).unwrap();
        assert!((f.vacuum_variance() - d / b).abs() < 1e-15);
        let g = cb.grid_for(0, 0.0, 40.0).unwrap();
        let v = cb.state_field(0, 0.0, &g).unwrap();
        assert!((v.integral() - (4.0 * PI * d / b).powf(0.25)).abs() < 1e-10);
        assert!(v.boundary_ratio() < 1e-12);
    }

    #[test]
    fn ladder_relations_on_grid() {
        let (cb, _) = basis(0.01, 1.0, 0, 1.0);
        for t in [0.0, 0.4, 1.0] {
            let f = cb.frame(t).unwrap();
            let g = cb.grid_for(3, t, 80.0).unwrap();
            let v0 = cb.state_field(0, t, &g).unwrap();
            let a = f.annihilate(&v0);
            assert!(a.l2_norm() <= 1e-6 * v0.l2_norm(), "t={t}");
            let v1 = cb.state_field(1, t, &g).unwrap();
            let c = f.create(&v0);
            assert!(c.relative_l2_distance(&v1).unwrap() <= 1e-6, "t={t}");
            let v2 = cb.state_field(2, t, &g).unwrap();
            let c2 = f.create(&v1).map(|_, v| v / 2f64.sqrt());
            assert!(c2.relative_l2_distance(&v2).unwrap() <= 1e-6, "t={t}");
        }
    }

    #[test]
    fn odd_state_vanishes_on_trajectory() {
        let (cb, _) = basis(0.01, 1.0, 0, 1.0);
        let x = cb.traj.center(0.5).unwrap();
        assert_eq!(cb.state(1, x, 0.5).unwrap(), 0.0);
        assert_eq!(cb.state(0, 0.1, 0.5).unwrap(), cb.vacuum(0.1, 0.5).unwrap());
        assert_eq!(cb.state(51, 0.0, 0.0), Err(CoherentError::ExcitationCap(51)));
    }

    #[test]
    fn biorthogonality() {
        let (cb, _) = basis(0.01, 0.25, 0, 1.0);
        for t in [0.0, 0.5, 1.0] {
            let g = cb.grid_for(6, t, 60.0).unwrap();
            let vs: Vec<Field> = (0..=6).map(|n| cb.state_field(n, t, &g).unwrap()).collect();
            let ws: Vec<Field> = (0..=6).map(|n| cb.dual_field(n, t, &g).unwrap()).collect();
            for n in 0..=6 {
                for m in 0..=6 {
                    let p = Field { grid: g, values: (0..g.n).map(|i| vs[n].values[i] * ws[m].values[i]).collect() };
                    let e = if n == m { 1.0 } else { 0.0 };
                    assert!((p.integral() - e).abs() <= 1e-6, "t={t} n={n} m={m}: {}", p.integral());
                }
            }
        }
    }

    #[test]
    fn dual_needs_positive_z_plus() {
        // Λ_x = 0 → Z(+) = 1 − 2bt vanishes at t = 1/(2b)
        let d = 0.01;
        let m = ModelSpec::new(d, 0.0).unwrap();
        let c = initial_moment_constants(0, d, 1.0, 0.0).unwrap();
        let cb = CoherentBasis::from_moments(&c, 1.0, (0.0, 1.0), &m, &GermOptions::default()).unwrap();
        assert!(cb.dual_state(0, 0.0, 0.3).is_ok());
        assert!(matches!(
            cb.dual_state(0, 0.0, 0.7),
            Err(CoherentError::Germ(GermError::FocalPoint { branch: Branch::Plus, .. }))
        ));
        // the states themselves pass through the focal time of the (+) branch: r² crosses zero
        for t in [0.45, 0.5, 0.55, 0.9] {
            for n in 0..8 {
                assert!(cb.state(n, 0.05, t).unwrap().is_finite(), "t={t} n={n}");
            }
        }
        // imaginary r: compare the complex path with the polynomial form
        let f = cb.frame(0.9).unwrap();
        for n in 0..10 {
            let c = (f.b / f.d).sqrt() * 0.05 / f.zm;
            let direct = scaled_hermite(n, Complex64::new(2.0 * c, 0.0), Complex64::new(f.zp / f.zm, 0.0)).re;
            let via = hermite_factor(n, c, f.zp / f.zm, 0.05, 0.9).unwrap();
            assert!((direct - via).abs() <= 1e-10 * direct.abs().max(1.0), "n={n}");
        }
    }

    #[test]
    fn moment_constants() {
        let (d, b) = (0.01, 0.5);
        let c0 = initial_moment_constants(0, d, b, 0.2).unwrap();
        assert!((c0.sigma - (4.0 * PI * d / b).powf(0.25)).abs() < 1e-15);
        assert!((c0.variance() - d / b).abs() < 1e-18);
        let c2 = initial_moment_constants(2, d, b, 0.2).unwrap();
        assert!((c2.sigma - c0.sigma * 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((c2.variance() - 5.0 * d / b).abs() < 1e-16);
        assert_eq!(initial_moment_constants(3, d, b, 0.0), Err(CoherentError::OddState(3)));
        // quadrature of the state itself
        for n in [0, 2, 4] {
            let c = initial_moment_constants(n, d, b, 0.2).unwrap();
            let (cb, _) = {
                let m = ModelSpec::new(d, 0.0).unwrap();
                (CoherentBasis::from_moments(&c, b, (0.0, 0.1), &m, &GermOptions::default()).unwrap(), ())
            };
            let g = cb.grid_for(n, 0.0, 60.0).unwrap();
            let q = moments_of_field(&cb.state_field(n, 0.0, &g).unwrap(), 2).unwrap();
            assert!((q.sigma - c.sigma).abs() <= 1e-8 * c.sigma, "n={n}");
            assert!((q.variance() - c.variance()).abs() <= 1e-8 * c.variance(), "n={n}");
        }
    }

    #[test]
    fn mass_transport_and_variance() {
        let (cb, _) = basis(0.01, 1.0, 0, 2.0);
        for t in [0.0, 0.7, 2.0] {
            let g = cb.grid_for(0, t, 40.0).unwrap();
            let v = cb.state_field(0, t, &g).unwrap();
            let s = cb.traj.state(t).unwrap();
            assert!((v.integral() - s.sigma).abs() <= 1e-6 * s.sigma, "t={t}");
            let q = moments_of_field(&v, 2).unwrap();
            let f = cb.frame(t).unwrap();
            assert!((q.variance() - f.vacuum_variance()).abs() <= 1e-8 * f.vacuum_variance());
        }
    }

    #[test]
    fn parity() {
        let (cb, _) = basis(0.01, 1.0, 0, 1.0);
        let x = cb.traj.center(0.6).unwrap();
        for n in 0..6 {
            for xi in [0.01, 0.05, 0.2] {
                let (a, b) = (cb.state(n, x + xi, 0.6).unwrap(), cb.state(n, x - xi, 0.6).unwrap());
                assert!((a - sign(n) * b).abs() <= 1e-10 * a.abs().max(1e-300), "n={n}");
            }
        }
    }

    #[test]
    fn finite_rank_reconstruction_improves() {
        // b = 1/4 keeps the (+) focal time at t = 2, outside the checked window
        let (cb, _) = basis(0.01, 0.25, 0, 1.0);
        for t in [0.0, 0.5] {
            let g = cb.grid_for(16, t, 40.0).unwrap();
            let xc = cb.traj.center(t).unwrap();
            // a shifted bump slightly wider than the vacuum: the dual pairing amounts to
            // running the flow backward, so the data must be at least this smooth
            let sd = cb.frame(t).unwrap().vacuum_variance().sqrt();
            let f = g.sample(|x| (-((x - xc - 0.5 * sd) / (1.3 * sd)).powi(2) / 2.0).exp());
            let mut errs = Vec::new();
            for nmax in [4, 8, 16] {
                let mut rec = Field::zeros(g);
                for n in 0..=nmax {
                    let v = cb.state_field(n, t, &g).unwrap();
                    let w = cb.dual_field(n, t, &g).unwrap();
                    let c = Field { grid: g, values: (0..g.n).map(|i| w.values[i] * f.values[i]).collect() }.integral();
                    for i in 0..g.n {
                        rec.values[i] += c * v.values[i];
                    }
                }
                errs.push(rec.relative_l2_distance(&f).unwrap());
            }
            assert!(errs[0] > errs[1] && errs[1] > errs[2], "t={t}: {errs:?}");
        }
    }

    #[test]
    fn assembly() {
        let d = 0.01;
        let m = ModelSpec::gaussian_competition(d, 1.0, 1.0, 1.0, 1.0).unwrap();
        let opts = AssemblyOptions { x0: 0.4, ..AssemblyOptions::default() };
        let u = assemble_solution(0, &m, (0.0, 1.0), &opts).unwrap();
        let cb = u.basis.as_ref().unwrap();
        assert_eq!(u.value(0.41, 0.0).unwrap(), cb.vacuum(0.41, 0.0).unwrap());
        for t in [0.0, 0.5, 1.0] {
            assert!((cb.traj.center(t).unwrap() - 0.4).abs() < 1e-14);
        }
        assert!(matches!(assemble_solution(1, &m, (0.0, 1.0), &opts), Err(CoherentError::OddState(1))));
        let z = assemble_solution(1, &m, (0.0, 1.0), &AssemblyOptions { allow_odd_zero: true, ..opts }).unwrap();
        assert_eq!(z.value(0.4, 0.5).unwrap(), 0.0);
    }
}
