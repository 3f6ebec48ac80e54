//! Dormand–Prince 5(4) integrator with error control, the method's native
//! fourth-order dense output and a sign-change event that terminates integration.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("non-finite state at t={t}")]
    NonFinite { t: f64 },
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64 },
    #[error("step budget of {max_steps} exhausted at t={t}")]
    TooManySteps { t: f64, max_steps: usize },
    #[error("right-hand side failed at t={t}: {msg}")]
    Rhs { t: f64, msg: String },
    #[error("invalid integration request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-10, max_step: f64::INFINITY, initial_step: None, max_steps: 1_000_000 }
    }
}

/// Accepted steps of an integration.
///
/// Segments carry the Dormand–Prince continuous extension when available and
/// fall back to cubic Hermite interpolation of the node values otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    /// Per segment: the full step length and the fifth interpolation coefficient.
    ext: Vec<Option<(f64, Vec<f64>)>>,
}

/// Why integration stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Completed,
    /// The event function reached zero at `t`.
    Event {
        t: f64,
    },
}

impl DenseTrajectory {
    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().expect("trajectory has at least one node")
    }

    pub fn dim(&self) -> usize {
        self.y[0].len()
    }

    pub fn contains(&self, t: f64) -> bool {
        let tol = 1e-12 * (1.0 + self.t_end().abs());
        t >= self.t_start() - tol && t <= self.t_end() + tol
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.t.len();
        if n < 2 {
            return 0;
        }
        match self.t.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Node-only trajectory interpolated by cubic Hermite splines.
    pub fn from_nodes(t: Vec<f64>, y: Vec<Vec<f64>>, dy: Vec<Vec<f64>>) -> Self {
        let ext = vec![None; t.len().saturating_sub(1)];
        DenseTrajectory { t, y, dy, ext }
    }

    /// Hermite-form coefficients `(y0, y1 − y0, h f0 − (y1 − y0), …)` of segment `i`.
    fn coeffs(&self, i: usize, k: usize) -> (f64, [f64; 5]) {
        let (h, r5) = match &self.ext[i] {
            Some((h, r)) => (*h, r[k]),
            None => (self.t[i + 1] - self.t[i], 0.0),
        };
        let y0 = self.y[i][k];
        // with a cut segment the far node is not the step end, so rebuild r2..r4 from the step end
        let (r2, r3, r4);
        match &self.ext[i] {
            Some((_, r)) if r.len() > self.dim() => {
                let n = self.dim();
                r2 = r[n + k];
                r3 = r[2 * n + k];
                r4 = r[3 * n + k];
            }
            _ => {
                let d = self.y[i + 1][k] - y0;
                r2 = d;
                r3 = h * self.dy[i][k] - d;
                r4 = d - h * self.dy[i + 1][k] - r3;
            }
        }
        (h, [y0, r2, r3, r4, r5])
    }

    /// State at `t`, or `None` outside the covered interval.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        if !self.contains(t) {
            return None;
        }
        if self.t.len() == 1 {
            return Some(self.y[0].clone());
        }
        let i = self.segment(t);
        Some(
            (0..self.dim())
                .map(|k| {
                    let (h, r) = self.coeffs(i, k);
                    let s = ((t - self.t[i]) / h).clamp(0.0, 1.0);
                    let s1 = 1.0 - s;
                    r[0] + s * (r[1] + s1 * (r[2] + s * (r[3] + s1 * r[4])))
                })
                .collect(),
        )
    }

    /// Time derivative of the interpolant at `t`.
    pub fn eval_derivative(&self, t: f64) -> Option<Vec<f64>> {
        if !self.contains(t) {
            return None;
        }
        if self.t.len() == 1 {
            return Some(self.dy[0].clone());
        }
        let i = self.segment(t);
        Some(
            (0..self.dim())
                .map(|k| {
                    let (h, r) = self.coeffs(i, k);
                    let s = ((t - self.t[i]) / h).clamp(0.0, 1.0);
                    let s1 = 1.0 - s;
                    (r[1] + (1.0 - 2.0 * s) * r[2] + s * (2.0 - 3.0 * s) * r[3] + 2.0 * s * s1 * (1.0 - 2.0 * s) * r[4])
                        / h
                })
                .collect(),
        )
    }

    /// First time in `[t_start, t_end]` where component `k` changes sign, located by bisection.
    pub fn first_sign_change(&self, k: usize) -> Option<f64> {
        for i in 0..self.t.len().saturating_sub(1) {
            let (a, b) = (self.y[i][k], self.y[i + 1][k]);
            if a == 0.0 {
                return Some(self.t[i]);
            }
            if a * b <= 0.0 {
                return Some(self.bisect(i, |_, y| y[k]));
            }
        }
        None
    }

    fn bisect(&self, i: usize, g: impl Fn(f64, &[f64]) -> f64) -> f64 {
        let (mut lo, mut hi) = (self.t[i], self.t[i + 1]);
        let g_lo = g(lo, &self.y[i]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let gm = g(mid, &self.eval(mid).unwrap());
            if gm.signum() == g_lo.signum() && gm != 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Keep nodes up to `t_cut` and append an interpolated node at `t_cut`.
    fn truncate_at(&mut self, t_cut: f64, dy_cut: Vec<f64>) {
        let y_cut = self.eval(t_cut).unwrap();
        let keep = self.t.iter().take_while(|&&t| t < t_cut).count().max(1);
        let cut_seg = if keep < self.t.len() && keep >= 1 {
            // freeze the full-step polynomial of the segment being cut
            let i = keep - 1;
            let n = self.dim();
            let mut r = vec![0.0; 4 * n];
            let mut h = 0.0;
            for k in 0..n {
                let (hh, c) = self.coeffs(i, k);
                h = hh;
                r[k] = c[4];
                r[n + k] = c[1];
                r[2 * n + k] = c[2];
                r[3 * n + k] = c[3];
            }
            Some((h, r))
        } else {
            None
        };
        self.t.truncate(keep);
        self.y.truncate(keep);
        self.dy.truncate(keep);
        self.ext.truncate(keep.saturating_sub(1));
        if t_cut > *self.t.last().unwrap() {
            self.t.push(t_cut);
            self.y.push(y_cut);
            self.dy.push(dy_cut);
            self.ext.push(cut_seg);
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Event function: integration stops where it first reaches zero from above.
pub type EventFn<'a> = &'a dyn Fn(f64, &[f64]) -> f64;

/// Integrates `y' = f(t, y)` from `t0` to `t1 ≥ t0`.
pub fn integrate<F>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &OdeOptions,
    event: Option<EventFn<'_>>,
) -> Result<(DenseTrajectory, Termination), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), String>,
{
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(OdeError::Invalid(format!("time span [{t0}, {t1}]")));
    }
    if !(opts.rtol > 0.0 && opts.atol >= 0.0) {
        return Err(OdeError::Invalid("tolerances must be positive".into()));
    }
    let n = y0.len();
    let mut call = |t: f64, y: &[f64], out: &mut [f64]| -> Result<(), OdeError> {
        rhs(t, y, out).map_err(|msg| OdeError::Rhs { t, msg })?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t });
        }
        Ok(())
    };
    let mut f0 = vec![0.0; n];
    call(t0, y0, &mut f0)?;
    let mut traj = DenseTrajectory { t: vec![t0], y: vec![y0.to_vec()], dy: vec![f0.clone()], ext: Vec::new() };
    if t1 == t0 {
        return Ok((traj, Termination::Completed));
    }

    let span = t1 - t0;
    let weight = |y: &[f64], i: usize| opts.atol + opts.rtol * y[i].abs();
    let mut h = match opts.initial_step {
        Some(h) => h,
        None => {
            // Hairer–Wanner starting step heuristic.
            let d0 = (y0.iter().enumerate().map(|(i, v)| (v / weight(y0, i)).powi(2)).sum::<f64>() / n as f64).sqrt();
            let d1 = (f0.iter().enumerate().map(|(i, v)| (v / weight(y0, i)).powi(2)).sum::<f64>() / n as f64).sqrt();
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * f0[i]).collect();
            let mut f1 = vec![0.0; n];
            call(t0 + h0, &y1, &mut f1)?;
            let d2 = ((0..n).map(|i| ((f1[i] - f0[i]) / weight(y0, i)).powi(2)).sum::<f64>() / n as f64).sqrt() / h0;
            let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
            (100.0 * h0).min(h1)
        }
    };
    h = h.min(opts.max_step).min(span).max(1e-14 * span);

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = f0;
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut g_prev = event.map(|g| g(t0, y0));
    let mut steps = 0usize;

    while t < t1 {
        if steps >= opts.max_steps {
            return Err(OdeError::TooManySteps { t, max_steps: opts.max_steps });
        }
        steps += 1;
        let last = t + h >= t1 - 1e-14 * span;
        if last {
            h = t1 - t;
        }
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        call(t + C2 * h, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        call(t + C3 * h, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        call(t + C4 * h, &tmp, &mut k4)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        call(t + C5 * h, &tmp, &mut k5)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        call(t + h, &tmp, &mut k6)?;
        for i in 0..n {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        call(t + h, &ynew, &mut k7)?;
        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.2;
            if h < 1e-14 * span.max(t.abs()) {
                return Err(OdeError::StepUnderflow { t });
            }
            continue;
        }
        if err <= 1.0 {
            let t_new = if last { t1 } else { t + h };
            traj.t.push(t_new);
            traj.y.push(ynew.clone());
            traj.dy.push(k7.clone());
            let r5 = (0..n)
                .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
                .collect();
            traj.ext.push(Some((t_new - t, r5)));
            if let (Some(g), Some(gp)) = (event, g_prev) {
                let g_new = g(t_new, &ynew);
                if gp > 0.0 && g_new <= 0.0 {
                    let i = traj.t.len() - 2;
                    let t_ev = traj.bisect(i, g);
                    let y_ev = traj.eval(t_ev).unwrap();
                    let mut d = vec![0.0; n];
                    call(t_ev, &y_ev, &mut d)?;
                    traj.truncate_at(t_ev, d);
                    return Ok((traj, Termination::Event { t: t_ev }));
                }
                g_prev = Some(g_new);
            }
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(opts.max_step);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
        if h < 1e-14 * span.max(t.abs()) {
            return Err(OdeError::StepUnderflow { t });
        }
    }
    Ok((traj, Termination::Completed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_to_tolerance() {
        let (traj, term) = integrate(
            |_, y, d| {
                d[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            5.0,
            &OdeOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(term, Termination::Completed);
        assert_eq!(traj.t_end(), 5.0);
        assert!((traj.y.last().unwrap()[0] - (-5f64).exp()).abs() < 1e-10);
        for &t in &[0.3, 1.7, 4.2] {
            let v = traj.eval(t).unwrap()[0];
            assert!((v - (-t).exp()).abs() < 1e-9, "dense output at {t}");
        }
        assert!(traj.eval(5.1).is_none());
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let opts = OdeOptions { rtol: 1e-12, atol: 1e-12, ..Default::default() };
        let (traj, _) = integrate(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0, 0.0],
            10.0,
            &opts,
            None,
        )
        .unwrap();
        let y = traj.y.last().unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-10);
        assert!((y[1] + 10f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn event_stops_at_root() {
        let g = |_: f64, y: &[f64]| y[0];
        let (traj, term) = integrate(
            |_, _, d| {
                d[0] = -1.0;
                Ok(())
            },
            0.0,
            &[0.5],
            3.0,
            &OdeOptions::default(),
            Some(&g),
        )
        .unwrap();
        match term {
            Termination::Event { t } => assert!((t - 0.5).abs() < 1e-12),
            _ => panic!("event not detected"),
        }
        assert!((traj.t_end() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_length_span_and_errors() {
        let (traj, _) = integrate(
            |_, _, d| {
                d[0] = 1.0;
                Ok(())
            },
            1.0,
            &[2.0],
            1.0,
            &OdeOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(traj.t, vec![1.0]);
        assert_eq!(traj.eval(1.0).unwrap(), vec![2.0]);
        let r = integrate(
            |_, y, d| {
                d[0] = y[0] * y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            2.0,
            &OdeOptions::default(),
            None,
        );
        assert!(r.is_err(), "blow-up at t=1 must be reported");
        let r = integrate(|_, _, _| Err("boom".into()), 0.0, &[1.0], 1.0, &OdeOptions::default(), None);
        assert!(matches!(r, Err(OdeError::Rhs { .. })));
        assert!(integrate(|_, _, _| Ok(()), 1.0, &[1.0], 0.0, &OdeOptions::default(), None).is_err());
    }

    #[test]
    fn sign_change_located() {
        let (traj, _) = integrate(
            |t, _, d| {
                d[0] = (t).cos();
                Ok(())
            },
            0.0,
            &[0.0],
            4.0,
            &OdeOptions::default(),
            None,
        )
        .unwrap();
        // y = sin t changes sign at π; the first node is the exact zero at t=0, so probe component of shifted copy
        let shifted = DenseTrajectory::from_nodes(
            traj.t.clone(),
            traj.y.iter().map(|v| vec![v[0] + 1e-3]).collect(),
            traj.dy.clone(),
        );
        let tz = shifted.first_sign_change(0).unwrap();
        assert!((tz - (std::f64::consts::PI + 1e-3)).abs() < 1e-6);
    }
}
