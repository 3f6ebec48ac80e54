//! The acceptance suite: eleven end-to-end checks with pinned tolerances.
//!
//! Each check returns a [`CriterionResult`]; [`CriterionResult::line`] is the one-line
//! PASS/FAIL report. Two criteria are known to fail for reasons outside the
//! implementation (see [`KNOWN_UNATTAINABLE`]); they are run and reported like the rest.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coherent::{self, AssemblyOptions, CoherentBasis};
use crate::ee::{self, ClosedFormParams, EeOptions, MomentState};
use crate::field::{Field, FieldGrid};
use crate::germ::{self, GermOptions};
use crate::largetime::{self, LargeTimeParams};
use crate::model::ModelSpec;
use crate::oracle::{self, OracleOptions};
use crate::quad::{self, loglog_order};
use crate::specfun;

pub const DEFAULT_SEED: u64 = 20240607;

/// Criteria whose stated thresholds a faithful implementation does not meet.
///
/// 6: the fitted convergence order is 1.17 against a threshold of 1.2; the error is
///    resolved to four digits under grid and step refinement, so the gap is a property of the
///    leading-order asymptotics.
/// 8: the large-time asymptote relies on a sign slip; the ratio at `at = 20` is ~1e−18.
pub const KNOWN_UNATTAINABLE: &[u8] = &[6, 8];

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "moment system vs closed form"),
    (2, "germ invariant and Riccati"),
    (3, "Hermite integral lemmas"),
    (4, "coherent-state moment constants"),
    (5, "biorthogonality and reconstruction"),
    (6, "leading-term convergence in D"),
    (7, "Verhulst limit and chi"),
    (8, "large-time coefficients"),
    (9, "perturbation series vs direct solve"),
    (10, "multimodality reproduction"),
    (11, "direct solver self-checks"),
];

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }

    pub fn known_unattainable(&self) -> bool {
        KNOWN_UNATTAINABLE.contains(&self.id)
    }
}

type Outcome = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Runs criterion `id` (1–11).
pub fn run_criterion(id: u8, seed: u64) -> CriterionResult {
    let name = CRITERIA.iter().find(|(i, _)| *i == id).map(|(_, n)| *n).unwrap_or("unknown criterion");
    let start = Instant::now();
    let outcome = match id {
        1 => ee_closed_form(seed),
        2 => germ_invariants(seed),
        3 => hermite_lemmas(),
        4 => moment_constants(),
        5 => biorthogonality(),
        6 => leading_term_convergence(),
        7 => verhulst(),
        8 => large_time_coefficients(),
        9 => perturbation_consistency(),
        10 => multimodality(),
        11 => oracle_self_checks(),
        _ => Err(format!("no criterion {id}")),
    };
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    let budget = match id {
        1 => Some(5.0),
        6 => Some(120.0),
        9 => Some(60.0),
        _ => None,
    };
    if let Some(limit) = budget {
        if elapsed.as_secs_f64() >= limit {
            passed = false;
            let _ = write!(detail, "; runtime over {limit} s");
        }
    }
    CriterionResult { id, name, passed, detail, elapsed }
}

/// Runs all criteria in order.
pub fn run_all(seed: u64) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|(id, _)| run_criterion(*id, seed)).collect()
}

fn ee_closed_form(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = rng.random_range(0.5..2.0);
        let kappa = rng.random_range(0.5..2.0);
        let d = rng.random_range(1e-3..1e-1);
        let sigma0 = rng.random_range(0.2..2.0);
        let v0 = rng.random_range(0.0..0.05);
        let gamma = rng.random_range(1.5..3.0);
        let model = ModelSpec::gaussian_competition(d, kappa, a, 1.0, gamma).map_err(err)?;
        let s0 = MomentState::gaussian(sigma0, 0.0, v0).map_err(err)?;
        let traj = ee::integrate_ee(&s0, (0.0, 5.0), &model, &EeOptions::default()).map_err(err)?;
        let p = ClosedFormParams::from_model(&model, &s0).map_err(err)?;
        for i in 0..=50 {
            let t = 0.1 * i as f64;
            let e = traj.state(t).map_err(err)?;
            let c = ee::closed_form_m2(&p, t).map_err(err)?;
            worst =
                worst.max((e.sigma - c.sigma).abs()).max((e.x - c.x).abs()).max((e.variance() - c.variance()).abs());
        }
    }
    Ok((worst <= 1e-8, format!("max abs deviation {worst:.2e} over 20 draws (tol 1e-8)")))
}

fn random_profile(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let c: Vec<(f64, f64, f64)> =
        (0..4).map(|_| (rng.random_range(-0.5..0.5), rng.random_range(0.2..3.0), rng.random_range(0.0..6.0))).collect();
    move |t| c.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum()
}

fn germ_invariants(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut drift = 0.0f64;
    let mut riccati = 0.0f64;
    for _ in 0..20 {
        let f = random_profile(&mut rng);
        let b = rng.random_range(0.5..2.5);
        let g = germ::integrate_variations_with(|t| Ok(f(t)), b, (0.0, 4.0), &GermOptions::default()).map_err(err)?;
        drift = drift.max(g.max_skew_drift);
        let q = |t: f64| germ::q_ratio(&g, t);
        let h = 1e-3;
        let mut t = 0.1;
        while t < g.t_end() - 0.1 {
            let dq = (q(t - 2.0 * h).map_err(err)? - 8.0 * q(t - h).map_err(err)? + 8.0 * q(t + h).map_err(err)?
                - q(t + 2.0 * h).map_err(err)?)
                / (12.0 * h);
            let qt = q(t).map_err(err)?;
            riccati = riccati.max((0.5 * dq - qt * qt + f(t) * qt).abs());
            t += 0.05;
        }
    }
    Ok((
        drift <= 1e-9 && riccati <= 1e-8,
        format!("skew drift {drift:.2e}·2b (tol 1e-9), Riccati residual {riccati:.2e} (tol 1e-8)"),
    ))
}

fn hermite_lemmas() -> Outcome {
    let mut worst = 0.0f64;
    for n in 0..=10 {
        let q =
            quad::simpson(|y| specfun::hermite(n, y).unwrap_or(f64::NAN) * (-0.5 * y * y).exp(), -40.0, 40.0, 40_000);
        let exact = specfun::gauss_hermite_i(n).map_err(err)?;
        worst = worst.max((q - exact).abs() / exact.abs().max(1.0));
        let q = quad::simpson(
            |y| y * y * specfun::hermite(2 * n, y).unwrap_or(f64::NAN) * (-0.5 * y * y).exp(),
            -40.0,
            40.0,
            40_000,
        );
        let exact = specfun::gauss_hermite_j(n).map_err(err)?;
        worst = worst.max((q - exact).abs() / exact.abs());
    }
    Ok((worst <= 1e-10, format!("max relative deviation {worst:.2e} for n ≤ 10 (tol 1e-10)")))
}

fn moment_constants() -> Outcome {
    let (d, b, x0) = (0.01, 0.5, 0.2);
    let model = ModelSpec::new(d, 0.0).map_err(err)?;
    let mut worst = 0.0f64;
    let mut odd = 0.0f64;
    for n in 0..=3usize {
        let c = coherent::initial_moment_constants(2 * n, d, b, x0).map_err(err)?;
        let sigma = (4.0 * PI * d / b).powf(0.25)
            * ((0.5 * specfun::ln_factorial(2 * n)) - n as f64 * 2f64.ln() - specfun::ln_factorial(n)).exp();
        let alpha2 = d * (1.0 + 4.0 * n as f64) / b;
        let cb = CoherentBasis::from_moments(&c, b, (0.0, 0.1), &model, &GermOptions::default()).map_err(err)?;
        let g = cb.grid_for(2 * n + 1, 0.0, 60.0).map_err(err)?;
        let q = ee::moments_of_field(&cb.state_field(2 * n, 0.0, &g).map_err(err)?, 2).map_err(err)?;
        worst = worst
            .max((q.sigma - sigma).abs() / sigma)
            .max((q.x - x0).abs() / x0)
            .max((q.variance() - alpha2).abs() / alpha2);
        let v = cb.state_field(2 * n + 1, 0.0, &g).map_err(err)?;
        odd = odd.max(v.integral().abs());
    }
    Ok((
        worst <= 1e-8 && odd <= 1e-10,
        format!("max relative moment deviation {worst:.2e} (tol 1e-8), odd-state mass {odd:.2e} (tol 1e-10)"),
    ))
}

fn product_integral(a: &Field, b: &Field) -> f64 {
    Field { grid: a.grid, values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect() }.integral()
}

fn biorthogonality() -> Outcome {
    let d = 0.01;
    // germ b = 1/4 puts the (+) focal time at t = 2, past the checked window
    let b = 0.25;
    let model = ModelSpec::gaussian_competition(d, 1.0, 1.0, 1.0, 1.0).map_err(err)?;
    let c = coherent::initial_moment_constants(0, d, b, 0.3).map_err(err)?;
    let cb = CoherentBasis::from_moments(&c, b, (0.0, 1.0), &model, &GermOptions::default()).map_err(err)?;
    let mut gram = 0.0f64;
    for t in [0.0, 0.5, 1.0] {
        let g = cb.grid_for(6, t, 60.0).map_err(err)?;
        let vs = (0..=6).map(|n| cb.state_field(n, t, &g)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let ws = (0..=6).map(|n| cb.dual_field(n, t, &g)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        for n in 0..=6 {
            for m in 0..=6 {
                let e = if n == m { 1.0 } else { 0.0 };
                gram = gram.max((product_integral(&vs[n], &ws[m]) - e).abs());
            }
        }
    }
    let mut decreasing = true;
    let mut report = String::new();
    for t in [0.0, 0.5] {
        let g = cb.grid_for(16, t, 40.0).map_err(err)?;
        let xc = cb.traj.center(t).map_err(err)?;
        let sd = cb.frame(t).map_err(err)?.vacuum_variance().sqrt();
        // smooth data: the dual pairing is an oblique projection (see the ledger)
        let f = g.sample(|x| (-((x - xc - 0.5 * sd) / (1.3 * sd)).powi(2) / 2.0).exp());
        let mut errs = Vec::new();
        for nmax in [4, 8, 16] {
            let mut rec = Field::zeros(g);
            for n in 0..=nmax {
                let v = cb.state_field(n, t, &g).map_err(err)?;
                let c = product_integral(&cb.dual_field(n, t, &g).map_err(err)?, &f);
                for (r, vi) in rec.values.iter_mut().zip(&v.values) {
                    *r += c * vi;
                }
            }
            errs.push(rec.relative_l2_distance(&f).map_err(err)?);
        }
        decreasing &= errs[0] > errs[1] && errs[1] > errs[2];
        let _ = write!(report, " t={t}: {:.1e}/{:.1e}/{:.1e};", errs[0], errs[1], errs[2]);
    }
    Ok((gram <= 1e-6 && decreasing, format!("max |G − I| {gram:.2e} (tol 1e-6); reconstruction N=4/8/16{report}")))
}

/// Relative L² error of the leading term against the direct solver at `t = 1`.
pub fn leading_term_error(d: f64) -> Result<f64, String> {
    let model = ModelSpec::gaussian_competition(d, 1.0, 1.0, 1.0, 1.0).map_err(err)?;
    let u = coherent::assemble_solution(0, &model, (0.0, 1.0), &AssemblyOptions::default()).map_err(err)?;
    let cb = u.basis.as_ref().ok_or("even state has a basis")?;
    let sd0 = cb.frame(0.0).map_err(err)?.vacuum_variance().sqrt();
    let sd1 = cb.frame(1.0).map_err(err)?.vacuum_variance().sqrt();
    let x = cb.traj.center(1.0).map_err(err)?;
    let (lo, hi) = (x.min(0.0), x.max(0.0));
    let g = oracle::localized_grid(lo, hi, sd0.max(sd1), 8.0, 20.0).map_err(err)?;
    let u0 = u.field(0.0, &g).map_err(err)?;
    let sol = oracle::solve_nonlinear(&u0, &model, &[0.0, 1.0], &OracleOptions::default()).map_err(err)?;
    u.field(1.0, &g).map_err(err)?.relative_l2_distance(sol.last()).map_err(err)
}

fn leading_term_convergence() -> Outcome {
    let ds = [0.02, 0.01, 0.005, 0.0025];
    let errs = ds.iter().map(|&d| leading_term_error(d)).collect::<Result<Vec<_>, _>>()?;
    let order = loglog_order(&ds, &errs);
    let list: Vec<String> = errs.iter().map(|e| format!("{e:.3e}")).collect();
    Ok((order >= 1.2, format!("fitted order {order:.3} (need ≥ 1.2); errors {}", list.join("/"))))
}

fn verhulst() -> Outcome {
    let p = LargeTimeParams::default();
    let lim = p.limit().ok_or("positive kernel mass")?;
    let mut limit_err = 0.0f64;
    for t in [27.7, 30.0, 40.0, 100.0] {
        debug_assert!((-p.a * t).exp() < 1e-12);
        limit_err = limit_err.max((largetime::background(t, &p).map_err(err)? - lim).abs() / lim);
    }
    let mut chi_err = 0.0f64;
    for i in 1..=20 {
        let t = 0.25 * i as f64;
        let q = quad::adaptive(|s| largetime::background(s, &p).unwrap_or(f64::NAN), 0.0, t, 1e-13);
        chi_err = chi_err.max((largetime::chi(t, &p).map_err(err)? - q).abs() / q);
    }
    Ok((
        limit_err <= 1e-8 && chi_err <= 1e-10,
        format!("limit deviation {limit_err:.2e} (tol 1e-8), chi vs quadrature {chi_err:.2e} (tol 1e-10)"),
    ))
}

fn large_time_coefficients() -> Outcome {
    let p = LargeTimeParams::default();
    let c = largetime::coefficients(0, &[0.0, 0.5, 2.0, 20.0 / p.a], 9, &p).map_err(err)?;
    let c00 = (c.values[0][0] - 1.0).abs();
    let even0 = (1..=4).map(|l| c.values[0][2 * l].abs()).fold(0.0, f64::max);
    let odd_exact = c.values.iter().all(|row| row.iter().skip(1).step_by(2).all(|v| *v == 0.0));
    let t = 20.0 / p.a;
    let ratio = c.values[3][0] / largetime::coefficient_asymptote(0, t, &p).map_err(err)?;
    let identities = c00 <= 1e-10 && even0 <= 1e-10 && odd_exact;
    let ratio_ok = (ratio - 1.0).abs() <= 0.1;
    Ok((
        identities && ratio_ok,
        format!(
            "|C0(0) − 1| {c00:.1e}, max |C2l(0)| {even0:.1e}, odd entries exactly 0: {odd_exact}; \
             C0/asymptote at at=20 = {ratio:.3e} (need 1 ± 0.1)"
        ),
    ))
}

fn perturbation_consistency() -> Outcome {
    let p = LargeTimeParams::default();
    let g = FieldGrid::dirichlet(-8.0, 8.0, 641).map_err(err)?;
    let phi = g.sample(|x| p.profile(x).unwrap_or(f64::NAN));
    let sol = oracle::solve_linear_perturbation(&phi, &p, &[0.0, 0.5, 1.0], &OracleOptions::default()).map_err(err)?;
    let mut worst = 0.0f64;
    for (i, t) in [(1, 0.5), (2, 1.0)] {
        let series = largetime::u1_field(&g, t, &p).map_err(err)?;
        worst = worst.max(sol.fields[i].relative_l2_distance(&series).map_err(err)?);
    }
    Ok((worst <= 1e-4, format!("max relative L2 deviation {worst:.2e} at t = 0.5, 1 (tol 1e-4)")))
}

fn multimodality() -> Outcome {
    let p = LargeTimeParams::default();
    let g = FieldGrid::dirichlet(-10.0, 10.0, 2001).map_err(err)?;
    let times: Vec<f64> = (0..=80).map(|i| 0.25 * i as f64).collect();
    let tl = largetime::mode_timeline(&g, &times, largetime::MODE_THRESHOLD, &p).map_err(err)?;
    let start = tl[0].1;
    let transition = largetime::first_transition(&tl, 2);
    let detail = match transition {
        Some(t) => format!(
            "1 mode at t=0 → {} at t={t} (threshold {})",
            tl.iter().find(|e| e.0 == t).map_or(0, |e| e.1),
            largetime::MODE_THRESHOLD
        ),
        None => format!("{start} mode(s) at t=0, no transition on [0, 20]"),
    };
    Ok((start == 1 && transition.is_some(), detail))
}

fn heat(x: f64, t: f64, d: f64, s0: f64) -> f64 {
    let v = s0 * s0 + 2.0 * d * t;
    (-(x * x) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
}

fn oracle_self_checks() -> Outcome {
    let d = 0.05;
    let model = ModelSpec::new(d, 0.0).map_err(err)?;
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [41, 61, 81, 121] {
        let g = FieldGrid::dirichlet(-4.0, 4.0, n).map_err(err)?;
        let u0 = g.sample(|x| heat(x, 0.0, d, 0.3));
        let opts = OracleOptions { dt: Some(1e-3), ..Default::default() };
        let sol = oracle::solve_nonlinear(&u0, &model, &[0.0, 0.5], &opts).map_err(err)?;
        hs.push(g.dx());
        errs.push(sol.last().relative_l2_distance(&g.sample(|x| heat(x, 0.5, d, 0.3))).map_err(err)?);
    }
    let spatial = loglog_order(&hs, &errs);

    let nl = ModelSpec::gaussian_competition(0.01, 1.0, 1.0, 1.0, 0.5).map_err(err)?;
    let g = FieldGrid::dirichlet(-5.0, 5.0, 101).map_err(err)?;
    let u0 = g.sample(|x| (-x * x / 0.5).exp());
    let run = |dt: f64| -> Result<Field, String> {
        let opts = OracleOptions { dt: Some(dt), ..Default::default() };
        Ok(oracle::solve_nonlinear(&u0, &nl, &[0.0, 1.0], &opts).map_err(err)?.last().clone())
    };
    let reference = run(0.05 / 64.0)?;
    let dts = [0.05, 0.025, 0.0125];
    let terrs = dts
        .iter()
        .map(|&dt| run(dt).and_then(|f| f.relative_l2_distance(&reference).map_err(err)))
        .collect::<Result<Vec<_>, _>>()?;
    let temporal = loglog_order(&dts, &terrs);

    let cons = ModelSpec::new(0.1, 0.0).map_err(err)?;
    let g = FieldGrid::periodic(-3.0, 3.0, 120).map_err(err)?;
    let u0 = g.sample(|x| 1.0 + 0.5 * (PI * x / 3.0).cos() + (-4.0 * x * x).exp());
    let span = 2.0;
    let sol = oracle::solve_nonlinear(&u0, &cons, &[0.0, span], &OracleOptions::default()).map_err(err)?;
    let drift = (sol.last().integral() - u0.integral()).abs() / u0.integral() / span;

    let ok = (3.5..=4.5).contains(&spatial) && (3.5..=4.5).contains(&temporal) && drift <= 1e-12;
    Ok((
        ok,
        format!("spatial order {spatial:.2}, temporal order {temporal:.2} (need [3.5, 4.5]); mass drift {drift:.1e}/unit time (tol 1e-12)"),
    ))
}
