use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;

use fkpp_core::acceptance;
use fkpp_core::coherent::{self, AssembledSolution, AssemblyOptions};
use fkpp_core::field::{Field, FieldGrid};
use fkpp_core::germ::{self, Branch, GermOptions, WindowEnd};
use fkpp_core::largetime;
use fkpp_core::linearized::{self, AssociatedOperator, ResidualRecord, TimeDerivative};
use fkpp_core::oracle::{self, BoundaryPolicy, OracleOptions};
use fkpp_core::quad::loglog_order;
use fkpp_core::{ee, ModelSpec};

use crate::config::{ConfigIssue, ExperimentConfig};
use crate::output::{table, tag, Artifacts};

#[derive(Debug)]
pub enum CliError {
    Config(Vec<ConfigIssue>),
    Numeric(String),
    Acceptance(Vec<u8>),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
            CliError::Acceptance(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(issues) => {
                for (i, e) in issues.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "config-error\t{}\t{}", e.key, e.message)?;
                }
                Ok(())
            }
            CliError::Numeric(m) => write!(f, "numeric-error\t{m}"),
            CliError::Acceptance(ids) => write!(f, "acceptance-failure\t{ids:?}"),
            CliError::Io(e) => write!(f, "io-error\t{e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn numeric(e: impl fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

/// What a command produced besides its files.
pub struct Report {
    pub artifacts: Artifacts,
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

impl Report {
    fn new(command: &str, seed: u64, cfg: &ExperimentConfig) -> Self {
        Report { artifacts: Artifacts::new(command, seed, cfg), lines: Vec::new(), warnings: Vec::new() }
    }
}

pub fn ee(cfg: &ExperimentConfig, seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("ee", seed, cfg);
    let model = cfg.model_spec().map_err(numeric)?;
    let s0 = cfg.initial_moments().map_err(numeric)?;
    let traj = ee::integrate_ee(&s0, (0.0, cfg.ee.t_end), &model, &cfg.ee_options()).map_err(numeric)?;
    r.artifacts.csv("ee_trajectory", |w| traj.write_csv(w))?;
    let end = traj.state(traj.t_end()).map_err(numeric)?;
    r.lines.push(format!(
        "ee: order {} on [0, {}]: {} nodes, sigma {} -> {}, x {} -> {}",
        s0.order,
        traj.t_end(),
        traj.times().len(),
        s0.sigma,
        end.sigma,
        s0.x,
        end.x
    ));
    Ok(r)
}

pub fn germ(cfg: &ExperimentConfig, seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("germ", seed, cfg);
    let model = cfg.model_spec().map_err(numeric)?;
    let s0 = cfg.initial_moments().map_err(numeric)?;
    let b = cfg.germ.b;
    let (_, g) =
        germ::integrate_joint(&s0, b, (0.0, cfg.ee.t_end), &model, &GermOptions::default()).map_err(numeric)?;
    r.artifacts.csv("germ_variations", |w| g.write_csv(w))?;
    if let WindowEnd::SignCondition { t } | WindowEnd::MassCollapse { t } = g.window_end {
        r.warnings.push(format!("germ: validity window ends at t = {t} ({:?})", g.window_end));
    }
    let branch = cfg.branch();
    let k = cfg.germ.samples;
    let (t0, t1) = (g.t_start(), g.t_end());
    let mut rows = Vec::with_capacity(k);
    let mut focal = false;
    for i in 0..k {
        let t = t0 + (t1 - t0) * i as f64 / (k - 1) as f64;
        let skew = g.skew(t).map_err(numeric)?;
        let q = germ::q_ratio(&g, t).map_err(numeric)?;
        let phase = match germ::phase_factor(&g, t, branch) {
            Ok(v) => v,
            Err(_) if branch == Branch::Plus => {
                focal = true;
                f64::NAN
            }
            Err(e) => return Err(numeric(e)),
        };
        rows.push(vec![t, (skew - 2.0 * b).abs() / (2.0 * b), q, phase]);
    }
    if focal {
        r.warnings.push(format!("germ: (+) branch focal point at t = {:?}; phase left NaN past it", g.plus_focal_time));
    }
    r.artifacts.csv("germ_invariants", |w| table(&["t", "skew_drift", "Q", "phase"], &rows, w))?;
    r.lines.push(format!("germ: window [{t0}, {t1}], max relative skew drift {:.3e}", g.max_skew_drift));
    Ok(r)
}

pub fn coherent(cfg: &ExperimentConfig, seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("coherent", seed, cfg);
    let k = &cfg.coherent;
    let model = cfg.model_spec().map_err(numeric)?;
    let t_end = k.times.iter().copied().fold(0.0, f64::max);
    let opts =
        AssemblyOptions { b: cfg.germ.b, x0: k.x0, allow_odd_zero: k.allow_odd_zero, germ: GermOptions::default() };
    let mut constants = Vec::new();
    for &n in &k.states {
        let u = coherent::assemble_solution(n, &model, (0.0, t_end), &opts).map_err(numeric)?;
        match &u.basis {
            Some(cb) => {
                if cb.t_end() < t_end {
                    return Err(numeric(format!("state {n}: validity window ends at t = {}", cb.t_end())));
                }
                let c = cb.traj.initial();
                constants.push(vec![n as f64, c.sigma, c.x, c.variance()]);
                for &t in &k.times {
                    let g = cb.grid_for(n, t, k.points_per_sd).map_err(numeric)?;
                    let f = cb.state_field(n, t, &g).map_err(numeric)?;
                    r.artifacts.csv(&format!("coherent_n{n}_t{}", tag(t)), |w| f.write_csv(w))?;
                }
            }
            None => {
                r.warnings.push(format!("coherent: odd state {n} assembles to zero"));
                constants.push(vec![n as f64, 0.0, k.x0, f64::NAN]);
            }
        }
    }
    r.artifacts.csv("coherent_constants", |w| table(&["n", "sigma", "x", "alpha2"], &constants, w))?;
    r.lines.push(format!("coherent: {} states x {} times", k.states.len(), k.times.len()));
    Ok(r)
}

/// Leading term and a grid covering its support on `[0, t1]`.
fn localized(
    model: &ModelSpec,
    n: usize,
    t1: f64,
    b: f64,
    width: f64,
    pps: f64,
) -> Result<(AssembledSolution, FieldGrid), CliError> {
    let opts = AssemblyOptions { b, ..Default::default() };
    let u = coherent::assemble_solution(n, model, (0.0, t1), &opts).map_err(numeric)?;
    let cb = u.basis.as_ref().ok_or_else(|| numeric("odd state has no basis"))?;
    if cb.t_end() < t1 {
        return Err(numeric(format!("validity window ends at t = {} before {t1}", cb.t_end())));
    }
    let sd = |t| cb.frame(t).map(|f| f.vacuum_variance().sqrt()).map_err(numeric);
    let x = cb.traj.center(t1).map_err(numeric)?;
    let x0 = cb.traj.center(0.0).map_err(numeric)?;
    let g = oracle::localized_grid(x.min(x0), x.max(x0), sd(0.0)?.max(sd(t1)?), width, pps).map_err(numeric)?;
    Ok((u, g))
}

pub fn residual(cfg: &ExperimentConfig, seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("residual", seed, cfg);
    let rc = &cfg.residual;
    let h = 1e-4;
    let t1 = rc.times.iter().copied().fold(0.0, f64::max) + h;
    let per_d: Vec<Vec<ResidualRecord>> = rc
        .diffusions
        .par_iter()
        .map(|&d| -> Result<_, CliError> {
            let model = cfg.model_spec_with(d).map_err(numeric)?;
            let (u, g) = localized(&model, rc.state, t1, cfg.germ.b, rc.width, rc.points_per_sd)?;
            let op = AssociatedOperator::new(u.basis.as_ref().unwrap().traj.clone(), model);
            rc.times
                .iter()
                .map(|&t| {
                    let v = u.field(t, &g).map_err(numeric)?;
                    let before = u.field(t - h, &g).map_err(numeric)?;
                    let after = u.field(t + h, &g).map_err(numeric)?;
                    let res = linearized::apply_operator(
                        &v,
                        TimeDerivative::Snapshots { before: &before, after: &after, dt: h },
                        t,
                        &op,
                    )
                    .map_err(numeric)?;
                    Ok(ResidualRecord::new(t, &res, &v))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let mut summary = Vec::new();
    for (d, recs) in rc.diffusions.iter().zip(&per_d) {
        r.artifacts.csv(&format!("residual_D{}", tag(*d)), |w| linearized::write_residual_csv(recs, w))?;
        summary.push(vec![*d, recs.iter().map(|x| x.residual_over_norm).fold(0.0, f64::max)]);
    }
    let order = loglog_order(&rc.diffusions, &summary.iter().map(|s| s[1]).collect::<Vec<_>>());
    r.artifacts.csv("residual_summary", |w| table(&["D", "max_residual_over_norm"], &summary, w))?;
    r.lines.push(format!("residual: fitted order of max residual/norm in D: {order:.4}"));
    Ok(r)
}

pub fn direct(cfg: &ExperimentConfig, seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("direct", seed, cfg);
    let o = &cfg.oracle;
    let model = cfg.model_spec().map_err(numeric)?;
    let g = cfg.oracle_grid().map_err(numeric)?;
    let u0 =
        g.sample(|x| o.mass * (-(x - o.center).powi(2) / (2.0 * o.sd * o.sd)).exp() / (2.0 * PI * o.sd * o.sd).sqrt());
    let opts = OracleOptions {
        dt: o.dt,
        boundary_policy: if o.enforce_boundary { BoundaryPolicy::Enforce } else { BoundaryPolicy::Monitor },
        ..Default::default()
    };
    let sol = oracle::solve_nonlinear(&u0, &model, &o.times, &opts).map_err(numeric)?;
    for (t, f) in sol.times.iter().zip(&sol.fields) {
        r.artifacts.csv(&format!("direct_t{}", tag(*t)), |w| f.write_csv(w))?;
    }
    r.artifacts.csv("direct_trajectory", |w| sol.write_trajectory_csv(w))?;
    if sol.max_boundary_ratio > opts.boundary_tolerance {
        r.warnings.push(format!("direct: solution reaches the boundary (ratio {:.3e})", sol.max_boundary_ratio));
    }
    if !sol.positivity_ok() {
        r.warnings.push(format!("direct: negative values, min/max = {:.3e}", sol.min_over_max));
    }
    let (m, c, v) = sol.moments(sol.fields.len() - 1);
    r.lines
        .push(format!("direct: {} steps of dt = {:.3e}; final mass {m}, center {c}, variance {v}", sol.steps, sol.dt));
    Ok(r)
}

pub fn largetime(cfg: &ExperimentConfig, seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("largetime", seed, cfg);
    let l = &cfg.largetime;
    let p = cfg.largetime_params();
    r.artifacts.csv("largetime_background", |w| largetime::write_background(&l.times, &p, w))?;
    let c = largetime::coefficients(l.n, &l.times, l.m_max, &p).map_err(numeric)?;
    r.artifacts.csv("largetime_coefficients", |w| c.write_csv(w))?;
    let g = FieldGrid::dirichlet(l.x0 - l.x_half, l.x0 + l.x_half, l.points).map_err(numeric)?;
    let snaps: Vec<Field> = l
        .times
        .par_iter()
        .map(|&t| largetime::perturbed_field(&g, t, &p).map_err(numeric))
        .collect::<Result<_, _>>()?;
    for (t, f) in l.times.iter().zip(&snaps) {
        r.artifacts.csv(&format!("largetime_u_t{}", tag(*t)), |w| f.write_csv(w))?;
    }
    let steps = (l.mode_t_end / l.mode_dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * l.mode_dt).collect();
    let tl = largetime::mode_timeline(&g, &times, l.mode_threshold, &p).map_err(numeric)?;
    r.artifacts.csv("largetime_modes", |w| largetime::write_mode_timeline(&tl, w))?;
    if let Some(i) = l.times.iter().position(|t| *t == 0.0) {
        r.lines.push(format!("largetime: C_0({}) at t = 0 is {}", l.n, c.values[i][0]));
    }
    match largetime::first_transition(&tl, 2) {
        Some(t) => r.lines.push(format!("largetime: first multimodal time {t} (threshold {})", l.mode_threshold)),
        None => r.lines.push(format!("largetime: no multimodal time up to {}", l.mode_t_end)),
    }
    Ok(r)
}

pub fn compare(cfg: &ExperimentConfig, seed: u64) -> Result<Report, CliError> {
    let mut r = Report::new("compare", seed, cfg);
    let pc = &cfg.compare;
    let t1 = pc.t_end;
    let runs: Vec<(f64, Field, Field)> = pc
        .diffusions
        .par_iter()
        .map(|&d| -> Result<_, CliError> {
            let model = cfg.model_spec_with(d).map_err(numeric)?;
            let (u, g) = localized(&model, pc.state, t1, cfg.germ.b, pc.width, pc.points_per_sd)?;
            let u0 = u.field(0.0, &g).map_err(numeric)?;
            let sol = oracle::solve_nonlinear(&u0, &model, &[0.0, t1], &OracleOptions::default()).map_err(numeric)?;
            let asym = u.field(t1, &g).map_err(numeric)?;
            let err = asym.relative_l2_distance(sol.last()).map_err(numeric)?;
            Ok((err, asym, sol.last().clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut errors = Vec::new();
    for (d, (err, asym, direct)) in pc.diffusions.iter().zip(&runs) {
        let rows: Vec<Vec<f64>> =
            (0..asym.grid.n).map(|i| vec![asym.grid.x(i), asym.values[i], direct.values[i]]).collect();
        r.artifacts.csv(&format!("compare_D{}", tag(*d)), |w| table(&["x", "asymptotic", "direct"], &rows, w))?;
        errors.push(vec![*d, *err]);
    }
    let order = loglog_order(&pc.diffusions, &errors.iter().map(|e| e[1]).collect::<Vec<_>>());
    r.artifacts.csv("compare_errors", |w| table(&["D", "relative_L2_error"], &errors, w))?;
    let pass = order >= pc.min_order;
    r.lines.push(format!(
        "{} compare: fitted order {order:.4} (need >= {}) at t = {t1}",
        if pass { "PASS" } else { "FAIL" },
        pc.min_order
    ));
    if !pass {
        r.warnings.push(format!("compare: fitted order {order:.4} below {}", pc.min_order));
    }
    Ok(r)
}

/// Runs the acceptance criteria sequentially (their runtime budgets assume an idle machine).
pub fn acceptance(cfg: &ExperimentConfig, seed: u64, strict: bool) -> Result<Report, CliError> {
    let mut r = Report::new("acceptance", seed, cfg);
    let results = acceptance::run_all(seed);
    let mut rows = Vec::new();
    for res in &results {
        let note = if !res.passed && res.known_unattainable() { "  [known unattainable]" } else { "" };
        r.lines.push(format!("{}{note}", res.line()));
        rows.push(vec![res.id as f64, if res.passed { 1.0 } else { 0.0 }]);
    }
    r.artifacts.csv("acceptance", |w| table(&["criterion", "passed"], &rows, w))?;
    let failed: Vec<u8> =
        results.iter().filter(|x| !x.passed && (strict || !x.known_unattainable())).map(|x| x.id).collect();
    if failed.is_empty() {
        Ok(r)
    } else {
        for l in &r.lines {
            println!("{l}");
        }
        Err(CliError::Acceptance(failed))
    }
}
