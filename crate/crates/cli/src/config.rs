//! Experiment configuration (TOML). Every section is optional and falls back to the
//! defaults below; unknown keys are rejected. See `docs/config.md` for the grammar.

use serde::{Deserialize, Serialize};

use fkpp_core::field::{Boundary, FieldGrid};
use fkpp_core::largetime::LargeTimeParams;
use fkpp_core::model::{Coefficient, Kernel, ModelSpec};
use fkpp_core::{ee, germ, MomentState};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub ee: EeConfig,
    pub germ: GermConfig,
    pub coherent: CoherentConfig,
    pub residual: ResidualConfig,
    pub oracle: OracleConfig,
    pub largetime: LargeTimeConfig,
    pub compare: CompareConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// constant growth `a`, Gaussian competition kernel
    Gaussian,
    /// polynomial growth and potential, optional Gaussian competition kernel
    Polynomial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub diffusion: f64,
    pub kappa: f64,
    /// gaussian family
    pub a: f64,
    pub kernel_amplitude: f64,
    pub kernel_range: f64,
    /// polynomial family: coefficients in powers of x
    pub growth: Vec<f64>,
    pub potential: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: Family::Gaussian,
            diffusion: 0.01,
            kappa: 1.0,
            a: 1.0,
            kernel_amplitude: 1.0,
            kernel_range: 1.0,
            growth: vec![1.0],
            potential: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EeConfig {
    pub order: usize,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub sigma0: f64,
    pub x0: f64,
    pub variance0: f64,
}

impl Default for EeConfig {
    fn default() -> Self {
        EeConfig { order: 2, t_end: 5.0, rtol: 1e-10, atol: 1e-10, sigma0: 1.0, x0: 0.0, variance0: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchName {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GermConfig {
    pub b: f64,
    pub branch: BranchName,
    pub samples: usize,
}

impl Default for GermConfig {
    fn default() -> Self {
        GermConfig { b: 1.0, branch: BranchName::Minus, samples: 101 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherentConfig {
    pub states: Vec<usize>,
    pub times: Vec<f64>,
    pub x0: f64,
    pub points_per_sd: f64,
    /// zero solution for odd states instead of an error
    pub allow_odd_zero: bool,
}

impl Default for CoherentConfig {
    fn default() -> Self {
        CoherentConfig {
            states: vec![0, 2],
            times: vec![0.0, 0.5, 1.0],
            x0: 0.0,
            points_per_sd: 20.0,
            allow_odd_zero: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub diffusions: Vec<f64>,
    pub times: Vec<f64>,
    pub state: usize,
    pub width: f64,
    pub points_per_sd: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            diffusions: vec![0.02, 0.01, 0.005, 0.0025],
            times: vec![0.25, 0.5, 0.75],
            state: 0,
            width: 8.0,
            points_per_sd: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryName {
    Dirichlet,
    Periodic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
    pub boundary: BoundaryName,
    /// fixed step; omitted means the stability bound
    pub dt: Option<f64>,
    pub times: Vec<f64>,
    /// Gaussian initial data
    pub mass: f64,
    pub center: f64,
    pub sd: f64,
    /// fail instead of warn when the solution reaches a Dirichlet boundary
    pub enforce_boundary: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            x_min: -5.0,
            x_max: 5.0,
            points: 401,
            boundary: BoundaryName::Dirichlet,
            dt: None,
            times: vec![0.0, 0.5, 1.0],
            mass: 1.0,
            center: 0.0,
            sd: 0.3,
            enforce_boundary: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LargeTimeConfig {
    pub a: f64,
    pub b0: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub diffusion: f64,
    pub beta0: f64,
    /// relative to `beta0`
    pub eps_ratio: f64,
    pub theta: f64,
    pub x0: f64,
    pub norm: f64,
    pub n: usize,
    pub times: Vec<f64>,
    pub m_max: usize,
    pub x_half: f64,
    pub points: usize,
    pub mode_t_end: f64,
    pub mode_dt: f64,
    pub mode_threshold: f64,
}

impl Default for LargeTimeConfig {
    fn default() -> Self {
        let p = LargeTimeParams::default();
        LargeTimeConfig {
            a: p.a,
            b0: p.b0,
            gamma: p.gamma,
            kappa: p.kappa,
            diffusion: p.diffusion,
            beta0: p.beta0,
            eps_ratio: p.eps / p.beta0,
            theta: p.theta,
            x0: p.x0,
            norm: p.norm,
            n: p.n,
            times: vec![0.0, 0.5, 1.0, 2.0, 5.0],
            m_max: 8,
            x_half: 10.0,
            points: 2001,
            mode_t_end: 20.0,
            mode_dt: 0.25,
            mode_threshold: fkpp_core::largetime::MODE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub diffusions: Vec<f64>,
    pub t_end: f64,
    pub state: usize,
    pub width: f64,
    pub points_per_sd: f64,
    pub min_order: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            diffusions: vec![0.02, 0.01, 0.005, 0.0025],
            t_end: 1.0,
            state: 0,
            width: 8.0,
            points_per_sd: 20.0,
            min_order: 1.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub gnuplot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: "out".into(), gnuplot: true }
    }
}

/// One validation failure: dotted key path and message.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

struct Checker(Vec<ConfigIssue>);

impl Checker {
    fn fail(&mut self, key: &str, message: impl Into<String>) {
        self.0.push(ConfigIssue { key: key.into(), message: message.into() });
    }

    fn positive(&mut self, key: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.fail(key, format!("must be positive and finite, got {v}"));
        }
    }

    fn finite(&mut self, key: &str, v: f64) {
        if !v.is_finite() {
            self.fail(key, format!("must be finite, got {v}"));
        }
    }

    fn nonnegative(&mut self, key: &str, v: f64) {
        if !(v.is_finite() && v >= 0.0) {
            self.fail(key, format!("must be nonnegative and finite, got {v}"));
        }
    }

    fn times(&mut self, key: &str, ts: &[f64]) {
        if ts.is_empty() {
            self.fail(key, "must not be empty");
        } else if ts.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || ts.windows(2).any(|w| w[1] < w[0]) {
            self.fail(key, "must be finite, nonnegative and nondecreasing");
        }
    }

    fn positive_list(&mut self, key: &str, vs: &[f64]) {
        if vs.len() < 2 {
            self.fail(key, "needs at least two entries for an order fit");
        }
        if vs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            self.fail(key, "entries must be positive and finite");
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigIssue>> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| vec![ConfigIssue { key: "<toml>".into(), message: e.message().to_string() }])?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every numeric range up front; returns all issues, not just the first.
    pub fn validate(&self) -> Result<(), Vec<ConfigIssue>> {
        let mut c = Checker(Vec::new());
        let m = &self.model;
        c.positive("model.diffusion", m.diffusion);
        c.nonnegative("model.kappa", m.kappa);
        match m.family {
            Family::Gaussian => {
                c.finite("model.a", m.a);
                c.nonnegative("model.kernel_amplitude", m.kernel_amplitude);
                c.positive("model.kernel_range", m.kernel_range);
            }
            Family::Polynomial => {
                if m.growth.iter().chain(&m.potential).any(|v| !v.is_finite()) {
                    c.fail("model.growth/potential", "coefficients must be finite");
                }
                c.nonnegative("model.kernel_amplitude", m.kernel_amplitude);
                c.positive("model.kernel_range", m.kernel_range);
            }
        }
        if let Err(e) = self.model_spec_with(m.diffusion) {
            c.fail("model", e);
        }

        let e = &self.ee;
        if !(ee::MIN_ORDER..=ee::MAX_ORDER).contains(&e.order) {
            c.fail("ee.order", format!("must be in {}..={}, got {}", ee::MIN_ORDER, ee::MAX_ORDER, e.order));
        }
        c.positive("ee.t_end", e.t_end);
        c.positive("ee.rtol", e.rtol);
        c.positive("ee.atol", e.atol);
        c.positive("ee.sigma0", e.sigma0);
        c.finite("ee.x0", e.x0);
        c.positive("ee.variance0", e.variance0);

        c.positive("germ.b", self.germ.b);
        if self.germ.samples < 2 {
            c.fail("germ.samples", "must be at least 2");
        }

        let k = &self.coherent;
        if k.states.is_empty() {
            c.fail("coherent.states", "must not be empty");
        }
        if let Some(n) = k.states.iter().find(|n| **n > fkpp_core::coherent::MAX_EXCITATION) {
            c.fail("coherent.states", format!("state {n} exceeds {}", fkpp_core::coherent::MAX_EXCITATION));
        }
        c.times("coherent.times", &k.times);
        c.finite("coherent.x0", k.x0);
        c.positive("coherent.points_per_sd", k.points_per_sd);

        let r = &self.residual;
        c.positive_list("residual.diffusions", &r.diffusions);
        c.times("residual.times", &r.times);
        if r.times.first().is_some_and(|t| *t <= 0.0) {
            c.fail("residual.times", "must be positive (the time derivative is a central difference)");
        }
        if r.state % 2 == 1 {
            c.fail("residual.state", "odd states assemble to zero");
        }
        c.positive("residual.width", r.width);
        c.positive("residual.points_per_sd", r.points_per_sd);

        let o = &self.oracle;
        c.finite("oracle.x_min", o.x_min);
        c.finite("oracle.x_max", o.x_max);
        if !(o.x_max > o.x_min) {
            c.fail("oracle.x_max", "must exceed oracle.x_min");
        }
        if o.points < 8 {
            c.fail("oracle.points", "must be at least 8");
        }
        if let Some(dt) = o.dt {
            c.positive("oracle.dt", dt);
        }
        c.times("oracle.times", &o.times);
        c.positive("oracle.mass", o.mass);
        c.finite("oracle.center", o.center);
        c.positive("oracle.sd", o.sd);

        let l = &self.largetime;
        if let Err(e) = self.largetime_params().validate() {
            c.fail("largetime", e.to_string());
        }
        c.times("largetime.times", &l.times);
        c.positive("largetime.x_half", l.x_half);
        if l.points < 3 {
            c.fail("largetime.points", "must be at least 3");
        }
        c.positive("largetime.mode_t_end", l.mode_t_end);
        c.positive("largetime.mode_dt", l.mode_dt);
        if !(0.0..1.0).contains(&l.mode_threshold) {
            c.fail("largetime.mode_threshold", "must be in [0, 1)");
        }

        let p = &self.compare;
        c.positive_list("compare.diffusions", &p.diffusions);
        c.positive("compare.t_end", p.t_end);
        if p.state % 2 == 1 {
            c.fail("compare.state", "odd states assemble to zero");
        }
        c.positive("compare.width", p.width);
        c.positive("compare.points_per_sd", p.points_per_sd);
        c.finite("compare.min_order", p.min_order);

        if self.output.directory.is_empty() {
            c.fail("output.directory", "must not be empty");
        }
        if c.0.is_empty() {
            Ok(())
        } else {
            Err(c.0)
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec, String> {
        self.model_spec_with(self.model.diffusion)
    }

    /// The configured model with `diffusion` swapped in (for sweeps).
    pub fn model_spec_with(&self, diffusion: f64) -> Result<ModelSpec, String> {
        let m = &self.model;
        let spec = match m.family {
            Family::Gaussian => {
                ModelSpec::gaussian_competition(diffusion, m.kappa, m.a, m.kernel_amplitude, m.kernel_range)
            }
            Family::Polynomial => ModelSpec::new(diffusion, m.kappa).map(|s| {
                let s = s
                    .with_growth(Coefficient::polynomial(m.growth.clone()))
                    .with_potential(Coefficient::polynomial(m.potential.clone()));
                if m.kernel_amplitude > 0.0 {
                    s.with_influence(Kernel::gaussian(m.kernel_amplitude, m.kernel_range))
                } else {
                    s
                }
            }),
        };
        let spec = spec.map_err(|e| e.to_string())?;
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    pub fn initial_moments(&self) -> Result<MomentState, String> {
        let e = &self.ee;
        MomentState::gaussian(e.sigma0, e.x0, e.variance0)
            .and_then(|s| s.with_order(e.order))
            .map_err(|e| e.to_string())
    }

    pub fn ee_options(&self) -> ee::EeOptions {
        ee::EeOptions { rtol: self.ee.rtol, atol: self.ee.atol, ..Default::default() }
    }

    pub fn branch(&self) -> germ::Branch {
        match self.germ.branch {
            BranchName::Minus => germ::Branch::Minus,
            BranchName::Plus => germ::Branch::Plus,
        }
    }

    pub fn oracle_grid(&self) -> Result<FieldGrid, String> {
        let o = &self.oracle;
        let b = match o.boundary {
            BoundaryName::Dirichlet => Boundary::DirichletZero,
            BoundaryName::Periodic => Boundary::Periodic,
        };
        FieldGrid::new(o.x_min, o.x_max, o.points, b).map_err(|e| e.to_string())
    }

    pub fn largetime_params(&self) -> LargeTimeParams {
        let l = &self.largetime;
        LargeTimeParams {
            a: l.a,
            b0: l.b0,
            gamma: l.gamma,
            kappa: l.kappa,
            diffusion: l.diffusion,
            beta0: l.beta0,
            eps: l.eps_ratio * l.beta0,
            theta: l.theta,
            x0: l.x0,
            norm: l.norm,
            n: l.n,
        }
    }
}
