//! Run configuration: plain `section.key = value` lines with `#` comments.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{normalization_constant, Kernel, KernelKind};
use crate::stepper::StepConfig;
use crate::study::{Problem, ScalarFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPreset {
    /// `amplitude (1 - ξ²)²` on `|ξ| < 1`, `ξ = (x - center) / (width / 2)`.
    Bump,
    /// `amplitude` on `[center - width/2, center + width/2]`.
    Step,
    /// Seeded values in `[0, amplitude)` on a uniform grid of
    /// `mesh.n_elements` cells, linearly interpolated.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub preset: InitialPreset,
    /// Whether the preset describes `u_0` (otherwise `w_0`).
    pub is_u: bool,
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl InitialCondition {
    pub fn function(&self, domain: (f64, f64), grid_cells: usize) -> ScalarFn {
        let (c, half, amp) = (self.center, 0.5 * self.width, self.amplitude);
        match self.preset {
            InitialPreset::Bump => Arc::new(move |x| {
                let xi = (x - c) / half;
                if xi.abs() < 1.0 {
                    amp * (1.0 - xi * xi).powi(2)
                } else {
                    0.0
                }
            }),
            InitialPreset::Step => Arc::new(move |x| if (x - c).abs() <= half { amp } else { 0.0 }),
            InitialPreset::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let values: Vec<f64> = (0..=grid_cells).map(|_| amp * rng.gen::<f64>()).collect();
                let (a, b) = domain;
                Arc::new(move |x| {
                    if x <= a || x >= b {
                        return 0.0;
                    }
                    let t = (x - a) / (b - a) * grid_cells as f64;
                    let k = (t.floor() as usize).min(grid_cells - 1);
                    let r = t - k as f64;
                    values[k] * (1.0 - r) + values[k + 1] * r
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub kind: StudyKind,
    /// Expected order; defaults to `s` (spatial) or `1` (temporal).
    pub rate_target: Option<f64>,
    /// Half-width of the accepted order window; defaults to 0.15 (spatial)
    /// or 0.2 (temporal).
    pub rate_tolerance: Option<f64>,
    /// Temporal reference step is the finest step over this divisor.
    pub reference_divisor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateSettings {
    pub s_values: Vec<f64>,
    pub n_elements: Vec<usize>,
    pub max_deviation: f64,
    pub oracle_tolerance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputPaths {
    pub trajectory: Option<PathBuf>,
    pub errors: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub solution: Option<PathBuf>,
    pub validation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: (f64, f64),
    pub n_elements: usize,
    pub levels: usize,
    pub collar_width: f64,
    pub kernel: Kernel,
    pub m: f64,
    pub tau: f64,
    pub n_steps: usize,
    pub initial: InitialCondition,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub line_search_beta: f64,
    pub quadrature_order: usize,
    pub study: StudySettings,
    pub validate: ValidateSettings,
    pub output: OutputPaths,
}

impl RunConfig {
    pub fn step_config(&self) -> Result<StepConfig> {
        let cfg = StepConfig {
            m: self.m,
            tau: self.tau,
            n_steps: self.n_steps,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            line_search_beta: self.line_search_beta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_function(&self) -> ScalarFn {
        self.initial.function(self.domain, self.n_elements)
    }

    pub fn problem(&self) -> Problem {
        Problem {
            domain: self.domain,
            collar_width: self.collar_width,
            kernel: self.kernel,
            quadrature_order: self.quadrature_order,
            m: self.m,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            initial: self.initial_function(),
            initial_is_u: self.initial.is_u,
            error_quadrature: self.quadrature_order,
        }
    }
}

const KEYS: &[&str] = &[
    "domain.a",
    "domain.b",
    "mesh.n_elements",
    "mesh.levels",
    "mesh.collar_width",
    "kernel.kind",
    "kernel.s",
    "kernel.epsilon",
    "kernel.constant",
    "kernel.normalize",
    "physics.m",
    "physics.tau",
    "physics.n_steps",
    "physics.T",
    "physics.initial",
    "physics.initial_variable",
    "physics.center",
    "physics.width",
    "physics.amplitude",
    "physics.seed",
    "solver.newton_tol",
    "solver.newton_max_iter",
    "solver.line_search_beta",
    "solver.quadrature_order",
    "study.kind",
    "study.rate_target",
    "study.rate_tolerance",
    "study.reference_divisor",
    "validate.s_values",
    "validate.n_elements",
    "validate.max_deviation",
    "validate.oracle_tolerance",
    "output.trajectory",
    "output.errors",
    "output.matrix",
    "output.solution",
    "output.validation",
];

fn err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| err(key, format!("expected {what}, got `{v}`"))),
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parse(key, "a real number")?;
        match v {
            Some(x) if !x.is_finite() => Err(err(key, "must be finite")),
            _ => Ok(v),
        }
    }

    fn required_real(&self, key: &str) -> Result<f64> {
        self.real(key)?.ok_or_else(|| err(key, "is required"))
    }

    fn positive(&self, key: &str, default: Option<f64>) -> Result<f64> {
        let v = match (self.real(key)?, default) {
            (Some(v), _) => v,
            (None, Some(d)) => d,
            (None, None) => return Err(err(key, "is required")),
        };
        if v > 0.0 {
            Ok(v)
        } else {
            Err(err(key, format!("must be positive, got {v}")))
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse(key, "a nonnegative integer")?.unwrap_or(default))
    }

    fn boolean(&self, key: &str) -> Result<bool> {
        Ok(self.parse(key, "true or false")?.unwrap_or(false))
    }

    fn list<T: std::str::FromStr>(&self, key: &str, what: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| err(key, format!("expected a list of {what}, got `{v}`"))))
                .collect(),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            err(line, format!("line {} is not of the form `section.key = value`", lineno + 1))
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(err(key, "unknown key"));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(err(key, "given more than once"));
        }
    }
    let e = Entries(map);

    let a = e.required_real("domain.a")?;
    let b = e.required_real("domain.b")?;
    if b <= a {
        return Err(err("domain.b", "must exceed domain.a"));
    }
    let n_elements = e.count("mesh.n_elements", 16)?;
    if n_elements < 2 {
        return Err(err("mesh.n_elements", "must be at least 2"));
    }
    let levels = e.count("mesh.levels", 1)?;
    if levels == 0 {
        return Err(err("mesh.levels", "must be at least 1"));
    }
    let collar_width = e.real("mesh.collar_width")?.unwrap_or(0.0);
    if collar_width < 0.0 {
        return Err(err("mesh.collar_width", "must be nonnegative"));
    }

    let kind_text = e.raw("kernel.kind").unwrap_or("fractional");
    let kind = KernelKind::parse(kind_text).ok_or_else(|| {
        err("kernel.kind", format!("unknown kernel `{kind_text}`; expected fractional, truncated_fractional or constant_ball"))
    })?;
    let s = e.required_real("kernel.s")?;
    if !(s > 0.0 && s < 1.0) {
        return Err(err("kernel.s", format!("must lie in (0, 1), got {s}")));
    }
    let epsilon = match kind {
        KernelKind::Fractional => {
            if e.raw("kernel.epsilon").is_some() {
                return Err(err("kernel.epsilon", "the fractional kernel has no horizon"));
            }
            f64::INFINITY
        }
        _ => e.positive("kernel.epsilon", None)?,
    };
    if kind != KernelKind::Fractional && collar_width < epsilon {
        return Err(err("mesh.collar_width", format!("must be at least kernel.epsilon = {epsilon}")));
    }
    let normalize = e.boolean("kernel.normalize")?;
    let constant = if normalize {
        if e.raw("kernel.constant").is_some() {
            return Err(err("kernel.constant", "conflicts with kernel.normalize = true"));
        }
        normalization_constant(s)?
    } else {
        e.positive("kernel.constant", Some(1.0))?
    };
    let kernel = Kernel::new(kind, s, epsilon, constant).map_err(|x| err("kernel", x.to_string()))?;

    let m = e.positive("physics.m", None)?;
    let tau = e.positive("physics.tau", None)?;
    let n_steps_given: Option<usize> = e.parse("physics.n_steps", "a nonnegative integer")?;
    let t_given = e.real("physics.T")?;
    let n_steps = match (n_steps_given, t_given) {
        (Some(n), None) => n,
        (None, Some(t)) => {
            let n = (t / tau).round();
            if t < 0.0 || (n * tau - t).abs() > 1e-9 * t.abs().max(tau) {
                return Err(err("physics.T", format!("{t} is not a nonnegative multiple of physics.tau = {tau}")));
            }
            n as usize
        }
        (Some(n), Some(t)) => {
            if (n as f64 * tau - t).abs() > 1e-9 * t.abs().max(tau) {
                return Err(err("physics.T", format!("{t} differs from physics.n_steps * physics.tau = {}", n as f64 * tau)));
            }
            n
        }
        (None, None) => return Err(err("physics.n_steps", "either physics.n_steps or physics.T is required")),
    };
    let preset = match e.raw("physics.initial").unwrap_or("bump") {
        "bump" => InitialPreset::Bump,
        "step" => InitialPreset::Step,
        "random" => InitialPreset::Random,
        other => return Err(err("physics.initial", format!("unknown preset `{other}`; expected bump, step or random"))),
    };
    let is_u = match e.raw("physics.initial_variable").unwrap_or("u") {
        "u" => true,
        "w" => false,
        other => return Err(err("physics.initial_variable", format!("expected u or w, got `{other}`"))),
    };
    let initial = InitialCondition {
        preset,
        is_u,
        center: e.real("physics.center")?.unwrap_or(0.5 * (a + b)),
        width: e.positive("physics.width", Some(0.5 * (b - a)))?,
        amplitude: e.real("physics.amplitude")?.unwrap_or(1.0),
        seed: e.parse("physics.seed", "a nonnegative integer")?.unwrap_or(0),
    };

    let newton_tol = e.positive("solver.newton_tol", Some(StepConfig::DEFAULT_NEWTON_TOL))?;
    let newton_max_iter = e.count("solver.newton_max_iter", StepConfig::DEFAULT_NEWTON_MAX_ITER)?;
    if newton_max_iter == 0 {
        return Err(err("solver.newton_max_iter", "must be at least 1"));
    }
    let line_search_beta = e.real("solver.line_search_beta")?.unwrap_or(StepConfig::DEFAULT_LINE_SEARCH_BETA);
    if !(line_search_beta > 0.0 && line_search_beta < 1.0) {
        return Err(err("solver.line_search_beta", "must lie in (0, 1)"));
    }
    let quadrature_order = e.count("solver.quadrature_order", crate::assembly::DEFAULT_QUADRATURE_ORDER)?;
    if quadrature_order < 2 {
        return Err(err("solver.quadrature_order", "must be at least 2"));
    }

    let study_kind = match e.raw("study.kind").unwrap_or("spatial") {
        "spatial" => StudyKind::Spatial,
        "temporal" => StudyKind::Temporal,
        other => return Err(err("study.kind", format!("expected spatial or temporal, got `{other}`"))),
    };
    let rate_tolerance = e.real("study.rate_tolerance")?;
    if rate_tolerance.is_some_and(|t| t <= 0.0) {
        return Err(err("study.rate_tolerance", "must be positive"));
    }
    let study = StudySettings {
        kind: study_kind,
        rate_target: e.real("study.rate_target")?,
        rate_tolerance,
        reference_divisor: e.count("study.reference_divisor", 8)?,
    };
    if study.reference_divisor == 0 {
        return Err(err("study.reference_divisor", "must be at least 1"));
    }

    let validate = ValidateSettings {
        s_values: e.list("validate.s_values", "reals", vec![0.3, 0.5, 0.7])?,
        n_elements: e.list("validate.n_elements", "integers", vec![4, 8, 16])?,
        max_deviation: e.positive("validate.max_deviation", Some(1e-6))?,
        oracle_tolerance: e.positive("validate.oracle_tolerance", Some(1e-9))?,
    };
    if validate.s_values.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(err("validate.s_values", "every entry must lie in (0, 1)"));
    }
    if validate.n_elements.iter().any(|&n| n < 2) {
        return Err(err("validate.n_elements", "every entry must be at least 2"));
    }

    Ok(RunConfig {
        domain: (a, b),
        n_elements,
        levels,
        collar_width,
        kernel,
        m,
        tau,
        n_steps,
        initial,
        newton_tol,
        newton_max_iter,
        line_search_beta,
        quadrature_order,
        study,
        validate,
        output: OutputPaths {
            trajectory: e.path("output.trajectory"),
            errors: e.path("output.errors"),
            matrix: e.path("output.matrix"),
            solution: e.path("output.solution"),
            validation: e.path("output.validation"),
        },
    })
}
