//! Experiment configuration files.
//!
//! A config is a JSON object. Only `experiment` is required; every other key
//! falls back to the standard setting for that experiment. [`resolve`] fills
//! the defaults in and checks every knob, and the resolved [`Plan`] is what
//! gets echoed into `meta.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sparse_ard::sparsifiers::{Method, PenaltyScale};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{}field `{field}`: {message}", line_prefix(*.line))]
    Invalid { field: String, line: Option<usize>, message: String },
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}, ")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    OrthoRates,
    Linear,
    Fourier,
    Lorenz63,
    Lorenz96,
    Ks,
    CondSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::OrthoRates => "ortho_rates",
            Self::Linear => "linear",
            Self::Fourier => "fourier",
            Self::Lorenz63 => "lorenz63",
            Self::Lorenz96 => "lorenz96",
            Self::Ks => "ks",
            Self::CondSweep => "cond_sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    Aicc,
    Oracle,
    /// Keep every grid point (rate validation and sweeps).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleName {
    Plain,
    NoiseScaled,
}

impl From<ScaleName> for PenaltyScale {
    fn from(s: ScaleName) -> Self {
        match s {
            ScaleName::Plain => PenaltyScale::Plain,
            ScaleName::NoiseScaled => PenaltyScale::NoiseScaled,
        }
    }
}

/// One method and its parameter sweep as written in the file. At most one of
/// `values`, `log` and `linear` may be given; `log`/`linear` are
/// `[low, high, count]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodGridConfig {
    pub method: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub log: Option<(f64, f64, usize)>,
    #[serde(default)]
    pub linear: Option<(f64, f64, usize)>,
    #[serde(default)]
    pub eta_width: Option<f64>,
    #[serde(default)]
    pub penalty_scale: Option<ScaleName>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub methods: Option<Vec<MethodGridConfig>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub selection: Option<SelectionKind>,
    pub relearn_noise: Option<bool>,
    /// Starting noise variance as a fraction of `var(y)` when relearning.
    pub noise_init: Option<f64>,
    pub timeout_secs: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,

    pub m: Option<usize>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub nonzero: Option<usize>,
    pub noise_percent: Option<f64>,
    pub kappa: Option<f64>,
    pub kappas: Option<Vec<f64>>,
    pub sigmas: Option<Vec<f64>>,
    pub rho_range: Option<(f64, f64)>,
    pub spacing: Option<Spacing>,
    pub modes: Option<usize>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub degree: Option<usize>,
    pub forcing: Option<f64>,
    pub n_x: Option<usize>,
    pub length: Option<f64>,
    pub rows: Option<usize>,
}

/// A method with its concrete parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodGrid {
    #[serde(serialize_with = "method_name")]
    pub method: Method,
    pub params: Vec<f64>,
    pub eta_width: f64,
    pub penalty_scale: ScaleName,
}

fn method_name<S: serde::Serializer>(m: &Method, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(m.name())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub experiment: ExperimentKind,
    pub methods: Vec<MethodGrid>,
    pub trials: usize,
    pub seed: u64,
    pub selection: SelectionKind,
    pub relearn_noise: bool,
    pub noise_init: f64,
    pub timeout_secs: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub problem: ProblemSetup,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSetup {
    OrthoRates { n: usize, nonzero: usize, rho_range: (f64, f64), sigmas: Vec<f64> },
    Linear { m: usize, d: usize, nonzero: usize, kappa: f64, noise_percent: f64, spacing: Spacing },
    Fourier { m: usize, modes: usize, nonzero: usize, noise_percent: f64 },
    Lorenz63 { dt: f64, steps: usize, noise_percent: f64, degree: usize },
    Lorenz96 { n: usize, forcing: f64, dt: f64, steps: usize, noise_percent: f64, degree: usize },
    Ks { length: f64, n_x: usize, dt: f64, steps: usize, noise_percent: f64, rows: usize },
    CondSweep { m: usize, d: usize, nonzero: usize, kappas: Vec<f64>, sigmas: Vec<f64>, spacing: Spacing },
}

/// Parses and resolves a config file.
pub fn load(path: &Path) -> Result<Plan, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Plan, ConfigError> {
    let raw: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    resolve(raw).map_err(|e| match e {
        ConfigError::Invalid { field, message, .. } => {
            ConfigError::Invalid { line: locate(text, &field), field, message }
        }
        other => other,
    })
}

/// Line of the first occurrence of `"key"` in the source.
fn locate(text: &str, field: &str) -> Option<usize> {
    let key = field.split(['[', '.']).next().unwrap_or(field);
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), line: None, message: message.into() }
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Grid points `a:b:n`, linear or logarithmic.
pub fn sweep(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
    if log {
        logspace(lo, hi, n)
    } else {
        linspace(lo, hi, n)
    }
}

pub const DEFAULT_GRID_POINTS: usize = 15;

/// Default 15-point logarithmic sweep for each method.
pub fn default_grid(method: Method) -> Vec<f64> {
    let n = DEFAULT_GRID_POINTS;
    match method {
        Method::Ard => vec![0.0],
        Method::Ardvi => logspace(1.0, 1e3, n),
        Method::Ardr => logspace(1e-4, 1e4, n),
        Method::MStsbl => logspace(1e-3, 1.0, n),
        Method::LStsbl => logspace(1e-3, 1e4, n),
        Method::MapStsbl => logspace(1e-2, 1e2, n),
    }
}

fn default_methods(kind: ExperimentKind) -> Vec<MethodGridConfig> {
    let methods: &[Method] = match kind {
        ExperimentKind::OrthoRates => &Method::ALL[1..],
        ExperimentKind::CondSweep => &[Method::Ardvi],
        _ => &Method::ALL,
    };
    methods
        .iter()
        .map(|m| MethodGridConfig {
            method: m.name().to_string(),
            values: if kind == ExperimentKind::CondSweep { Some(vec![2.0, 5.0, 10.0]) } else { None },
            log: None,
            linear: None,
            eta_width: None,
            penalty_scale: None,
        })
        .collect()
}

fn resolve_grid(index: usize, g: &MethodGridConfig, kind: ExperimentKind) -> Result<MethodGrid, ConfigError> {
    let field = |name: &str| format!("methods[{index}].{name}");
    let method: Method =
        g.method.parse().map_err(|_| invalid(&field("method"), format!("unknown method `{}`", g.method)))?;
    let given = [g.values.is_some(), g.log.is_some(), g.linear.is_some()].iter().filter(|&&b| b).count();
    if given > 1 {
        return Err(invalid(&field("values"), "give at most one of `values`, `log` and `linear`"));
    }
    let params = if let Some(v) = &g.values {
        v.clone()
    } else if let Some((lo, hi, n)) = g.log {
        if !(lo > 0.0 && hi > 0.0) {
            return Err(invalid(&field("log"), "log sweep bounds must be positive"));
        }
        logspace(lo, hi, n)
    } else if let Some((lo, hi, n)) = g.linear {
        linspace(lo, hi, n)
    } else {
        default_grid(method)
    };
    if params.is_empty() {
        return Err(invalid(&field("values"), "parameter grid is empty"));
    }
    for &p in &params {
        let ok = p.is_finite()
            && match method {
                Method::Ard => true,
                Method::Ardvi => p >= 1.0,
                _ => p >= 0.0,
            };
        if !ok {
            return Err(invalid(&field("values"), format!("parameter {p} is out of range for {}", method.label())));
        }
    }
    if kind == ExperimentKind::CondSweep && method != Method::Ardvi {
        return Err(invalid(
            &field("method"),
            "cond_sweep takes an ardvi grid of α values; MAP-STSBL is paired automatically",
        ));
    }
    let linear_type = !matches!(kind, ExperimentKind::OrthoRates);
    let eta_width = g.eta_width.unwrap_or(if linear_type { 0.1 } else { f64::INFINITY });
    if !(eta_width > 0.0) {
        return Err(invalid(&field("eta_width"), "penalty width must be positive"));
    }
    let penalty_scale = g.penalty_scale.unwrap_or(if linear_type { ScaleName::NoiseScaled } else { ScaleName::Plain });
    Ok(MethodGrid { method, params, eta_width, penalty_scale })
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be nonnegative and finite, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<usize, ConfigError> {
    if v >= min {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be at least {min}, got {v}")))
    }
}

fn kappa(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v >= 1.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("condition number must be at least 1, got {v}")))
    }
}

fn nonzero_fits(nonzero: usize, d: usize) -> Result<usize, ConfigError> {
    if nonzero <= d {
        Ok(nonzero)
    } else {
        Err(invalid("nonzero", format!("{nonzero} nonzero coefficients do not fit in {d} columns")))
    }
}

fn nonempty_positive(field: &str, v: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
    if v.is_empty() {
        return Err(invalid(field, "list is empty"));
    }
    for &x in &v {
        positive(field, x)?;
    }
    Ok(v)
}

/// Fills in defaults for the chosen experiment and validates every knob.
pub fn resolve(c: ExperimentConfig) -> Result<Plan, ConfigError> {
    use ExperimentKind as K;
    let kind = c.experiment.ok_or_else(|| {
        invalid(
            "experiment",
            "missing; expected one of ortho_rates, linear, fourier, lorenz63, lorenz96, ks, cond_sweep",
        )
    })?;

    // Reject knobs the chosen experiment never reads.
    let used: &[&str] = match kind {
        K::OrthoRates => &["n", "nonzero", "rho_range", "sigmas"],
        K::Linear => &["m", "d", "nonzero", "kappa", "noise_percent", "spacing"],
        K::Fourier => &["m", "modes", "nonzero", "noise_percent"],
        K::Lorenz63 => &["dt", "steps", "noise_percent", "degree"],
        K::Lorenz96 => &["n", "forcing", "dt", "steps", "noise_percent", "degree"],
        K::Ks => &["length", "n_x", "dt", "steps", "noise_percent", "rows"],
        K::CondSweep => &["m", "d", "nonzero", "kappas", "sigmas", "spacing"],
    };
    let present = [
        ("m", c.m.is_some()),
        ("d", c.d.is_some()),
        ("n", c.n.is_some()),
        ("nonzero", c.nonzero.is_some()),
        ("noise_percent", c.noise_percent.is_some()),
        ("kappa", c.kappa.is_some()),
        ("kappas", c.kappas.is_some()),
        ("sigmas", c.sigmas.is_some()),
        ("rho_range", c.rho_range.is_some()),
        ("spacing", c.spacing.is_some()),
        ("modes", c.modes.is_some()),
        ("dt", c.dt.is_some()),
        ("steps", c.steps.is_some()),
        ("degree", c.degree.is_some()),
        ("forcing", c.forcing.is_some()),
        ("n_x", c.n_x.is_some()),
        ("length", c.length.is_some()),
        ("rows", c.rows.is_some()),
    ];
    for (name, set) in present {
        if set && !used.contains(&name) {
            return Err(invalid(name, format!("not a setting of the {} experiment", kind.name())));
        }
    }

    let problem = match kind {
        K::OrthoRates => {
            let n = at_least("n", c.n.unwrap_or(250), 1)?;
            let (lo, hi) = c.rho_range.unwrap_or((1.0, 3.0));
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(invalid("rho_range", "need 0 < low ≤ high"));
            }
            ProblemSetup::OrthoRates {
                n,
                nonzero: nonzero_fits(c.nonzero.unwrap_or(25), n)?,
                rho_range: (lo, hi),
                sigmas: nonempty_positive("sigmas", c.sigmas.unwrap_or(vec![0.1, 0.01]))?,
            }
        }
        K::Linear => {
            let m = at_least("m", c.m.unwrap_or(250), 1)?;
            let d = at_least("d", c.d.unwrap_or(250), 1)?;
            ProblemSetup::Linear {
                m,
                d,
                nonzero: nonzero_fits(c.nonzero.unwrap_or(25), d)?,
                kappa: kappa("kappa", c.kappa.unwrap_or(100.0))?,
                noise_percent: nonnegative("noise_percent", c.noise_percent.unwrap_or(10.0))?,
                spacing: c.spacing.unwrap_or(Spacing::Log),
            }
        }
        K::Fourier => {
            let modes = at_least("modes", c.modes.unwrap_or(30), 1)?;
            ProblemSetup::Fourier {
                m: at_least("m", c.m.unwrap_or(250), 1)?,
                modes,
                nonzero: nonzero_fits(c.nonzero.unwrap_or(50), modes * modes)?,
                noise_percent: nonnegative("noise_percent", c.noise_percent.unwrap_or(10.0))?,
            }
        }
        K::Lorenz63 => ProblemSetup::Lorenz63 {
            dt: positive("dt", c.dt.unwrap_or(0.05))?,
            steps: at_least("steps", c.steps.unwrap_or(250), 12)?,
            noise_percent: nonnegative("noise_percent", c.noise_percent.unwrap_or(1.0))?,
            degree: at_least("degree", c.degree.unwrap_or(5), 1)?,
        },
        K::Lorenz96 => ProblemSetup::Lorenz96 {
            n: at_least("n", c.n.unwrap_or(40), 4)?,
            forcing: c.forcing.unwrap_or(16.0),
            dt: positive("dt", c.dt.unwrap_or(0.05))?,
            steps: at_least("steps", c.steps.unwrap_or(200), 12)?,
            noise_percent: nonnegative("noise_percent", c.noise_percent.unwrap_or(1.0))?,
            degree: at_least("degree", c.degree.unwrap_or(2), 1)?,
        },
        K::Ks => {
            let n_x = at_least("n_x", c.n_x.unwrap_or(512), sparse_ard::features::MIN_PDE_POINTS)?;
            if !n_x.is_power_of_two() {
                return Err(invalid("n_x", "grid size must be a power of two"));
            }
            ProblemSetup::Ks {
                length: positive("length", c.length.unwrap_or(32.0 * std::f64::consts::PI))?,
                n_x,
                dt: positive("dt", c.dt.unwrap_or(0.14))?,
                steps: at_least("steps", c.steps.unwrap_or(1071), 12)?,
                noise_percent: nonnegative("noise_percent", c.noise_percent.unwrap_or(0.1))?,
                rows: at_least("rows", c.rows.unwrap_or(2500), 1)?,
            }
        }
        K::CondSweep => {
            let m = at_least("m", c.m.unwrap_or(100), 1)?;
            let d = at_least("d", c.d.unwrap_or(100), 1)?;
            let kappas = c.kappas.unwrap_or(vec![1.0, 10.0, 100.0]);
            if kappas.is_empty() {
                return Err(invalid("kappas", "list is empty"));
            }
            for &k in &kappas {
                kappa("kappas", k)?;
            }
            ProblemSetup::CondSweep {
                m,
                d,
                nonzero: nonzero_fits(c.nonzero.unwrap_or(10), d)?,
                kappas,
                sigmas: nonempty_positive("sigmas", c.sigmas.unwrap_or(vec![0.1, 0.01]))?,
                spacing: c.spacing.unwrap_or(Spacing::Linear),
            }
        }
    };

    let methods_raw = match c.methods {
        Some(v) if v.is_empty() => return Err(invalid("methods", "method list is empty")),
        Some(v) => v,
        None => default_methods(kind),
    };
    let methods =
        methods_raw.iter().enumerate().map(|(i, g)| resolve_grid(i, g, kind)).collect::<Result<Vec<_>, _>>()?;

    let trials = c.trials.unwrap_or(match kind {
        K::OrthoRates => 50,
        K::Linear => 100,
        K::Lorenz96 => 1,
        K::CondSweep => 100,
        _ => 10,
    });
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let selection = c.selection.unwrap_or(match kind {
        K::OrthoRates | K::CondSweep => SelectionKind::None,
        K::Linear | K::Fourier => SelectionKind::Aicc,
        _ => SelectionKind::Oracle,
    });
    if matches!(kind, K::OrthoRates | K::CondSweep) && selection != SelectionKind::None {
        return Err(invalid("selection", format!("{} records every grid point; selection must be none", kind.name())));
    }
    let relearn_noise = c.relearn_noise.unwrap_or(!matches!(kind, K::OrthoRates | K::CondSweep));
    if relearn_noise && matches!(kind, K::OrthoRates | K::CondSweep) {
        return Err(invalid("relearn_noise", "rate experiments assume the noise level is known"));
    }
    let noise_init = positive("noise_init", c.noise_init.unwrap_or(0.1))?;
    let timeout_secs = positive("timeout_secs", c.timeout_secs.unwrap_or(300.0))?;
    // Support-by-support comparisons need γ driven all the way to its limit.
    let exact = matches!(kind, K::OrthoRates | K::CondSweep);
    let max_iter = at_least("max_iter", c.max_iter.unwrap_or(if exact { 10_000 } else { 200 }), 1)?;
    let tol = positive("tol", c.tol.unwrap_or(if exact { 1e-8 } else { 1e-6 }))?;

    Ok(Plan {
        experiment: kind,
        methods,
        trials,
        seed: c.seed.unwrap_or(0),
        selection,
        relearn_noise,
        noise_init,
        timeout_secs,
        max_iter,
        tol,
        problem,
    })
}
