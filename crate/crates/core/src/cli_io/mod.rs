//! Experiment configuration, dispatch and result files.

mod output;
mod run;

pub use output::{fmt_f64, write_atomic, write_csv};
pub use run::{ladder_table, read_record, run, RunOutcome, RunRecord, Verdict};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell_problem;
use crate::convergence_lab::{default_epsilons, Coupling};
use crate::gibbs::RadialQuadrature;
use crate::integrator::Scheme;
use crate::model_spec::{ModelError, ModelSource, ModelSpec, ValidationGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Validate,
    Simulate,
    LadderStrong,
    LadderMomentum,
    LadderIntegral,
    Drift,
    Cell,
    Lyapunov,
    Dbcheck,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Validate => "validate",
            Kind::Simulate => "simulate",
            Kind::LadderStrong => "ladder-strong",
            Kind::LadderMomentum => "ladder-momentum",
            Kind::LadderIntegral => "ladder-integral",
            Kind::Drift => "drift",
            Kind::Cell => "cell",
            Kind::Lyapunov => "lyapunov",
            Kind::Dbcheck => "dbcheck",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        serde_json::from_value(serde_json::Value::String(s.into())).ok()
    }

    fn needs_model(self) -> bool {
        !matches!(self, Kind::Lyapunov)
    }
}

/// Closed interval for a fitted slope; no upper end when `hi` is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Band {
        Band { lo, hi: Some(hi) }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && self.hi.is_none_or(|h| x <= h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bands {
    /// Slope of `sup_t E‖p − ψ‖^p`.
    pub momentum: Band,
    /// Slope of `E sup_t ‖p − ψ‖^p`.
    pub momentum_sup: Band,
    pub strong: Band,
    pub integral: Band,
}

impl Default for Bands {
    fn default() -> Self {
        Bands {
            momentum: Band::new(0.8, 1.2),
            momentum_sup: Band { lo: 0.6, hi: None },
            strong: Band::new(0.6, 1.2),
            integral: Band::new(0.7, 1.3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZetaGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ZetaGrid {
    pub fn points(&self) -> Vec<f64> {
        cell_problem::uniform_grid(self.lo, self.hi, self.step)
    }
}

/// Constant-coefficient model for `lyapunov` and linear `dbcheck` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSource {
    pub gamma: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub kind: Kind,
    /// Required; there is no clock-based default.
    pub seed: u64,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(rename = "T", default = "one")]
    pub t_end: f64,
    #[serde(default = "dt_factor")]
    pub dt_factor: f64,
    #[serde(default = "thousand")]
    pub paths: usize,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub bands: Bands,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "one_usize")]
    pub coarsen: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<Vec<f64>>,
    #[serde(default = "thousand")]
    pub observation_points: usize,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default)]
    pub quadrature: RadialQuadrature,
    /// Evaluation time for drift, cell and dbcheck.
    #[serde(default)]
    pub t: f64,
    /// Evaluation points for drift, cell and dbcheck (default: the origin).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_grid: Option<ZetaGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ValidationGrid>,
    /// Keep every k-th state of a simulated path.
    #[serde(default = "one_usize")]
    pub record_every: usize,
    /// Fast-variable samples for the model `dbcheck`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_samples: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearSource>,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn dt_factor() -> f64 {
    0.05
}
fn thousand() -> usize {
    1000
}
fn one_usize() -> usize {
    1
}

/// Parsed and validated configuration.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub model: Option<ModelSource>,
    pub experiment: Experiment,
    spec: Option<ModelSpec>,
}

impl PartialEq for ExperimentPlan {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model && self.experiment == other.experiment
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ModelSource>,
    experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub pointer: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid configuration:{}", .0.iter().map(|i| format!("\n  {}: {}", i.pointer, i.message)).collect::<String>())]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(v) => v,
            ConfigError::Io { .. } => &[],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub kind: Option<Kind>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

fn to_pointer(path: &serde_path_to_error::Path) -> String {
    let mut s = String::new();
    for seg in path.iter() {
        use serde_path_to_error::Segment;
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            Segment::Unknown => s.push_str("/?"),
        }
    }
    if s.is_empty() {
        "/".into()
    } else {
        s
    }
}

fn issue(pointer: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue { pointer: pointer.into(), message: message.into() }
}

/// Parses configuration text, applying `ov` on top of the file's values.
pub fn parse_config_str(text: &str, ov: &Overrides) -> Result<ExperimentPlan, ConfigError> {
    let mut value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ConfigError::Invalid(vec![issue("/", format!("not valid JSON: {e}"))]))?;
    // overrides may supply fields the file leaves out
    if let Some(exp) = value.get_mut("experiment").and_then(|e| e.as_object_mut()) {
        if let Some(k) = ov.kind {
            exp.insert("kind".into(), serde_json::Value::String(k.name().into()));
        }
        if let Some(s) = ov.seed {
            exp.insert("seed".into(), s.into());
        }
        if let Some(t) = ov.threads {
            exp.insert("threads".into(), t.into());
        }
        if let Some(o) = &ov.out {
            exp.insert("out".into(), o.to_string_lossy().into_owned().into());
        }
    }
    let file: ConfigFile = serde_path_to_error::deserialize(&value).map_err(|e| {
        let ptr = to_pointer(e.path());
        ConfigError::Invalid(vec![issue(&ptr, e.inner().to_string())])
    })?;
    build_plan(file.model, file.experiment)
}

fn build_plan(model: Option<ModelSource>, experiment: Experiment) -> Result<ExperimentPlan, ConfigError> {
    let mut issues = Vec::new();
    let e = &experiment;
    let spec = match &model {
        Some(src) => match ModelSpec::from_source(src) {
            Ok(s) => Some(s),
            Err(ModelError::Source { pointer, message }) => {
                issues.push(issue(&format!("/model{pointer}"), message));
                None
            }
            Err(ModelError::Parse { pointer, source }) => {
                issues.push(issue(&format!("/model{pointer}"), source.to_string()));
                None
            }
            Err(other) => {
                issues.push(issue("/model", other.to_string()));
                None
            }
        },
        None => {
            let linear_dbcheck = e.kind == Kind::Dbcheck && e.linear.is_some();
            if e.kind.needs_model() && !linear_dbcheck {
                issues.push(issue("/model", format!("required for kind {}", e.kind.name())));
            }
            None
        }
    };
    if e.epsilons.is_empty() || e.epsilons.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        issues.push(issue("/experiment/epsilons", "must be a non-empty list of positive numbers"));
    } else if e.epsilons.windows(2).any(|w| !(w[0] > w[1])) {
        issues.push(issue("/experiment/epsilons", "must be strictly decreasing"));
    }
    let positive = |x: f64| x > 0.0 && x.is_finite();
    for (ptr, ok) in [
        ("/experiment/T", positive(e.t_end)),
        ("/experiment/dt_factor", positive(e.dt_factor)),
        ("/experiment/p", positive(e.p)),
        ("/experiment/paths", e.paths > 0),
        ("/experiment/coarsen", e.coarsen > 0),
        ("/experiment/observation_points", e.observation_points > 0),
        ("/experiment/record_every", e.record_every > 0),
        ("/experiment/threads", e.threads != Some(0)),
    ] {
        if !ok {
            issues.push(issue(ptr, "must be positive"));
        }
    }
    if matches!(e.kind, Kind::LadderMomentum) && e.paths < 100 {
        issues.push(issue("/experiment/paths", "momentum ladders need at least 100 paths"));
    }
    if let Some(spec) = &spec {
        let n = spec.dim();
        for (ptr, v) in [("/experiment/q0", &e.q0), ("/experiment/z0", &e.z0)] {
            if v.as_ref().is_some_and(|v| v.len() != n) {
                issues.push(issue(ptr, format!("expected {n} entries")));
            }
        }
        if let Some(qs) = &e.q {
            for (i, q) in qs.iter().enumerate() {
                if q.len() != n {
                    issues.push(issue(&format!("/experiment/q/{i}"), format!("expected {n} entries")));
                }
            }
        }
        if let Some(zs) = &e.z_samples {
            for (i, z) in zs.iter().enumerate() {
                if z.len() != n {
                    issues.push(issue(&format!("/experiment/z_samples/{i}"), format!("expected {n} entries")));
                }
            }
        }
        if e.scheme == Scheme::SemiImplicit && !spec.kinetic_is_quadratic() {
            issues.push(issue("/experiment/scheme", "semi-implicit needs a kinetic energy linear in zeta"));
        }
    }
    if let Some(g) = &e.zeta_grid {
        if !(g.lo >= 0.0 && g.hi > g.lo && g.step > 0.0) {
            issues.push(issue("/experiment/zeta_grid", "need 0 <= lo < hi and step > 0"));
        }
    }
    match (&e.linear, e.kind) {
        (None, Kind::Lyapunov) => issues.push(issue("/experiment/linear", "required for kind lyapunov")),
        (Some(l), _) => {
            let n = l.gamma.len();
            if n == 0 || l.gamma.iter().any(|r| r.len() != n) {
                issues.push(issue("/experiment/linear/gamma", "must be a non-empty square matrix"));
            }
            if l.sigma.len() != n || l.sigma.iter().any(|r| r.len() != n) {
                issues.push(issue("/experiment/linear/Sigma", format!("must be {n}x{n}")));
            }
        }
        _ => {}
    }
    if issues.is_empty() {
        Ok(ExperimentPlan { model, experiment, spec })
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentPlan, ConfigError> {
    parse_config_with(path, &Overrides::default())
}

pub fn parse_config_with(path: &Path, ov: &Overrides) -> Result<ExperimentPlan, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_config_str(&text, ov)
}

impl ExperimentPlan {
    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    /// The plan as configuration JSON, defaults filled in.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ConfigFile { model: self.model.clone(), experiment: self.experiment.clone() })
            .expect("plan serializes")
    }

    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("plan serializes")
    }

    /// Thread count: plan, then `LH_THREADS`, then machine default.
    pub fn threads(&self) -> Option<usize> {
        self.experiment
            .threads
            .or_else(|| std::env::var("LH_THREADS").ok().and_then(|s| s.trim().parse().ok()).filter(|&t| t > 0))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.experiment.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
