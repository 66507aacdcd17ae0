//! Experiment configuration: a TOML document, `--set` overrides and flag
//! overrides merged in that order, then resolved against the model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lyapinf::dsl::parse_model;
use lyapinf::lyapunov::{DEFAULT_DELTA_TOL, DEFAULT_OSC_TOL};
use lyapinf::models::{BoxMode, Constraint, ConstraintMap};
use lyapinf::odeint::{IntegratorConfig, Method};
use lyapinf::qualinf::{
    InferenceConfig, InitDistribution, NoiseConfig, Region, Sampler, TargetKind, TargetSpec, DEFAULT_CHAOS_TARGET,
};
use lyapinf::ukf::UtParams;
use lyapinf::{builtin, LeConfig, ModelSystem};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelSource,
    /// Fixed parameter values; unlisted parameters take model defaults.
    pub params: BTreeMap<String, f64>,
    /// Free parameters and their starting values.
    pub free: BTreeMap<String, FreeInit>,
    pub initial_state: BTreeMap<String, f64>,
    /// Sweep axes and box-constraint bounds, `[lo, hi]` per parameter.
    pub region: BTreeMap<String, [f64; 2]>,
    pub integrator: IntegratorSection,
    pub lyapunov: LyapunovSection,
    pub target: Option<TargetConfig>,
    pub inference: InferenceSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSource {
    pub name: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FreeInit {
    Value(f64),
    Distribution(FreeDistribution),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FreeDistribution {
    Uniform([f64; 2]),
    LogUniform([f64; 2]),
}

impl FreeInit {
    fn distribution(self) -> InitDistribution {
        match self {
            FreeInit::Value(value) => InitDistribution::Fixed { value },
            FreeInit::Distribution(FreeDistribution::Uniform([lo, hi])) => InitDistribution::Uniform { lo, hi },
            FreeInit::Distribution(FreeDistribution::LogUniform([lo, hi])) => InitDistribution::LogUniform { lo, hi },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub method: Method,
    /// `None` uses the model's step size.
    pub dt: Option<f64>,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step_growth: f64,
    /// Simulated span is `steps·dt` unless `t_end` is given.
    pub steps: usize,
    pub t_end: Option<f64>,
    pub sample_every: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        Self {
            method: d.method,
            dt: None,
            abs_tol: d.abs_tol,
            rel_tol: d.rel_tol,
            max_step_growth: d.max_step_growth,
            steps: 10_000,
            t_end: None,
            sample_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovSection {
    pub burn_in_steps: usize,
    pub estimation_steps: usize,
    pub renorm_interval: usize,
    pub dt: Option<f64>,
    pub k_exponents: Option<usize>,
    pub divergence_bound: f64,
    pub delta_tol: f64,
    pub osc_tol: f64,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        let d = LeConfig::default();
        Self {
            burn_in_steps: d.burn_in_steps,
            estimation_steps: d.estimation_steps,
            renorm_interval: d.renorm_interval,
            dt: None,
            k_exponents: None,
            divergence_bound: d.divergence_bound,
            delta_tol: DEFAULT_DELTA_TOL,
            osc_tol: DEFAULT_OSC_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Oscillation,
    /// `d` may be omitted only for the Lorenz model.
    Chaos {
        d: Option<f64>,
    },
    LeadingExponents {
        targets: Vec<f64>,
    },
    FullSpectrum {
        targets: Vec<f64>,
    },
    KyDimension {
        target: f64,
    },
    Hyperchaos {
        lambda1_min: f64,
        lambda2_min: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    #[default]
    Identity,
    AbsoluteValue,
    /// Bounds come from `[region]`.
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub max_iterations: usize,
    pub sse_stop: Option<f64>,
    pub restarts: usize,
    pub constraint: ConstraintKind,
    pub box_mode: BoxMode,
    pub infer_initial_conditions: bool,
    pub process_scale: f64,
    pub measurement: f64,
    pub initial_cov_scale: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let d = InferenceConfig::default();
        Self {
            max_iterations: d.max_iterations,
            sse_stop: None,
            restarts: 1,
            constraint: ConstraintKind::Identity,
            box_mode: BoxMode::default(),
            infer_initial_conditions: false,
            process_scale: d.noise.process_scale,
            measurement: d.noise.measurement,
            initial_cov_scale: d.initial_cov_scale,
            alpha: d.ut.alpha,
            beta: d.ut.beta,
            kappa: d.ut.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sampler: Sampler,
    pub n_samples: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sampler: Sampler::Sobol,
            n_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

// ---------------------------------------------------------------------------
// Loading and overrides

/// Reads `path` (if any) into a TOML table.
pub fn load_table(path: Option<&Path>) -> Result<toml::Table, CliError> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read config {}", path.display()), e))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Applies `key.path=value`; the value is read as a TOML literal, falling
/// back to a bare string.
pub fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("--set expects key=value, got '{assignment}'")))?;
    let key = key.trim();
    let value = parse_literal(raw.trim());
    set_path(table, key, value)
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets a dotted path, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::validation(format!("invalid key '{key}'")));
    }
    let mut node = table;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(CliError::validation(format!(
                    "{} is not a section",
                    parts[..=i].join(".")
                )))
            }
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn from_table(table: toml::Table) -> Result<ExperimentConfig, CliError> {
    // Round-trip through text so that errors carry key names and positions.
    let text = toml::to_string(&table).map_err(|e| CliError::validation(e.to_string()))?;
    toml::from_str(&text).map_err(|e| CliError::validation(format!("invalid configuration: {e}")))
}

// ---------------------------------------------------------------------------
// Resolution against a model

/// Collects `field: message` problems so all of them are reported at once.
#[derive(Debug, Default)]
struct Problems(Vec<String>);

impl Problems {
    fn push(&mut self, field: impl AsRef<str>, message: impl AsRef<str>) {
        self.0.push(format!("{}: {}", field.as_ref(), message.as_ref()));
    }

    fn finish(self) -> Result<(), CliError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(CliError::validation(format!("invalid configuration:\n  {}", self.0.join("\n  "))))
        }
    }
}

/// Configuration with the model loaded and names checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub model: ModelSystem,
    /// Model file the model came from, if any.
    pub model_file: Option<PathBuf>,
    pub initial_state: Vec<f64>,
}

impl Resolved {
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        let (model, model_file) = load_model(&config.model)?;
        let mut problems = Problems::default();

        for name in config.params.keys() {
            if model.param_index(name).is_none() {
                problems.push(format!("params.{name}"), format!("'{}' has no such parameter", model.name()));
            }
            if config.free.contains_key(name) {
                problems.push(format!("params.{name}"), "assigned both as fixed and as free");
            }
        }
        for name in config.free.keys() {
            if model.param_index(name).is_none() {
                problems.push(format!("free.{name}"), format!("'{}' has no such parameter", model.name()));
            }
        }
        for name in config.initial_state.keys() {
            if model.state_index(name).is_none() {
                problems.push(format!("initial_state.{name}"), format!("'{}' has no such state", model.name()));
            }
        }
        for (name, [lo, hi]) in &config.region {
            if model.param_index(name).is_none() {
                problems.push(format!("region.{name}"), format!("'{}' has no such parameter", model.name()));
            }
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                problems.push(format!("region.{name}"), format!("bounds [{lo}, {hi}] are not an interval"));
            }
        }
        problems.finish()?;

        let initial_state = model
            .state_names()
            .iter()
            .zip(model.default_initial_state())
            .map(|(n, d)| config.initial_state.get(n).copied().unwrap_or(*d))
            .collect();
        Ok(Self {
            config,
            model,
            model_file,
            initial_state,
        })
    }

    /// Full parameter vector. Free parameters take their fixed starting
    /// value, or the model default, or the midpoint of their distribution.
    pub fn parameters(&self) -> Result<Vec<f64>, CliError> {
        let mut missing = Problems::default();
        let values: Vec<f64> = self
            .model
            .params()
            .iter()
            .map(|p| {
                let free = self.config.free.get(&p.name).map(|f| match f {
                    FreeInit::Value(v) => *v,
                    FreeInit::Distribution(FreeDistribution::Uniform([lo, hi])) => 0.5 * (lo + hi),
                    FreeInit::Distribution(FreeDistribution::LogUniform([lo, hi])) => (lo * hi).sqrt(),
                });
                match self.config.params.get(&p.name).copied().or(free).or(p.default) {
                    Some(v) => v,
                    None => {
                        missing.push(
                            format!("params.{}", p.name),
                            format!("required by model '{}' (no default value)", self.model.name()),
                        );
                        f64::NAN
                    }
                }
            })
            .collect();
        missing.finish()?;
        Ok(values)
    }

    pub fn integrator(&self) -> Result<IntegratorConfig, CliError> {
        let s = &self.config.integrator;
        let cfg = IntegratorConfig {
            method: s.method,
            dt: s.dt.unwrap_or(self.model.default_dt()),
            abs_tol: s.abs_tol,
            rel_tol: s.rel_tol,
            max_step_growth: s.max_step_growth,
        };
        cfg.validate().map_err(|e| CliError::validation(format!("integrator: {e}")))?;
        if s.sample_every == 0 {
            return Err(CliError::validation("integrator.sample_every: must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn le_config(&self) -> Result<LeConfig, CliError> {
        let s = &self.config.lyapunov;
        let cfg = LeConfig {
            burn_in_steps: s.burn_in_steps,
            estimation_steps: s.estimation_steps,
            renorm_interval: s.renorm_interval,
            dt: s.dt.unwrap_or(self.model.default_dt()),
            k_exponents: s.k_exponents,
            divergence_bound: s.divergence_bound,
        };
        cfg.validate(self.model.dim())
            .map_err(|e| CliError::validation(format!("lyapunov: {e}")))?;
        if !(s.delta_tol > 0.0) || !(s.osc_tol >= 0.0) {
            return Err(CliError::validation(
                "lyapunov.delta_tol, lyapunov.osc_tol: must be positive",
            ));
        }
        Ok(cfg)
    }

    pub fn target(&self) -> Result<TargetSpec, CliError> {
        let Some(t) = &self.config.target else {
            return Err(CliError::validation("target: required for infer"));
        };
        let kind = match t {
            TargetConfig::Oscillation => TargetKind::LeadingExponents { targets: vec![0.0] },
            TargetConfig::Chaos { d } => {
                let d = match (d, self.model.name()) {
                    (Some(d), _) => *d,
                    (None, "lorenz") => DEFAULT_CHAOS_TARGET,
                    (None, _) => {
                        return Err(CliError::validation(
                            "target.d: required for chaos targets on models other than lorenz",
                        ))
                    }
                };
                if !(d > self.config.lyapunov.delta_tol) {
                    return Err(CliError::validation(format!(
                        "target.d: must exceed lyapunov.delta_tol = {}",
                        self.config.lyapunov.delta_tol
                    )));
                }
                TargetKind::LeadingExponents { targets: vec![d] }
            }
            TargetConfig::LeadingExponents { targets } => TargetKind::LeadingExponents { targets: targets.clone() },
            TargetConfig::FullSpectrum { targets } => TargetKind::FullSpectrum { targets: targets.clone() },
            TargetConfig::KyDimension { target } => TargetKind::KyDimension { target: *target },
            TargetConfig::Hyperchaos { lambda1_min, lambda2_min } => TargetKind::Hyperchaos {
                lambda1_min: *lambda1_min,
                lambda2_min: *lambda2_min,
            },
        };
        let spec = TargetSpec {
            kind,
            delta_tol: self.config.lyapunov.delta_tol,
            osc_tol: self.config.lyapunov.osc_tol,
        };
        spec.validate(self.model.dim())
            .map_err(|e| CliError::validation(format!("target: {e}")))?;
        Ok(spec)
    }

    /// Free parameter indices in model order.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.model.params().len())
            .filter(|&i| self.config.free.contains_key(&self.model.params()[i].name))
            .collect()
    }

    /// Starting distributions over the filter vector.
    pub fn init_distributions(&self) -> Vec<InitDistribution> {
        let mut out: Vec<InitDistribution> = self
            .free_indices()
            .iter()
            .map(|&i| {
                let p = &self.model.params()[i];
                match self.config.free[&p.name] {
                    FreeInit::Value(v) => InitDistribution::Fixed { value: v },
                    other => other.distribution(),
                }
            })
            .collect();
        if self.config.inference.infer_initial_conditions {
            out.extend(self.initial_state.iter().map(|&value| InitDistribution::Fixed { value }));
        }
        out
    }

    pub fn inference_config(&self) -> Result<InferenceConfig, CliError> {
        let s = &self.config.inference;
        let free = self.free_indices();
        let mut problems = Problems::default();
        if free.is_empty() {
            problems.push("free", "infer needs at least one free parameter");
        }
        if s.restarts == 0 {
            problems.push("inference.restarts", "must be at least 1");
        }
        let constraint = match s.constraint {
            ConstraintKind::Identity => None,
            ConstraintKind::AbsoluteValue => Some(Constraint::AbsoluteValue),
            ConstraintKind::Box => None,
        };
        let mut map: Vec<Constraint> = free
            .iter()
            .map(|&i| {
                let name = &self.model.params()[i].name;
                match s.constraint {
                    ConstraintKind::Box => match self.config.region.get(name) {
                        Some(&[lo, hi]) => Constraint::Box { lo, hi, mode: s.box_mode },
                        None => {
                            problems.push(format!("region.{name}"), "box constraint needs bounds for every free parameter");
                            Constraint::Identity
                        }
                    },
                    _ => constraint.unwrap_or(Constraint::Identity),
                }
            })
            .collect();
        problems.finish()?;
        if s.infer_initial_conditions {
            map.extend(std::iter::repeat_n(Constraint::Identity, self.model.dim()));
        }
        let cfg = InferenceConfig {
            max_iterations: s.max_iterations,
            sse_stop: s.sse_stop,
            le_config: Some(self.le_config()?),
            constraint: Some(ConstraintMap(map)),
            infer_initial_conditions: s.infer_initial_conditions,
            noise: NoiseConfig {
                process_scale: s.process_scale,
                measurement: s.measurement,
            },
            initial_cov_scale: s.initial_cov_scale,
            ut: UtParams {
                alpha: s.alpha,
                beta: s.beta,
                kappa: s.kappa,
            },
            seed: self.config.seed,
        };
        cfg.validate().map_err(|e| CliError::validation(format!("inference: {e}")))?;
        Ok(cfg)
    }

    /// Sweep axes: every parameter listed in `[region]`, in model order.
    pub fn sweep_region(&self) -> Result<(Vec<usize>, Region), CliError> {
        let swept: Vec<usize> = (0..self.model.params().len())
            .filter(|&i| self.config.region.contains_key(&self.model.params()[i].name))
            .collect();
        if swept.is_empty() {
            return Err(CliError::validation("region: sweep needs bounds for at least one parameter"));
        }
        let (lo, hi) = swept
            .iter()
            .map(|&i| {
                let [lo, hi] = self.config.region[&self.model.params()[i].name];
                (lo, hi)
            })
            .unzip();
        let region = Region::new(lo, hi).map_err(|e| CliError::validation(format!("region: {e}")))?;
        if self.config.sweep.n_samples == 0 {
            return Err(CliError::validation("sweep.n_samples: must be at least 1"));
        }
        Ok((swept, region))
    }
}

fn load_model(source: &ModelSource) -> Result<(ModelSystem, Option<PathBuf>), CliError> {
    match (&source.name, &source.file) {
        (Some(_), Some(_)) => Err(CliError::validation("model.name, model.file: give one, not both")),
        (None, None) => Err(CliError::validation("model: give a built-in name (--model) or a model file (--model-file)")),
        (Some(name), None) => Ok((builtin(name).map_err(|e| CliError::validation(format!("model.name: {e}")))?, None)),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read model file {}", path.display()), e))?;
            let def = parse_model(&text)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            let name = path
                .file_stem()
                .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
            let model = def
                .into_model(name)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            Ok((model, Some(path.clone())))
        }
    }
}
