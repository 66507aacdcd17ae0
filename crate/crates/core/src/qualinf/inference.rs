use std::fmt;
use std::io;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::target::{evaluate, prediction_error, target_vector, Evaluation, ParamLayout, TargetSpec};
use crate::error::{Error, Result};
use crate::lyapunov::{AttractorClass, LeConfig};
use crate::models::{ConstraintMap, ModelSystem};
use crate::rng::stream_rng;
use crate::ukf::{predict, process_noise_from_initial, sigma_points, update_with_observations, FilterState, UtParams};

/// Consecutive all-penalty iterations tolerated before giving up.
pub const REGIME_LOST_AFTER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Process noise variance per unit magnitude of the initial value.
    pub process_scale: f64,
    /// Measurement noise variance `a` on every observation component.
    pub measurement: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process_scale: 0.01,
            measurement: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub max_iterations: usize,
    /// Raw SSE at which a run counts as converged; `None` picks a default
    /// from the target.
    pub sse_stop: Option<f64>,
    /// `None` uses the model's own step size with default step counts.
    pub le_config: Option<LeConfig>,
    /// Over the filter vector; `None` means no constraint.
    pub constraint: Option<ConstraintMap>,
    pub infer_initial_conditions: bool,
    pub noise: NoiseConfig,
    /// Initial covariance variance per unit magnitude of the initial value.
    pub initial_cov_scale: f64,
    pub ut: UtParams,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            sse_stop: None,
            le_config: None,
            constraint: None,
            infer_initial_conditions: false,
            noise: NoiseConfig::default(),
            initial_cov_scale: 0.1,
            ut: UtParams {
                alpha: 1.0,
                beta: 2.0,
                kappa: 0.0,
            },
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Precondition("max_iterations must be at least 1".into()));
        }
        if let Some(s) = self.sse_stop {
            if !(s > 0.0) {
                return Err(Error::Precondition("sse_stop must be positive".into()));
            }
        }
        if !(self.noise.process_scale >= 0.0) || !(self.noise.measurement > 0.0) {
            return Err(Error::Precondition(
                "process noise must be non-negative and measurement noise positive".into(),
            ));
        }
        if !(self.initial_cov_scale > 0.0) {
            return Err(Error::Precondition("initial_cov_scale must be positive".into()));
        }
        if let Some(c) = &self.constraint {
            c.validate()?;
        }
        Ok(())
    }

    pub fn le_config_for(&self, model: &ModelSystem) -> LeConfig {
        self.le_config.unwrap_or_else(|| LeConfig::for_model(model))
    }

    pub fn sse_stop_for(&self, target: &TargetSpec) -> f64 {
        self.sse_stop.unwrap_or_else(|| target.default_sse_stop())
    }
}

/// Model, goal and the split of parameters into fixed and free.
#[derive(Debug, Clone)]
pub struct InferenceProblem<'a> {
    pub model: &'a ModelSystem,
    pub target: TargetSpec,
    /// Full parameter vector; free entries are the starting values.
    pub base_params: Vec<f64>,
    pub free: Vec<usize>,
    pub initial_state: Vec<f64>,
}

impl<'a> InferenceProblem<'a> {
    /// Every parameter free, starting from the model defaults.
    pub fn new(model: &'a ModelSystem, target: TargetSpec) -> Result<Self> {
        let base_params = model.default_params()?;
        Ok(Self {
            model,
            target,
            free: (0..base_params.len()).collect(),
            base_params,
            initial_state: model.default_initial_state().to_vec(),
        })
    }

    /// Frees exactly the named parameters, in the given order.
    pub fn with_free(mut self, names: &[&str]) -> Result<Self> {
        self.free = names
            .iter()
            .map(|n| {
                self.model
                    .param_index(n)
                    .ok_or_else(|| Error::Precondition(format!("model has no parameter '{n}'")))
            })
            .collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn layout(&self, infer_initial_conditions: bool) -> ParamLayout {
        ParamLayout {
            base_params: self.base_params.clone(),
            free: self.free.clone(),
            initial_state: self.initial_state.clone(),
            infer_initial_conditions,
        }
    }

    /// Names of the filter vector components.
    pub fn filter_names(&self, infer_initial_conditions: bool) -> Vec<String> {
        let mut names: Vec<String> = self
            .free
            .iter()
            .map(|&i| self.model.params()[i].name.clone())
            .collect();
        if infer_initial_conditions {
            names.extend(self.model.state_names().iter().map(|s| format!("{s}0")));
        }
        names
    }
}

/// Filter state after one iteration, with the spectrum at its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Posterior mean in filter coordinates.
    pub theta_raw: Vec<f64>,
    /// Posterior mean after the constraint map.
    pub theta: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub exponents: Vec<f64>,
    pub diverged: bool,
    pub observation: Vec<f64>,
    pub sse: f64,
    pub sse_weighted: f64,
    /// Running sum of `sse_weighted` over the iterations so far.
    pub sse_weighted_cumulative: f64,
    pub class: Option<AttractorClass>,
    pub penalized_points: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub names: Vec<String>,
    pub records: Vec<TraceRecord>,
}

impl InferenceTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Record with the smallest raw SSE.
    pub fn best(&self) -> Option<&TraceRecord> {
        self.records.iter().min_by(|a, b| a.sse.total_cmp(&b.sse))
    }

    pub fn write_jsonl<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// `iteration, <names>, P_<names>, lambda_<i>, sse, sse_weighted, class`.
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        let k = self.records.iter().map(|r| r.exponents.len()).max().unwrap_or(0);
        let mut header = vec!["iteration".to_string()];
        header.extend(self.names.iter().cloned());
        header.extend(self.names.iter().map(|n| format!("P_{n}")));
        header.extend((1..=k).map(|i| format!("lambda_{i}")));
        header.extend(["sse".into(), "sse_weighted".into(), "class".into()]);
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.theta.iter().map(|v| v.to_string()));
            row.extend(r.cov_diag.iter().map(|v| v.to_string()));
            row.extend((0..k).map(|i| r.exponents.get(i).map_or(String::new(), |v| v.to_string())));
            row.push(r.sse.to_string());
            row.push(r.sse_weighted.to_string());
            row.push(r.class.map_or(String::new(), |c| c.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Raw SSE at the posterior mean fell to `sse_stop`.
    SseReached,
    /// The posterior mean met the target's qualitative condition.
    TargetSatisfied,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRun {
    pub state: FilterState,
    pub trace: InferenceTrace,
    pub stop: StopReason,
    /// Evaluation at the final posterior mean.
    pub final_evaluation: Evaluation,
}

impl InferenceRun {
    pub fn converged(&self) -> bool {
        self.stop != StopReason::MaxIterations
    }
}

/// A run that stopped on a numerical error. The trace up to the failure is
/// kept.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceAbort {
    pub error: Error,
    pub trace: InferenceTrace,
    pub state: Option<FilterState>,
}

impl fmt::Display for InferenceAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.trace.len())
    }
}

impl std::error::Error for InferenceAbort {}

impl From<Error> for InferenceAbort {
    fn from(error: Error) -> Self {
        Self {
            error,
            trace: InferenceTrace::default(),
            state: None,
        }
    }
}

/// Diagonal covariance with variance `scale·|θ0ᵢ|` (or `scale` at zero).
pub fn diagonal_covariance(theta0: &[f64], scale: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&process_noise_from_initial(theta0, scale))
}

/// Iterates predict, sigma points, observation and update against the
/// constant target until the stopping rule fires or `max_iterations` pass.
pub fn run_inference(
    problem: &InferenceProblem<'_>,
    theta0: &[f64],
    p0: &DMatrix<f64>,
    config: &InferenceConfig,
) -> std::result::Result<InferenceRun, InferenceAbort> {
    let model = problem.model;
    let target = &problem.target;
    config.validate()?;
    target.validate(model.dim())?;
    let layout = problem.layout(config.infer_initial_conditions);
    layout.validate(model)?;
    let l = layout.filter_dim();
    Error::check_len("initial filter vector", theta0.len(), l)?;
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("initial parameters must be finite".into()).into());
    }
    if p0.nrows() != l || p0.ncols() != l || nalgebra::Cholesky::new(p0.clone()).is_none() {
        return Err(Error::Precondition("initial covariance must be positive definite".into()).into());
    }
    let constraint = config.constraint.clone().unwrap_or_else(|| ConstraintMap::identity(l));
    if constraint.len() != l {
        return Err(Error::Dimension {
            what: "constraint map",
            got: constraint.len(),
            expected: l,
        }
        .into());
    }
    let le = config.le_config_for(model);
    le.validate(model.dim())?;
    config.ut.validate(l)?;

    let y_target = target_vector(target);
    let m = y_target.len();
    let sse_stop = config.sse_stop_for(target);
    let eval = |theta: &DVector<f64>| evaluate(target, model, &layout, theta.as_slice(), &le, &constraint);

    let mut state = FilterState::new(
        DVector::from_column_slice(theta0),
        p0.clone(),
        process_noise_from_initial(theta0, config.noise.process_scale),
        DVector::from_element(m, config.noise.measurement),
    )?;
    let mut trace = InferenceTrace {
        names: problem.filter_names(config.infer_initial_conditions),
        records: Vec::new(),
    };
    let abort = |error, trace: InferenceTrace, state: &FilterState| InferenceAbort {
        error,
        trace,
        state: Some(state.clone()),
    };

    let mut center = eval(&state.mean);
    let mut all_penalty_streak = 0;
    let mut cumulative = 0.0;
    let mut stop = StopReason::MaxIterations;
    for _ in 0..config.max_iterations {
        let prior = predict(&state);
        let sigma = match sigma_points(&prior.mean, &prior.cov, &config.ut) {
            Ok(s) => s,
            Err(e) => return Err(abort(e, trace, &state)),
        };
        let side: Vec<Evaluation> = sigma.points[1..].par_iter().map(eval).collect();
        let penalized = usize::from(center.penalized) + side.iter().filter(|e| e.penalized).count();
        let observations: Vec<DVector<f64>> = std::iter::once(&center)
            .chain(&side)
            .map(|e| e.observation.clone())
            .collect();
        if penalized == sigma.len() {
            all_penalty_streak += 1;
            if all_penalty_streak >= REGIME_LOST_AFTER {
                return Err(abort(Error::RegimeLost(all_penalty_streak), trace, &state));
            }
        } else {
            all_penalty_streak = 0;
        }

        state = match update_with_observations(&state, &prior, &sigma, &observations, &y_target) {
            Ok((s, _)) => s,
            Err(e) => return Err(abort(e, trace, &state)),
        };
        center = eval(&state.mean);

        let err = prediction_error(center.observation.as_slice(), y_target.as_slice(), state.measurement_noise.as_slice())
            .expect("observation and target have matching length");
        cumulative += err.weighted;
        let spectrum = center.spectrum.as_ref();
        trace.records.push(TraceRecord {
            iteration: state.iteration,
            theta_raw: state.mean.as_slice().to_vec(),
            theta: center.theta.clone(),
            cov_diag: state.cov.diagonal().as_slice().to_vec(),
            exponents: spectrum.map_or_else(Vec::new, |s| s.exponents.clone()),
            diverged: spectrum.is_none_or(|s| s.diverged),
            observation: center.observation.as_slice().to_vec(),
            sse: err.raw,
            sse_weighted: err.weighted,
            sse_weighted_cumulative: cumulative,
            class: center.classification.map(|c| c.class),
            penalized_points: penalized,
        });
        if !center.penalized {
            if err.raw <= sse_stop {
                stop = StopReason::SseReached;
                break;
            }
            if target.is_satisfied(center.observation.as_slice()) {
                stop = StopReason::TargetSatisfied;
                break;
            }
        }
    }
    Ok(InferenceRun {
        state,
        trace,
        stop,
        final_evaluation: center,
    })
}

/// Distribution of one filter component's starting value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitDistribution {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Requires `0 < lo < hi`.
    LogUniform { lo: f64, hi: f64 },
}

impl InitDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitDistribution::Fixed { value } => value.is_finite(),
            InitDistribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            InitDistribution::LogUniform { lo, hi } => lo > 0.0 && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid initial distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitDistribution::Fixed { value } => value,
            InitDistribution::Uniform { lo, hi } => rng.gen_range(lo..hi),
            InitDistribution::LogUniform { lo, hi } => rng.gen_range(lo.ln()..hi.ln()).exp(),
        }
    }
}

/// Outcome of independent runs from random starting points.
#[derive(Debug)]
pub struct RestartSummary {
    pub starts: Vec<Vec<f64>>,
    pub runs: Vec<std::result::Result<InferenceRun, InferenceAbort>>,
    /// Index of the run whose trace holds the smallest raw SSE.
    pub best: Option<usize>,
}

/// Runs `restarts` inferences; start `r` is drawn from stream `r` of the
/// configured seed, so results do not depend on scheduling.
pub fn run_restarts(
    problem: &InferenceProblem<'_>,
    init: &[InitDistribution],
    restarts: usize,
    config: &InferenceConfig,
) -> Result<RestartSummary> {
    if restarts == 0 {
        return Err(Error::Precondition("restarts must be at least 1".into()));
    }
    let l = problem.layout(config.infer_initial_conditions).filter_dim();
    Error::check_len("initial distributions", init.len(), l)?;
    for d in init {
        d.validate()?;
    }
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|r| {
            let mut rng = stream_rng(config.seed, r as u64);
            init.iter().map(|d| d.sample(&mut rng)).collect()
        })
        .collect();
    let runs: Vec<_> = starts
        .par_iter()
        .map(|theta0| {
            let p0 = diagonal_covariance(theta0, config.initial_cov_scale);
            run_inference(problem, theta0, &p0, config)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().and_then(|r| r.trace.best()).map(|b| (i, b.sse)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(RestartSummary { starts, runs, best })
}
