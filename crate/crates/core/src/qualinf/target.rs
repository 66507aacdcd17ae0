use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{
    classify, estimate_spectrum, kaplan_yorke_dimension, Classification, LeConfig, LyapunovSpectrum,
    DEFAULT_DELTA_TOL, DEFAULT_OSC_TOL,
};
use crate::models::{apply_constraint, ConstraintMap, ModelSystem};

/// Observation value per component for divergent or failed orbits.
pub const PENALTY: f64 = 1e3;

/// Chaos target for Lorenz-scale systems.
pub const DEFAULT_CHAOS_TARGET: f64 = 0.9;

/// Hyperchaos targets are set this far above their minima.
pub const HYPERCHAOS_OVERSHOOT: f64 = 2.0;

/// What the filter conditions on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    LeadingExponents { targets: Vec<f64> },
    FullSpectrum { targets: Vec<f64> },
    KyDimension { target: f64 },
    Hyperchaos { lambda1_min: f64, lambda2_min: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(flatten)]
    pub kind: TargetKind,
    #[serde(default = "default_delta_tol")]
    pub delta_tol: f64,
    /// Exponents within this distance of zero count as zero when the
    /// Kaplan-Yorke dimension is observed.
    #[serde(default = "default_osc_tol")]
    pub osc_tol: f64,
}

fn default_delta_tol() -> f64 {
    DEFAULT_DELTA_TOL
}

fn default_osc_tol() -> f64 {
    DEFAULT_OSC_TOL
}

impl TargetSpec {
    pub fn new(kind: TargetKind) -> Self {
        Self {
            kind,
            delta_tol: DEFAULT_DELTA_TOL,
            osc_tol: DEFAULT_OSC_TOL,
        }
    }

    /// `λ₁ = 0`.
    pub fn oscillation() -> Self {
        Self::new(TargetKind::LeadingExponents { targets: vec![0.0] })
    }

    /// `λ₁ = d`, which must exceed `delta_tol`.
    pub fn chaos(d: f64) -> Self {
        Self::new(TargetKind::LeadingExponents { targets: vec![d] })
    }

    pub fn full_spectrum(targets: Vec<f64>) -> Self {
        Self::new(TargetKind::FullSpectrum { targets })
    }

    pub fn ky_dimension(target: f64) -> Self {
        Self::new(TargetKind::KyDimension { target })
    }

    pub fn hyperchaos(lambda1_min: f64, lambda2_min: f64) -> Self {
        Self::new(TargetKind::Hyperchaos {
            lambda1_min,
            lambda2_min,
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(m));
        if !(self.delta_tol > 0.0) || !(self.osc_tol >= 0.0) {
            return bad("target tolerances must be positive".into());
        }
        match &self.kind {
            TargetKind::LeadingExponents { targets } => {
                if targets.is_empty() || targets.len() > n {
                    return bad(format!("expected 1..={n} leading exponent targets, got {}", targets.len()));
                }
                if targets.iter().any(|v| !v.is_finite()) {
                    return bad("exponent targets must be finite".into());
                }
                if targets.windows(2).any(|w| w[0] < w[1]) {
                    return bad("leading exponent targets must be sorted descending".into());
                }
            }
            TargetKind::FullSpectrum { targets } => {
                Error::check_len("full spectrum target", targets.len(), n)?;
                if targets.iter().any(|v| !v.is_finite()) {
                    return bad("exponent targets must be finite".into());
                }
                if targets.windows(2).any(|w| w[0] < w[1]) {
                    return bad("full spectrum targets must be sorted descending".into());
                }
            }
            TargetKind::KyDimension { target } => {
                if !(*target >= 0.0) || !target.is_finite() || *target > n as f64 {
                    return bad(format!("Kaplan-Yorke target must lie in [0, {n}]"));
                }
            }
            TargetKind::Hyperchaos {
                lambda1_min,
                lambda2_min,
            } => {
                if n < 2 {
                    return bad("hyperchaos needs at least two states".into());
                }
                if !(*lambda1_min > self.delta_tol && *lambda2_min > self.delta_tol)
                    || !lambda1_min.is_finite()
                    || !lambda2_min.is_finite()
                {
                    return bad(format!(
                        "hyperchaos minima must exceed delta_tol = {}",
                        self.delta_tol
                    ));
                }
            }
        }
        Ok(())
    }

    /// Length of the observation vector.
    pub fn observation_dim(&self) -> usize {
        match &self.kind {
            TargetKind::LeadingExponents { targets } | TargetKind::FullSpectrum { targets } => targets.len(),
            TargetKind::KyDimension { .. } => 1,
            TargetKind::Hyperchaos { .. } => 2,
        }
    }

    /// Number of exponents the estimator must track.
    pub fn exponents_needed(&self, n: usize) -> usize {
        match &self.kind {
            TargetKind::LeadingExponents { targets } => targets.len(),
            TargetKind::Hyperchaos { .. } => 2,
            TargetKind::FullSpectrum { .. } | TargetKind::KyDimension { .. } => n,
        }
    }

    /// Whether the observation meets the qualitative goal outright. Only
    /// hyperchaos targets have a satisfaction region; the others stop on SSE.
    pub fn is_satisfied(&self, observation: &[f64]) -> bool {
        match &self.kind {
            TargetKind::Hyperchaos {
                lambda1_min,
                lambda2_min,
            } => observation.len() == 2 && observation[0] >= *lambda1_min && observation[1] >= *lambda2_min,
            _ => false,
        }
    }

    /// Stopping threshold used when none is configured.
    pub fn default_sse_stop(&self) -> f64 {
        match &self.kind {
            TargetKind::FullSpectrum { .. } => 1e-4,
            _ if self.observation_dim() == 1 => 1e-5,
            _ => 1e-4,
        }
    }
}

/// The constant observation the filter is fed at every update.
pub fn target_vector(target: &TargetSpec) -> DVector<f64> {
    match &target.kind {
        TargetKind::LeadingExponents { targets } | TargetKind::FullSpectrum { targets } => {
            DVector::from_column_slice(targets)
        }
        TargetKind::KyDimension { target } => DVector::from_element(1, *target),
        TargetKind::Hyperchaos {
            lambda1_min,
            lambda2_min,
        } => DVector::from_vec(vec![
            HYPERCHAOS_OVERSHOOT * lambda1_min,
            HYPERCHAOS_OVERSHOOT * lambda2_min,
        ]),
    }
}

/// Everything learned from one evaluation of the observation function.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Feasible parameters after the constraint map, then the initial state.
    pub theta: Vec<f64>,
    pub initial_state: Vec<f64>,
    pub spectrum: Option<LyapunovSpectrum>,
    pub classification: Option<Classification>,
    pub observation: DVector<f64>,
    pub penalized: bool,
}

/// How a filter vector maps onto model parameters and initial conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    /// Full parameter vector; entries listed in `free` are overwritten.
    pub base_params: Vec<f64>,
    pub free: Vec<usize>,
    pub initial_state: Vec<f64>,
    /// When set, the filter vector ends with the initial state.
    pub infer_initial_conditions: bool,
}

impl ParamLayout {
    /// All parameters free, initial state fixed.
    pub fn all_free(params: Vec<f64>, initial_state: Vec<f64>) -> Self {
        let free = (0..params.len()).collect();
        Self {
            base_params: params,
            free,
            initial_state,
            infer_initial_conditions: false,
        }
    }

    pub fn filter_dim(&self) -> usize {
        self.free.len() + if self.infer_initial_conditions { self.initial_state.len() } else { 0 }
    }

    pub fn validate(&self, model: &ModelSystem) -> Result<()> {
        Error::check_len("parameter vector", self.base_params.len(), model.params().len())?;
        Error::check_len("initial state", self.initial_state.len(), model.dim())?;
        if self.filter_dim() == 0 {
            return Err(Error::Precondition("no free quantities to infer".into()));
        }
        let mut seen = vec![false; self.base_params.len()];
        for &i in &self.free {
            if i >= seen.len() || seen[i] {
                return Err(Error::Precondition(format!("free parameter index {i} is invalid or repeated")));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// The filter vector at the base values.
    pub fn initial_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.free.iter().map(|&i| self.base_params[i]).collect();
        if self.infer_initial_conditions {
            v.extend_from_slice(&self.initial_state);
        }
        v
    }

    /// Splits a feasible filter vector into (parameters, initial state).
    pub fn expand(&self, feasible: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut params = self.base_params.clone();
        for (k, &i) in self.free.iter().enumerate() {
            params[i] = feasible[k];
        }
        let y0 = if self.infer_initial_conditions {
            feasible[self.free.len()..].to_vec()
        } else {
            self.initial_state.clone()
        };
        (params, y0)
    }
}

/// Observation for an arbitrary filter vector. Never fails: divergent orbits
/// and numerical errors become the penalty vector.
pub fn evaluate(
    target: &TargetSpec,
    model: &ModelSystem,
    layout: &ParamLayout,
    theta_raw: &[f64],
    le_config: &LeConfig,
    constraint: &ConstraintMap,
) -> Evaluation {
    let feasible = apply_constraint(constraint, theta_raw);
    let (params, y0) = layout.expand(&feasible);
    let m = target.observation_dim();
    let penalty = |spectrum: Option<LyapunovSpectrum>, classification| Evaluation {
        theta: feasible.clone(),
        initial_state: y0.clone(),
        spectrum,
        classification,
        observation: DVector::from_element(m, PENALTY),
        penalized: true,
    };
    if feasible.iter().any(|v| !v.is_finite()) {
        return penalty(None, None);
    }
    let cfg = LeConfig {
        k_exponents: Some(target.exponents_needed(model.dim())),
        ..*le_config
    };
    let spectrum = match estimate_spectrum(model, &params, &y0, &cfg) {
        Ok(s) => s,
        Err(_) => return penalty(None, None),
    };
    let classification = classify(&spectrum, target.delta_tol, target.osc_tol);
    if spectrum.diverged {
        return penalty(Some(spectrum), Some(classification));
    }
    let ex = &spectrum.exponents;
    let observation = match &target.kind {
        TargetKind::LeadingExponents { targets } => DVector::from_column_slice(&ex[..targets.len()]),
        TargetKind::Hyperchaos { .. } => DVector::from_column_slice(&ex[..2]),
        TargetKind::FullSpectrum { .. } => DVector::from_column_slice(ex),
        TargetKind::KyDimension { .. } => {
            let snapped: Vec<f64> = ex
                .iter()
                .map(|&l| if l.abs() <= target.osc_tol { 0.0 } else { l })
                .collect();
            let d = match kaplan_yorke_dimension(&snapped) {
                Ok(d) => d,
                Err(Error::UnboundedDimension) => ex.len() as f64,
                Err(_) => return penalty(Some(spectrum), Some(classification)),
            };
            DVector::from_element(1, d)
        }
    };
    Evaluation {
        theta: feasible,
        initial_state: y0,
        spectrum: Some(spectrum),
        classification: Some(classification),
        observation,
        penalized: false,
    }
}

/// Observation vector for raw parameters with the initial state fixed.
pub fn observation_fn(
    target: &TargetSpec,
    model: &ModelSystem,
    theta_raw: &[f64],
    y0: &[f64],
    le_config: &LeConfig,
    constraint: &ConstraintMap,
) -> DVector<f64> {
    let layout = ParamLayout::all_free(vec![0.0; theta_raw.len()], y0.to_vec());
    evaluate(target, model, &layout, theta_raw, le_config, constraint).observation
}

/// Both forms of the squared prediction error for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    /// `(g − λ)ᵀ R⁻¹ (g − λ)` with diagonal `R`.
    pub weighted: f64,
    /// `(g − λ)ᵀ (g − λ)`.
    pub raw: f64,
}

pub fn prediction_error(observed: &[f64], target: &[f64], r_meas: &[f64]) -> Result<PredictionError> {
    Error::check_len("observation", observed.len(), target.len())?;
    Error::check_len("measurement noise", r_meas.len(), target.len())?;
    let mut out = PredictionError { weighted: 0.0, raw: 0.0 };
    for ((g, t), r) in observed.iter().zip(target).zip(r_meas) {
        let d = g - t;
        out.raw += d * d;
        out.weighted += d * d / r;
    }
    Ok(out)
}
