//! Lyapunov spectrum estimation by evolving an orthonormal tangent frame
//! along the orbit and re-orthonormalizing it with Gram-Schmidt.
//!
//! After a burn-in that lets the orbit settle on its attractor, the state and
//! `k` tangent vectors are integrated together. Every `renorm_interval` steps
//! the frame is re-orthonormalized; the length of each vector's component
//! orthogonal to the previous ones is its growth factor over the interval.
//! The i-th exponent is the time average of the log growth of the i-th
//! vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSystem;
use crate::odeint::{AugmentedStepper, Rk4Scratch, TangentFrame};

/// Residual norm below which a tangent frame is treated as rank deficient.
pub const DEGENERATE_NORM: f64 = 1e-300;

/// Chaos threshold on the leading exponent.
pub const DEFAULT_DELTA_TOL: f64 = 0.05;

/// Band around zero treated as a neutral (oscillatory) leading exponent.
pub const DEFAULT_OSC_TOL: f64 = 6e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeConfig {
    pub burn_in_steps: usize,
    pub estimation_steps: usize,
    pub renorm_interval: usize,
    pub dt: f64,
    /// Number of leading exponents; `None` means all `n`.
    pub k_exponents: Option<usize>,
    /// Orbits leaving the ball `|y|∞ < divergence_bound` count as divergent.
    pub divergence_bound: f64,
}

impl Default for LeConfig {
    fn default() -> Self {
        Self {
            burn_in_steps: 1000,
            estimation_steps: 10_000,
            renorm_interval: 1,
            dt: 0.01,
            k_exponents: None,
            divergence_bound: 1e10,
        }
    }
}

impl LeConfig {
    /// Defaults with the model's own step size.
    pub fn for_model(model: &ModelSystem) -> Self {
        Self {
            dt: model.default_dt(),
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.estimation_steps == 0 || self.renorm_interval == 0 {
            return Err(Error::Precondition(
                "estimation_steps and renorm_interval must be positive".into(),
            ));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Precondition(format!("dt must be positive, got {}", self.dt)));
        }
        let k = self.exponent_count(n);
        if k == 0 || k > n {
            return Err(Error::Precondition(format!(
                "k_exponents must lie in 1..={n}, got {k}"
            )));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(Error::Precondition("divergence_bound must be positive".into()));
        }
        Ok(())
    }

    pub fn exponent_count(&self, n: usize) -> usize {
        self.k_exponents.unwrap_or(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Sorted descending, in inverse model time. All `+∞` when diverged.
    pub exponents: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub diverged: bool,
}

impl LyapunovSpectrum {
    fn divergent(k: usize, dt: f64, steps: usize) -> Self {
        Self {
            exponents: vec![f64::INFINITY; k],
            dt,
            steps,
            diverged: true,
        }
    }

    pub fn leading(&self) -> f64 {
        self.exponents[0]
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractorClass {
    FixedPoint,
    LimitCycleOrTorus,
    Chaos,
    Hyperchaos,
    Divergent,
}

impl AttractorClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttractorClass::FixedPoint => "fixed_point",
            AttractorClass::LimitCycleOrTorus => "limit_cycle_or_torus",
            AttractorClass::Chaos => "chaos",
            AttractorClass::Hyperchaos => "hyperchaos",
            AttractorClass::Divergent => "divergent",
        }
    }
}

impl std::fmt::Display for AttractorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub class: AttractorClass,
    /// Set when the leading exponent is positive but not above `delta_tol`.
    pub low_confidence: bool,
}

/// Re-orthonormalizes the columns in order (modified Gram-Schmidt with one
/// reorthogonalization pass).
///
/// Returns the orthonormal frame and, for each column, the norm of its
/// component orthogonal to all preceding columns.
pub fn gram_schmidt(frame: &TangentFrame) -> Result<(TangentFrame, Vec<f64>)> {
    let mut out = frame.clone();
    let mut norms = vec![0.0; frame.count()];
    orthonormalize_in_place(frame.dim(), frame.count(), out.data_mut(), &mut norms)?;
    Ok((out, norms))
}

fn orthonormalize_in_place(n: usize, k: usize, data: &mut [f64], norms: &mut [f64]) -> Result<()> {
    for j in 0..k {
        let (done, rest) = data.split_at_mut(j * n);
        let col = &mut rest[..n];
        for _pass in 0..2 {
            for i in 0..j {
                let basis = &done[i * n..(i + 1) * n];
                let proj: f64 = basis.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                for (c, b) in col.iter_mut().zip(basis) {
                    *c -= proj * b;
                }
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= DEGENERATE_NORM) || !norm.is_finite() {
            return Err(Error::DegenerateFrame { column: j, norm });
        }
        for c in col.iter_mut() {
            *c /= norm;
        }
        norms[j] = norm;
    }
    Ok(())
}

/// Estimates the `k` leading Lyapunov exponents of `model` at `theta`.
///
/// Only precondition violations are returned as errors. An orbit that
/// overflows or leaves the divergence bound yields a spectrum with
/// `diverged = true`, so callers running many evaluations can penalize it.
pub fn estimate_spectrum(
    model: &ModelSystem,
    theta: &[f64],
    y0: &[f64],
    config: &LeConfig,
) -> Result<LyapunovSpectrum> {
    config.validate(model.dim())?;
    let frame = TangentFrame::identity(model.dim(), config.exponent_count(model.dim()))?;
    estimate_spectrum_from(model, theta, y0, frame, config)
}

/// As [`estimate_spectrum`], starting the tangent dynamics from `frame`
/// (orthonormalized first) instead of the canonical basis.
pub fn estimate_spectrum_from(
    model: &ModelSystem,
    theta: &[f64],
    y0: &[f64],
    frame: TangentFrame,
    config: &LeConfig,
) -> Result<LyapunovSpectrum> {
    let n = model.dim();
    config.validate(n)?;
    Error::check_len("tangent frame dimension", frame.dim(), n)?;
    Error::check_len("tangent frame columns", frame.count(), config.exponent_count(n))?;
    let (frame, _) = gram_schmidt(&frame)?;
    Error::check_len("initial state", y0.len(), n)?;
    Error::check_len("parameter vector", theta.len(), model.params().len())?;
    if theta.iter().chain(y0).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("non-finite parameter or initial state".into()));
    }
    let k = config.exponent_count(n);
    match run_estimator(model, theta, y0, config, frame) {
        Ok(mut exponents) => {
            exponents.sort_by(|a, b| b.total_cmp(a));
            Ok(LyapunovSpectrum {
                exponents,
                dt: config.dt,
                steps: config.estimation_steps,
                diverged: false,
            })
        }
        Err(Error::Divergence { .. }) | Err(Error::DegenerateFrame { .. }) => Ok(
            LyapunovSpectrum::divergent(k, config.dt, config.estimation_steps),
        ),
        Err(other) => Err(other),
    }
}

fn run_estimator(
    model: &ModelSystem,
    theta: &[f64],
    y0: &[f64],
    config: &LeConfig,
    mut frame: TangentFrame,
) -> Result<Vec<f64>> {
    let n = model.dim();
    let field = model.field();
    let dt = config.dt;
    let bound = config.divergence_bound;
    let in_bounds = |y: &[f64]| y.iter().all(|v| v.is_finite() && v.abs() < bound);

    let k = frame.count();
    let mut y = y0.to_vec();
    let mut stepper = AugmentedStepper::new(n, k);

    let mut burn = Rk4Scratch::new(n);
    for i in 0..config.burn_in_steps {
        let t = i as f64 * dt;
        burn.step(field, theta, t, dt, &mut y)?;
        if !in_bounds(&y) {
            return Err(Error::divergence(t + dt, &y));
        }
    }

    let t_start = config.burn_in_steps as f64 * dt;
    let mut log_sums = vec![0.0; k];
    let mut norms = vec![0.0; k];
    for i in 0..config.estimation_steps {
        let t = t_start + i as f64 * dt;
        stepper.step(field, theta, t, dt, &mut y, frame.data_mut())?;
        if !in_bounds(&y) {
            return Err(Error::divergence(t + dt, &y));
        }
        let due = (i + 1) % config.renorm_interval == 0 || i + 1 == config.estimation_steps;
        if due {
            orthonormalize_in_place(n, k, frame.data_mut(), &mut norms)?;
            for (s, g) in log_sums.iter_mut().zip(&norms) {
                *s += g.ln();
            }
        }
    }
    let horizon = config.estimation_steps as f64 * dt;
    Ok(log_sums.into_iter().map(|s| s / horizon).collect())
}

/// Attractor type implied by the leading exponent(s).
pub fn classify(spectrum: &LyapunovSpectrum, delta_tol: f64, osc_tol: f64) -> Classification {
    let confident = |class| Classification {
        class,
        low_confidence: false,
    };
    if spectrum.diverged || spectrum.exponents.iter().any(|v| !v.is_finite()) {
        return confident(AttractorClass::Divergent);
    }
    let l1 = spectrum.exponents[0];
    let l2 = spectrum.exponents.get(1).copied();
    if l1 > delta_tol {
        if l2.is_some_and(|l2| l2 > delta_tol) {
            confident(AttractorClass::Hyperchaos)
        } else {
            confident(AttractorClass::Chaos)
        }
    } else if l1.abs() <= osc_tol {
        confident(AttractorClass::LimitCycleOrTorus)
    } else if l1 < -osc_tol {
        confident(AttractorClass::FixedPoint)
    } else {
        Classification {
            class: AttractorClass::Chaos,
            low_confidence: true,
        }
    }
}

/// `D = k + Σᵢ₌₁..ₖ λᵢ / |λₖ₊₁|` with `k` the largest index whose partial sum
/// is non-negative; `0` when the leading exponent is negative.
pub fn kaplan_yorke_dimension(exponents: &[f64]) -> Result<f64> {
    if exponents.is_empty() {
        return Err(Error::Precondition("empty spectrum".into()));
    }
    if exponents.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Precondition("spectrum must be sorted descending".into()));
    }
    let mut partial = 0.0;
    let mut k = 0;
    for (i, &l) in exponents.iter().enumerate() {
        if partial + l >= 0.0 {
            partial += l;
            k = i + 1;
        } else {
            break;
        }
    }
    if k == 0 {
        return Ok(0.0);
    }
    match exponents.get(k) {
        Some(next) => Ok(k as f64 + partial / next.abs()),
        None => Err(Error::UnboundedDimension),
    }
}

/// Summary written by the classify command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub exponents: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub diverged: bool,
    pub class: AttractorClass,
    pub low_confidence: bool,
    /// `None` when diverged or unbounded.
    pub ky_dimension: Option<f64>,
}

impl SpectrumReport {
    pub fn new(spectrum: &LyapunovSpectrum, delta_tol: f64, osc_tol: f64) -> Self {
        let c = classify(spectrum, delta_tol, osc_tol);
        let ky_dimension = if spectrum.diverged {
            None
        } else {
            kaplan_yorke_dimension(&spectrum.exponents).ok()
        };
        Self {
            exponents: spectrum.exponents.clone(),
            dt: spectrum.dt,
            steps: spectrum.steps,
            diverged: spectrum.diverged,
            class: c.class,
            low_confidence: c.low_confidence,
            ky_dimension,
        }
    }
}
