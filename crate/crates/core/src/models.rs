//! Dynamical-system abstraction and the built-in model zoo.
//!
//! A [`ModelSystem`] is an autonomous (or time-dependent) vector field
//! `dy/dt = f(y, t; θ)` together with its Jacobian `Df = ∂f/∂y`, named
//! states and parameters, and a default initial state. The zoo contains the
//! Lorenz system, a three-variable chaotic electronic circuit, a Hes1
//! transcriptional feedback loop and a four-dimensional hyperchaotic system.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side and Jacobian of an ODE system, writing into caller
/// buffers so integrators can run without allocating.
///
/// Implementations do not need to check finiteness of their output; the
/// callers in this crate do that.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn rhs(&self, t: f64, y: &[f64], p: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Row-major `n×n` Jacobian, `jac[i * n + j] = ∂fᵢ/∂yⱼ`.
    fn jacobian(&self, t: f64, y: &[f64], p: &[f64], jac: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    /// `None` marks a constant the caller must supply.
    pub default: Option<f64>,
}

impl ParamSpec {
    pub fn new(name: &str, default: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            default,
        }
    }
}

#[derive(Clone)]
pub struct ModelSystem {
    name: String,
    state_names: Vec<String>,
    params: Vec<ParamSpec>,
    default_initial_state: Vec<f64>,
    default_dt: f64,
    field: Arc<dyn VectorField>,
}

impl fmt::Debug for ModelSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSystem")
            .field("name", &self.name)
            .field("state_names", &self.state_names)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl ModelSystem {
    pub fn new(
        name: impl Into<String>,
        state_names: Vec<String>,
        params: Vec<ParamSpec>,
        default_initial_state: Vec<f64>,
        default_dt: f64,
        field: Arc<dyn VectorField>,
    ) -> Result<Self> {
        if state_names.is_empty() {
            return Err(Error::Precondition("a model needs at least one state".into()));
        }
        Error::check_len(
            "default initial state",
            default_initial_state.len(),
            state_names.len(),
        )?;
        if !(default_dt > 0.0) {
            return Err(Error::Precondition("default dt must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            state_names,
            params,
            default_initial_state,
            default_dt,
            field,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|s| s == name)
    }

    pub fn default_initial_state(&self) -> &[f64] {
        &self.default_initial_state
    }

    /// Suggested integration step for this model.
    pub fn default_dt(&self) -> f64 {
        self.default_dt
    }

    /// The full default parameter vector, or the first parameter that has
    /// no default.
    pub fn default_params(&self) -> Result<Vec<f64>> {
        self.params
            .iter()
            .map(|p| p.default.ok_or_else(|| Error::MissingParameter(p.name.clone())))
            .collect()
    }

    pub fn field(&self) -> &dyn VectorField {
        self.field.as_ref()
    }

    fn check_inputs(&self, y: &[f64], theta: &[f64]) -> Result<()> {
        Error::check_len("state", y.len(), self.dim())?;
        Error::check_len("parameter vector", theta.len(), self.params.len())?;
        if let Some(bad) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "parameter '{}' is not finite",
                self.params[bad].name
            )));
        }
        Ok(())
    }

    /// `f(y; θ)` at time `t`.
    pub fn eval_rhs(&self, y: &[f64], theta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_inputs(y, theta)?;
        let mut dy = vec![0.0; self.dim()];
        self.field.rhs(t, y, theta, &mut dy)?;
        if dy.iter().all(|v| v.is_finite()) {
            Ok(dy)
        } else {
            Err(Error::divergence(t, y))
        }
    }

    /// Analytic Jacobian `∂fᵢ/∂yⱼ` at `(y, θ)`, evaluated at `t = 0`.
    pub fn eval_jacobian(&self, y: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        self.eval_jacobian_at(y, theta, 0.0)
    }

    pub fn eval_jacobian_at(&self, y: &[f64], theta: &[f64], t: f64) -> Result<DMatrix<f64>> {
        self.check_inputs(y, theta)?;
        let n = self.dim();
        let mut jac = vec![0.0; n * n];
        self.field.jacobian(t, y, theta, &mut jac)?;
        if jac.iter().all(|v| v.is_finite()) {
            Ok(DMatrix::from_row_slice(n, n, &jac))
        } else {
            Err(Error::divergence(t, y))
        }
    }
}

/// Central-difference Jacobian. Column `j` uses the step `h·max(1, |yⱼ|)`.
pub fn finite_diff_jacobian(
    model: &ModelSystem,
    y: &[f64],
    theta: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Precondition(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let n = model.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = y.to_vec();
    for j in 0..n {
        let step = h * y[j].abs().max(1.0);
        probe[j] = y[j] + step;
        let plus = model.eval_rhs(&probe, theta, 0.0)?;
        probe[j] = y[j] - step;
        let minus = model.eval_rhs(&probe, theta, 0.0)?;
        probe[j] = y[j];
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

// ---------------------------------------------------------------------------
// Constraints

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoxMode {
    Clamp,
    /// Folds back into the box; keeps the map non-flat outside it.
    #[default]
    Reflect,
}

/// Mapping `p` from the unrestricted filter space onto the feasible region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    Identity,
    AbsoluteValue,
    Box {
        lo: f64,
        hi: f64,
        #[serde(default)]
        mode: BoxMode,
    },
}

impl Constraint {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Constraint::Identity => v,
            Constraint::AbsoluteValue => v.abs(),
            Constraint::Box { lo, hi, mode } => {
                if v >= lo && v <= hi {
                    return v;
                }
                match mode {
                    BoxMode::Clamp => v.clamp(lo, hi),
                    BoxMode::Reflect => reflect_into(v, lo, hi),
                }
            }
        }
    }

    pub fn is_feasible(&self, v: f64) -> bool {
        match *self {
            Constraint::Identity => true,
            Constraint::AbsoluteValue => v >= 0.0,
            Constraint::Box { lo, hi, .. } => v >= lo && v <= hi,
        }
    }
}

fn reflect_into(v: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if !(width > 0.0) || !v.is_finite() {
        return v.clamp(lo, hi);
    }
    let period = 2.0 * width;
    let offset = (v - lo).rem_euclid(period);
    let folded = if offset <= width { offset } else { period - offset };
    (lo + folded).clamp(lo, hi)
}

/// Per-parameter constraint map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMap(pub Vec<Constraint>);

impl ConstraintMap {
    pub fn identity(n: usize) -> Self {
        Self(vec![Constraint::Identity; n])
    }

    pub fn uniform(constraint: Constraint, n: usize) -> Self {
        Self(vec![constraint; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.0.iter().enumerate() {
            if let Constraint::Box { lo, hi, .. } = c {
                if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Precondition(format!(
                        "box constraint {i} has invalid bounds [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, theta: &[f64]) -> bool {
        self.0.len() == theta.len() && self.0.iter().zip(theta).all(|(c, &v)| c.is_feasible(v))
    }
}

/// Applies `p` componentwise. A map shorter than `theta_raw` leaves the
/// trailing entries untouched.
pub fn apply_constraint(p: &ConstraintMap, theta_raw: &[f64]) -> Vec<f64> {
    theta_raw
        .iter()
        .enumerate()
        .map(|(i, &v)| p.0.get(i).map_or(v, |c| c.apply(v)))
        .collect()
}

// ---------------------------------------------------------------------------
// Model zoo

pub const BUILTIN_MODELS: [&str; 4] = ["lorenz", "circuit", "hes1", "hyperchaos4d"];

/// Text form of a built-in model, parseable by [`crate::dsl::parse_model`].
pub fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "lorenz" => include_str!("../models/lorenz.ode"),
        "circuit" => include_str!("../models/circuit.ode"),
        "hes1" => include_str!("../models/hes1.ode"),
        "hyperchaos4d" => include_str!("../models/hyperchaos4d.ode"),
        _ => return None,
    })
}

pub fn builtin(name: &str) -> Result<ModelSystem> {
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match name {
        "lorenz" => ModelSystem::new(
            "lorenz",
            strings(&["x", "y", "z"]),
            vec![
                ParamSpec::new("sigma", Some(10.0)),
                ParamSpec::new("rho", Some(28.0)),
                ParamSpec::new("beta", Some(8.0 / 3.0)),
            ],
            vec![0.0, 1.0, 0.0],
            0.01,
            Arc::new(Lorenz),
        ),
        "circuit" => ModelSystem::new(
            "circuit",
            strings(&["x", "y", "z"]),
            vec![
                ParamSpec::new("a", None),
                ParamSpec::new("eps", None),
                ParamSpec::new("b", None),
                ParamSpec::new("c", None),
            ],
            vec![0.1, 0.1, 0.1],
            0.01,
            Arc::new(Circuit),
        ),
        "hes1" => ModelSystem::new(
            "hes1",
            strings(&["M", "P1", "P2"]),
            vec![
                ParamSpec::new("k_deg", Some(0.03)),
                ParamSpec::new("P0", Some(HES1_DEFAULTS[0])),
                ParamSpec::new("nu", Some(HES1_DEFAULTS[1])),
                ParamSpec::new("k1", Some(HES1_DEFAULTS[2])),
                ParamSpec::new("h", Some(HES1_DEFAULTS[3])),
            ],
            vec![2.0, 2.0, 2.0],
            0.5,
            Arc::new(Hes1),
        ),
        "hyperchaos4d" => ModelSystem::new(
            "hyperchaos4d",
            strings(&["x1", "x2", "x3", "x4"]),
            ["a", "b", "c", "d", "e", "f"]
                .iter()
                .zip(HYPERCHAOS_DEFAULTS)
                .map(|(n, v)| ParamSpec::new(n, Some(v)))
                .collect(),
            vec![1.0, 1.0, 1.0, 1.0],
            0.001,
            Arc::new(Hyperchaos4d),
        ),
        _ => Err(Error::UnknownModel {
            name: name.to_string(),
            available: BUILTIN_MODELS.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

/// (P0, nu, k1, h): an oscillatory operating point with k_deg = 0.03.
const HES1_DEFAULTS: [f64; 4] = [1.0, 1.0, 0.005, 10.0];

/// (a, b, c, d, e, f) of the four-wing hyperchaotic system in its originally
/// published regime.
const HYPERCHAOS_DEFAULTS: [f64; 6] = [50.0, 24.0, 13.0, 8.0, 33.0, 30.0];

// The expression order in each rhs matches the textual model files under
// `models/` so that parsed and built-in models produce bit-identical values.

#[derive(Debug)]
struct Lorenz;

impl VectorField for Lorenz {
    fn rhs(&self, _t: f64, y: &[f64], p: &[f64], dy: &mut [f64]) -> Result<()> {
        let (x, yy, z) = (y[0], y[1], y[2]);
        let (sigma, rho, beta) = (p[0], p[1], p[2]);
        dy[0] = sigma * (yy - x);
        dy[1] = x * (rho - z) - yy;
        dy[2] = x * yy - beta * z;
        Ok(())
    }

    fn jacobian(&self, _t: f64, y: &[f64], p: &[f64], jac: &mut [f64]) -> Result<()> {
        let (x, yy, z) = (y[0], y[1], y[2]);
        let (sigma, rho, beta) = (p[0], p[1], p[2]);
        jac.copy_from_slice(&[
            -sigma, sigma, 0.0, //
            rho - z, -1.0, -x, //
            yy, x, -beta,
        ]);
        Ok(())
    }
}

/// `ẋ = y`, `ẏ = a·y − x − z`, `ε·ż = b + y − c(eᶻ − 1)`.
#[derive(Debug)]
struct Circuit;

impl VectorField for Circuit {
    fn rhs(&self, _t: f64, y: &[f64], p: &[f64], dy: &mut [f64]) -> Result<()> {
        let (x, yy, z) = (y[0], y[1], y[2]);
        let (a, eps, b, c) = (p[0], p[1], p[2], p[3]);
        dy[0] = yy;
        dy[1] = a * yy - x - z;
        dy[2] = (b + yy - c * (z.exp() - 1.0)) / eps;
        Ok(())
    }

    fn jacobian(&self, _t: f64, y: &[f64], p: &[f64], jac: &mut [f64]) -> Result<()> {
        let z = y[2];
        let (a, eps, c) = (p[0], p[1], p[3]);
        jac.copy_from_slice(&[
            0.0, 1.0, 0.0, //
            -1.0, a, -1.0, //
            0.0, 1.0 / eps, -c * z.exp() / eps,
        ]);
        Ok(())
    }
}

#[derive(Debug)]
struct Hes1;

impl VectorField for Hes1 {
    fn rhs(&self, _t: f64, y: &[f64], p: &[f64], dy: &mut [f64]) -> Result<()> {
        let (m, p1, p2) = (y[0], y[1], y[2]);
        let (k_deg, p0, nu, k1, h) = (p[0], p[1], p[2], p[3], p[4]);
        dy[0] = -k_deg * m + 1.0 / (1.0 + (p2 / p0).powf(h));
        dy[1] = -k_deg * p1 + nu * m - k1 * p1;
        dy[2] = -k_deg * p2 + k1 * p1;
        Ok(())
    }

    fn jacobian(&self, _t: f64, y: &[f64], p: &[f64], jac: &mut [f64]) -> Result<()> {
        let p2 = y[2];
        let (k_deg, p0, nu, k1, h) = (p[0], p[1], p[2], p[3], p[4]);
        let ratio = p2 / p0;
        let denom = 1.0 + ratio.powf(h);
        let dhill = -h * ratio.powf(h - 1.0) / p0 / (denom * denom);
        jac.copy_from_slice(&[
            -k_deg, 0.0, dhill, //
            nu, -k_deg - k1, 0.0, //
            0.0, k1, -k_deg,
        ]);
        Ok(())
    }
}

#[derive(Debug)]
struct Hyperchaos4d;

impl VectorField for Hyperchaos4d {
    fn rhs(&self, _t: f64, y: &[f64], p: &[f64], dy: &mut [f64]) -> Result<()> {
        let (x1, x2, x3, x4) = (y[0], y[1], y[2], y[3]);
        let (a, b, c, d, e, f) = (p[0], p[1], p[2], p[3], p[4], p[5]);
        dy[0] = a * (x2 - x1) + x2 * x3;
        dy[1] = b * (x1 + x2) - x1 * x3;
        dy[2] = -c * x3 - e * x4 + x1 * x2;
        dy[3] = -d * x4 + f * x3 + x1 * x2;
        Ok(())
    }

    fn jacobian(&self, _t: f64, y: &[f64], p: &[f64], jac: &mut [f64]) -> Result<()> {
        let (x1, x2, x3) = (y[0], y[1], y[2]);
        let (a, b, c, d, e, f) = (p[0], p[1], p[2], p[3], p[4], p[5]);
        jac.copy_from_slice(&[
            -a, a + x3, x2, 0.0, //
            b - x3, b, -x1, 0.0, //
            x2, x1, -c, -e, //
            x2, x1, f, -d,
        ]);
        Ok(())
    }
}
