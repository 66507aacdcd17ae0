//! Explicit integration of model states and of tangent frames under the
//! linearized flow.

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelSystem, VectorField};

/// Smallest step the adaptive integrator accepts before giving up.
pub const MIN_ADAPTIVE_DT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    DormandPrince,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step for rk4; initial trial step for Dormand-Prince.
    pub dt: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step_growth: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            dt: 0.01,
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_step_growth: 5.0,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Precondition(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::Precondition("tolerances must be positive".into()));
        }
        if !(self.max_step_growth > 1.0) {
            return Err(Error::Precondition("max_step_growth must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub y: Vec<f64>,
    pub t: f64,
    pub dt_used: f64,
    /// Step size the controller proposes for the next step (equal to
    /// `dt_used` for rk4).
    pub dt_next: f64,
}

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::divergence(t, y))
    }
}

/// Scratch space for the classical fourth-order Runge-Kutta step.
pub(crate) struct Rk4Scratch {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }

    pub(crate) fn step(
        &mut self,
        field: &dyn VectorField,
        p: &[f64],
        t: f64,
        dt: f64,
        y: &mut [f64],
    ) -> Result<()> {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        let half = 0.5 * dt;
        field.rhs(t, y, p, k1)?;
        axpy_into(tmp, y, half, k1);
        field.rhs(t + half, tmp, p, k2)?;
        axpy_into(tmp, y, half, k2);
        field.rhs(t + half, tmp, p, k3)?;
        axpy_into(tmp, y, dt, k3);
        field.rhs(t + dt, tmp, p, k4)?;
        let sixth = dt / 6.0;
        for i in 0..y.len() {
            y[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

#[inline]
fn axpy_into(out: &mut [f64], y: &[f64], a: f64, k: &[f64]) {
    for ((o, &yi), &ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince trial step; returns the fifth-order solution and the
/// scaled RMS error estimate.
fn dopri_trial(
    field: &dyn VectorField,
    p: &[f64],
    t: f64,
    dt: f64,
    y: &[f64],
    config: &IntegratorConfig,
) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    for s in 0..7 {
        for i in 0..n {
            let mut acc = y[i];
            for (j, kj) in k.iter().enumerate().take(s) {
                acc += dt * DP_A[s][j] * kj[i];
            }
            tmp[i] = acc;
        }
        field.rhs(t + DP_C[s] * dt, &tmp, p, &mut k[s])?;
    }
    let mut y5 = y.to_vec();
    let mut err_sq = 0.0;
    for i in 0..n {
        let mut hi = 0.0;
        let mut lo = 0.0;
        for s in 0..7 {
            hi += DP_B5[s] * k[s][i];
            lo += DP_B4[s] * k[s][i];
        }
        y5[i] += dt * hi;
        let scale = config.abs_tol + config.rel_tol * y[i].abs().max(y5[i].abs());
        let e = dt * (hi - lo) / scale;
        err_sq += e * e;
    }
    Ok((y5, (err_sq / n as f64).sqrt()))
}

/// One explicit step from `(y, t)`.
///
/// rk4 takes exactly `config.dt`. Dormand-Prince starts from `config.dt` and
/// shrinks the step until the embedded error estimate is within tolerance.
pub fn step(
    model: &ModelSystem,
    y: &[f64],
    theta: &[f64],
    t: f64,
    config: &IntegratorConfig,
) -> Result<StepOutcome> {
    config.validate()?;
    Error::check_len("state", y.len(), model.dim())?;
    Error::check_len("parameter vector", theta.len(), model.params().len())?;
    check_finite(t, y)?;
    step_unchecked(model.field(), y, theta, t, config.dt, config)
}

fn step_unchecked(
    field: &dyn VectorField,
    y: &[f64],
    theta: &[f64],
    t: f64,
    dt: f64,
    config: &IntegratorConfig,
) -> Result<StepOutcome> {
    match config.method {
        Method::Rk4 => {
            let mut out = y.to_vec();
            Rk4Scratch::new(y.len()).step(field, theta, t, dt, &mut out)?;
            check_finite(t + dt, &out)?;
            Ok(StepOutcome {
                y: out,
                t: t + dt,
                dt_used: dt,
                dt_next: dt,
            })
        }
        Method::DormandPrince => {
            let mut h = dt;
            loop {
                if h < MIN_ADAPTIVE_DT {
                    return Err(Error::Stiffness { t, dt: h });
                }
                let (y5, err) = dopri_trial(field, theta, t, h, y, config)?;
                if err.is_finite() && err <= 1.0 {
                    check_finite(t + h, &y5)?;
                    let factor = if err == 0.0 {
                        config.max_step_growth
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, config.max_step_growth)
                    };
                    return Ok(StepOutcome {
                        y: y5,
                        t: t + h,
                        dt_used: h,
                        dt_next: h * factor,
                    });
                }
                let factor = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 0.5)
                } else {
                    0.1
                };
                h *= factor;
            }
        }
    }
}

/// Sampled solution `(tᵢ, yᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Componentwise (min, max) over all samples.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let n = self.states.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| {
                self.states.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    (lo.min(s[i]), hi.max(s[i]))
                })
            })
            .collect()
    }

    /// CSV with header `t,<state names>` and one row per sample.
    pub fn write_csv<W: io::Write>(&self, state_names: &[String], mut out: W) -> io::Result<()> {
        write!(out, "t")?;
        for name in state_names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for (t, y) in self.times.iter().zip(&self.states) {
            write!(out, "{t}")?;
            for v in y {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Integrates from `t0` to `t1`, recording every `sample_every`-th step and
/// always both endpoints.
///
/// rk4 places step `i` at `t0 + i·dt`; the final step is shortened so the
/// last sample lands exactly on `t1`.
pub fn integrate(
    model: &ModelSystem,
    y0: &[f64],
    theta: &[f64],
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
    sample_every: usize,
) -> Result<Trajectory> {
    config.validate()?;
    Error::check_len("initial state", y0.len(), model.dim())?;
    Error::check_len("parameter vector", theta.len(), model.params().len())?;
    if !(t1 >= t0) {
        return Err(Error::Precondition(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    if sample_every == 0 {
        return Err(Error::Precondition("sample_every must be at least 1".into()));
    }
    check_finite(t0, y0)?;

    let field = model.field();
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y0.to_vec()],
    };
    if t1 == t0 {
        return Ok(traj);
    }

    let mut y = y0.to_vec();
    match config.method {
        Method::Rk4 => {
            let span = t1 - t0;
            let steps = ((span / config.dt) - 1e-9).ceil().max(1.0) as usize;
            let mut scratch = Rk4Scratch::new(y.len());
            for i in 0..steps {
                let t = t0 + i as f64 * config.dt;
                let t_next = if i + 1 == steps {
                    t1
                } else {
                    t0 + (i + 1) as f64 * config.dt
                };
                scratch.step(field, theta, t, t_next - t, &mut y)?;
                check_finite(t_next, &y)?;
                if (i + 1).is_multiple_of(sample_every) || i + 1 == steps {
                    traj.times.push(t_next);
                    traj.states.push(y.clone());
                }
            }
        }
        Method::DormandPrince => {
            let mut t = t0;
            let mut h = config.dt;
            let mut count = 0usize;
            while t < t1 {
                let last = t + h >= t1;
                let trial = if last { t1 - t } else { h };
                let out = step_unchecked(field, &y, theta, t, trial, config)?;
                y = out.y;
                let landed = last && out.dt_used == trial;
                t = if landed { t1 } else { out.t };
                h = out.dt_next;
                count += 1;
                if count.is_multiple_of(sample_every) || t >= t1 {
                    traj.times.push(t);
                    traj.states.push(y.clone());
                }
            }
        }
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Tangent dynamics

/// `k` tangent vectors of an `n`-dimensional system, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl TangentFrame {
    /// The first `k` canonical basis vectors.
    pub fn identity(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Precondition(format!(
                "a tangent frame needs 1 <= k <= n, got k = {k}, n = {n}"
            )));
        }
        let mut data = vec![0.0; n * k];
        for j in 0..k {
            data[j * n + j] = 1.0;
        }
        Ok(Self { n, k, data })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if k == 0 || k > n {
            return Err(Error::Precondition(format!(
                "a tangent frame needs 1 <= k <= n, got k = {k}, n = {n}"
            )));
        }
        let mut data = Vec::with_capacity(n * k);
        for c in columns {
            Error::check_len("tangent vector", c.len(), n)?;
            data.extend_from_slice(c);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("tangent frame has non-finite entries".into()));
        }
        Ok(Self { n, k, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.k
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|j| self.column(j).to_vec()).collect()
    }

    pub(crate) fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn from_raw(n: usize, k: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * k);
        Self { n, k, data }
    }
}

/// rk4 on the augmented system `(y, ε₁..ε_k)` with `dεᵢ/dt = Df(y)·εᵢ`.
///
/// Every stage evaluates the Jacobian at that stage's state, so the state and
/// the tangents advance as one ODE with one step size.
pub(crate) struct AugmentedStepper {
    n: usize,
    k: usize,
    ky: [Vec<f64>; 4],
    kv: [Vec<f64>; 4],
    y_tmp: Vec<f64>,
    v_tmp: Vec<f64>,
    jac: Vec<f64>,
}

impl AugmentedStepper {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            ky: std::array::from_fn(|_| vec![0.0; n]),
            kv: std::array::from_fn(|_| vec![0.0; n * k]),
            y_tmp: vec![0.0; n],
            v_tmp: vec![0.0; n * k],
            jac: vec![0.0; n * n],
        }
    }

    fn stage(
        &mut self,
        field: &dyn VectorField,
        p: &[f64],
        t: f64,
        stage: usize,
        from_tmp: bool,
        y: &[f64],
        v: &[f64],
    ) -> Result<()> {
        let (ys, vs) = if from_tmp {
            (&self.y_tmp[..], &self.v_tmp[..])
        } else {
            (y, v)
        };
        field.rhs(t, ys, p, &mut self.ky[stage])?;
        field.jacobian(t, ys, p, &mut self.jac)?;
        let (n, k) = (self.n, self.k);
        let out = &mut self.kv[stage];
        for c in 0..k {
            let col = &vs[c * n..(c + 1) * n];
            for i in 0..n {
                let row = &self.jac[i * n..(i + 1) * n];
                let mut acc = 0.0;
                for j in 0..n {
                    acc += row[j] * col[j];
                }
                out[c * n + i] = acc;
            }
        }
        Ok(())
    }

    fn prepare(&mut self, y: &[f64], v: &[f64], a: f64, stage: usize) {
        axpy_into(&mut self.y_tmp, y, a, &self.ky[stage]);
        axpy_into(&mut self.v_tmp, v, a, &self.kv[stage]);
    }

    pub(crate) fn step(
        &mut self,
        field: &dyn VectorField,
        p: &[f64],
        t: f64,
        dt: f64,
        y: &mut [f64],
        v: &mut [f64],
    ) -> Result<()> {
        let half = 0.5 * dt;
        self.stage(field, p, t, 0, false, y, v)?;
        self.prepare(y, v, half, 0);
        self.stage(field, p, t + half, 1, true, y, v)?;
        self.prepare(y, v, half, 1);
        self.stage(field, p, t + half, 2, true, y, v)?;
        self.prepare(y, v, dt, 2);
        self.stage(field, p, t + dt, 3, true, y, v)?;
        let sixth = dt / 6.0;
        let [k1, k2, k3, k4] = &self.ky;
        for i in 0..y.len() {
            y[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let [k1, k2, k3, k4] = &self.kv;
        for i in 0..v.len() {
            v[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

/// Advances the state and every tangent vector by one rk4 step of size `dt`.
pub fn step_augmented(
    model: &ModelSystem,
    y: &[f64],
    frame: &TangentFrame,
    theta: &[f64],
    t: f64,
    dt: f64,
) -> Result<(Vec<f64>, TangentFrame)> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    Error::check_len("state", y.len(), model.dim())?;
    Error::check_len("tangent frame dimension", frame.dim(), model.dim())?;
    Error::check_len("parameter vector", theta.len(), model.params().len())?;
    let mut y_next = y.to_vec();
    let mut v = frame.data().to_vec();
    AugmentedStepper::new(frame.dim(), frame.count()).step(
        model.field(),
        theta,
        t,
        dt,
        &mut y_next,
        &mut v,
    )?;
    check_finite(t + dt, &y_next)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::divergence(t + dt, &y_next));
    }
    Ok((y_next, TangentFrame::from_raw(frame.dim(), frame.count(), v)))
}
