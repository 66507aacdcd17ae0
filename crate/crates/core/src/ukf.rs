//! Scaled sigma-point unscented Kalman filter for static parameter
//! estimation.
//!
//! The parameters follow a random walk `θₖ = θₖ₋₁ + vₖ` and are observed
//! through an arbitrary nonlinear map `yₖ = g(θₖ) + uₖ`. Process noise (the
//! random-walk covariance) is added at the predict step; measurement noise is
//! added to the predicted-observation covariance at the update step.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jitter schedule for [`cholesky_psd`], as multiples of `trace(M)/L`.
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UtParams {
    /// `λ = α²(L + κ) − L`.
    pub fn lambda(&self, l: usize) -> f64 {
        let l = l as f64;
        self.alpha * self.alpha * (l + self.kappa) - l
    }

    pub fn validate(&self, l: usize) -> Result<()> {
        if l == 0 {
            return Err(Error::Precondition("parameter dimension must be at least 1".into()));
        }
        let radius = l as f64 + self.lambda(l);
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Precondition(format!(
                "L + lambda = {radius} must be positive (alpha = {}, kappa = {})",
                self.alpha, self.kappa
            )));
        }
        Ok(())
    }

    /// `(w_mean, w_cov)` for `2L + 1` points.
    pub fn weights(&self, l: usize) -> (Vec<f64>, Vec<f64>) {
        let lambda = self.lambda(l);
        let denom = l as f64 + lambda;
        let side = 1.0 / (2.0 * denom);
        let mut w_mean = vec![side; 2 * l + 1];
        let mut w_cov = vec![side; 2 * l + 1];
        w_mean[0] = lambda / denom;
        w_cov[0] = lambda / denom + (1.0 - self.alpha * self.alpha + self.beta);
        (w_mean, w_cov)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub w_mean: Vec<f64>,
    pub w_cov: Vec<f64>,
}

impl SigmaPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weighted_mean(&self) -> DVector<f64> {
        weighted_mean(&self.points, &self.w_mean)
    }

    /// `Σ w_cov·(Θᵢ − mean)(Θᵢ − mean)ᵀ`.
    pub fn weighted_covariance(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let l = mean.len();
        let mut cov = DMatrix::zeros(l, l);
        for (p, &w) in self.points.iter().zip(&self.w_cov) {
            let d = p - mean;
            cov.ger(w, &d, &d, 1.0);
        }
        cov
    }
}

fn weighted_mean(points: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let mut mean = DVector::zeros(points[0].len());
    for (p, &w) in points.iter().zip(weights) {
        mean.axpy(w, p, 1.0);
    }
    mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    /// Posterior parameter mean.
    pub mean: DVector<f64>,
    /// Posterior parameter covariance.
    pub cov: DMatrix<f64>,
    /// Diagonal of the random-walk covariance added at predict.
    pub process_noise: DVector<f64>,
    /// Diagonal of the covariance added to the predicted-observation spread.
    pub measurement_noise: DVector<f64>,
    pub iteration: usize,
}

impl FilterState {
    pub fn new(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        process_noise: DVector<f64>,
        measurement_noise: DVector<f64>,
    ) -> Result<Self> {
        let l = mean.len();
        if cov.nrows() != l || cov.ncols() != l {
            return Err(Error::Dimension {
                what: "covariance",
                got: cov.nrows(),
                expected: l,
            });
        }
        Error::check_len("process noise", process_noise.len(), l)?;
        if process_noise.iter().chain(measurement_noise.iter()).any(|v| !(*v >= 0.0)) {
            return Err(Error::Precondition("noise variances must be non-negative".into()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("initial mean must be finite".into()));
        }
        Ok(Self {
            mean,
            cov,
            process_noise,
            measurement_noise,
            iteration: 0,
        })
    }
}

/// Prior moments after the predict step.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Diagonal process noise with each entry at the magnitude of the matching
/// initial parameter, times `scale`. Zero parameters get `scale`.
pub fn process_noise_from_initial(theta0: &[f64], scale: f64) -> DVector<f64> {
    DVector::from_iterator(
        theta0.len(),
        theta0.iter().map(|v| {
            let mag = v.abs();
            scale * if mag > 0.0 { mag } else { 1.0 }
        }),
    )
}

/// Lower Cholesky factor of a symmetric positive semi-definite matrix.
///
/// On failure the diagonal is loaded with `c·trace(M)/L`, `c` escalating
/// from 1e-12 to 1e-6 by factors of ten. A zero matrix factors to zero.
pub fn cholesky_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = m.nrows();
    if l != m.ncols() {
        return Err(Error::Covariance("matrix is not square".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Covariance("matrix has non-finite entries".into()));
    }
    if let Some(c) = nalgebra::Cholesky::new(m.clone()) {
        return Ok(c.l());
    }
    if m.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(l, l));
    }
    let scale = m.trace() / l as f64;
    if !(scale > 0.0) {
        return Err(Error::Covariance(format!(
            "matrix is not positive semi-definite (trace {})",
            m.trace()
        )));
    }
    let mut c = JITTER_START;
    while c <= JITTER_MAX * (1.0 + 1e-9) {
        let jittered = m + DMatrix::identity(l, l) * (c * scale);
        if let Some(ch) = nalgebra::Cholesky::new(jittered) {
            return Ok(ch.l());
        }
        c *= 10.0;
    }
    Err(Error::Covariance(
        "Cholesky factorization failed after maximum jitter".into(),
    ))
}

/// `2L + 1` points: the mean, then `mean ± √(L+λ)·Lᶠ[:, i]`.
pub fn sigma_points(mean: &DVector<f64>, cov: &DMatrix<f64>, ut: &UtParams) -> Result<SigmaPointSet> {
    let l = mean.len();
    ut.validate(l)?;
    if cov.nrows() != l || cov.ncols() != l {
        return Err(Error::Dimension {
            what: "covariance",
            got: cov.nrows(),
            expected: l,
        });
    }
    let factor = cholesky_psd(cov)? * (l as f64 + ut.lambda(l)).sqrt();
    let mut points = Vec::with_capacity(2 * l + 1);
    points.push(mean.clone());
    for i in 0..l {
        points.push(mean + factor.column(i));
    }
    for i in 0..l {
        points.push(mean - factor.column(i));
    }
    let (w_mean, w_cov) = ut.weights(l);
    Ok(SigmaPointSet {
        points,
        w_mean,
        w_cov,
    })
}

/// Random-walk prediction: mean unchanged, covariance inflated by the
/// process noise.
pub fn predict(state: &FilterState) -> Prior {
    let mut cov = state.cov.clone();
    for (i, q) in state.process_noise.iter().enumerate() {
        cov[(i, i)] += q;
    }
    Prior {
        mean: state.mean.clone(),
        cov,
    }
}

/// Quantities computed during an update, kept for tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    pub predicted_observation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Measurement update given the observations `Y[i] = g(Θᵢ)`.
pub fn update_with_observations(
    state: &FilterState,
    prior: &Prior,
    sigma: &SigmaPointSet,
    observations: &[DVector<f64>],
    target: &DVector<f64>,
) -> Result<(FilterState, UpdateDiagnostics)> {
    let m = target.len();
    Error::check_len("observations", observations.len(), sigma.len())?;
    Error::check_len("measurement noise", state.measurement_noise.len(), m)?;
    for y in observations {
        Error::check_len("observation", y.len(), m)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Observation);
        }
    }
    let l = prior.mean.len();
    let y_hat = weighted_mean(observations, &sigma.w_mean);

    let mut p_yy = DMatrix::from_diagonal(&state.measurement_noise);
    let mut p_ty = DMatrix::zeros(l, m);
    for ((theta, y), &w) in sigma.points.iter().zip(observations).zip(&sigma.w_cov) {
        let dy = y - &y_hat;
        let dt = theta - &prior.mean;
        p_yy.ger(w, &dy, &dy, 1.0);
        p_ty.ger(w, &dt, &dy, 1.0);
    }
    let p_yy = (&p_yy + p_yy.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(p_yy.clone()).ok_or_else(|| {
        Error::Covariance("predicted observation covariance is not positive definite".into())
    })?;
    // K = P_θy · P_yy⁻¹, solved as P_yy · Kᵀ = P_θyᵀ.
    let gain = chol.solve(&p_ty.transpose()).transpose();

    let mean = &prior.mean + &gain * (target - &y_hat);
    let cov = &prior.cov - &gain * &p_yy * gain.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Covariance("posterior is not finite".into()));
    }
    Ok((
        FilterState {
            mean,
            cov,
            process_noise: state.process_noise.clone(),
            measurement_noise: state.measurement_noise.clone(),
            iteration: state.iteration + 1,
        },
        UpdateDiagnostics {
            predicted_observation: y_hat,
            innovation_cov: p_yy,
            gain,
        },
    ))
}

/// Measurement update evaluating `obs_fn` on every sigma point (in
/// parallel; results are combined in index order).
pub fn update<F>(
    state: &FilterState,
    prior: &Prior,
    sigma: &SigmaPointSet,
    obs_fn: F,
    target: &DVector<f64>,
) -> Result<FilterState>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    let observations: Vec<DVector<f64>> = sigma.points.par_iter().map(&obs_fn).collect();
    update_with_observations(state, prior, sigma, &observations, target).map(|(s, _)| s)
}

/// One predict/update cycle.
pub fn iterate<F>(state: &FilterState, ut: &UtParams, obs_fn: F, target: &DVector<f64>) -> Result<FilterState>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    let prior = predict(state);
    let sigma = sigma_points(&prior.mean, &prior.cov, ut)?;
    update(state, &prior, &sigma, obs_fn, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(mean: &[f64], cov: DMatrix<f64>, q: f64, r: f64, m: usize) -> FilterState {
        let l = mean.len();
        FilterState::new(
            DVector::from_column_slice(mean),
            cov,
            DVector::from_element(l, q),
            DVector::from_element(m, r),
        )
        .unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_eq!(cholesky_psd(&i).unwrap(), i);
    }

    #[test]
    fn cholesky_by_hand() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let l = cholesky_psd(&m).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert!((l - expected).abs().max() < 1e-15);
    }

    #[test]
    fn cholesky_semidefinite_gets_jitter() {
        // Rank one: needs diagonal loading to factor.
        let v = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        let l = cholesky_psd(&m).unwrap();
        assert!((&l * l.transpose() - &m).abs().max() < 1e-5);
    }

    #[test]
    fn cholesky_indefinite_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_psd(&m), Err(Error::Covariance(_))));
    }

    #[test]
    fn sigma_points_scalar_example() {
        let ut = UtParams {
            alpha: 1.0,
            beta: 2.0,
            kappa: 0.0,
        };
        let s = sigma_points(&DVector::from_element(1, 0.0), &DMatrix::identity(1, 1), &ut).unwrap();
        let pts: Vec<f64> = s.points.iter().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.0, 1.0, -1.0]);
        assert_eq!(s.w_mean, vec![0.0, 0.5, 0.5]);
        assert_eq!(s.w_cov, vec![2.0, 0.5, 0.5]);
    }

    #[test]
    fn sigma_points_degenerate_covariance() {
        let mean = DVector::from_column_slice(&[1.0, -2.0]);
        let s = sigma_points(&mean, &DMatrix::zeros(2, 2), &UtParams::default()).unwrap();
        assert!(s.points.iter().all(|p| p == &mean));
    }

    #[test]
    fn sigma_points_reject_nonpositive_radius() {
        let ut = UtParams {
            alpha: 1.0,
            beta: 2.0,
            kappa: -3.0,
        };
        let err = sigma_points(&DVector::zeros(3), &DMatrix::identity(3, 3), &ut);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn predict_adds_process_noise() {
        let s = state(&[1.0, 2.0], DMatrix::identity(2, 2), 0.01, 0.01, 1);
        let prior = predict(&s);
        assert_eq!(prior.mean, s.mean);
        assert!((prior.cov - DMatrix::identity(2, 2) * 1.01).abs().max() < 1e-15);

        let s = state(&[1.0, 2.0], DMatrix::identity(2, 2), 0.0, 0.01, 1);
        assert_eq!(predict(&s).cov, s.cov);
    }

    #[test]
    fn process_noise_tracks_parameter_magnitude() {
        let q = process_noise_from_initial(&[10.0, 28.0, 8.0 / 3.0, 0.0], 1.0);
        for (qi, theta) in q.iter().zip([10.0, 28.0, 8.0 / 3.0, 1.0]) {
            let ratio = qi / theta;
            assert!((0.1..=10.0).contains(&ratio));
        }
    }

    #[test]
    fn uninformative_observation_leaves_prior() {
        let s = state(&[0.5, -1.0], DMatrix::identity(2, 2), 0.0, 0.1, 1);
        let prior = predict(&s);
        let sigma = sigma_points(&prior.mean, &prior.cov, &UtParams::default()).unwrap();
        let post = update(&s, &prior, &sigma, |_| DVector::from_element(1, 3.0), &DVector::from_element(1, 0.0))
            .unwrap();
        assert!((post.mean - prior.mean).abs().max() < 1e-12);
        assert!((post.cov - prior.cov).abs().max() < 1e-12);
    }

    #[test]
    fn linear_update_matches_kalman_formula() {
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -0.2, 0.0, 2.0, 1.0]);
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let r = DVector::from_column_slice(&[0.1, 0.3]);
        let mean = DVector::from_column_slice(&[1.0, -1.0, 0.5]);
        let target = DVector::from_column_slice(&[0.7, 2.0]);
        let s = FilterState::new(mean.clone(), p.clone(), DVector::zeros(3), r.clone()).unwrap();
        let prior = predict(&s);
        let sigma = sigma_points(&prior.mean, &prior.cov, &UtParams::default()).unwrap();
        let post = update(&s, &prior, &sigma, |th| &h * th, &target).unwrap();

        let s_mat = &h * &p * h.transpose() + DMatrix::from_diagonal(&r);
        let k = &p * h.transpose() * s_mat.clone().try_inverse().unwrap();
        let mean_ref = &mean + &k * (&target - &h * &mean);
        let cov_ref = &p - &k * &s_mat * k.transpose();
        assert!((post.mean - mean_ref).abs().max() < 1e-8);
        assert!((post.cov - cov_ref).abs().max() < 1e-8);
    }

    #[test]
    fn posterior_is_symmetric() {
        let s = state(&[1.0, 2.0, 3.0], DMatrix::identity(3, 3), 0.5, 0.01, 2);
        let next = iterate(
            &s,
            &UtParams::default(),
            |th| DVector::from_column_slice(&[th[0] * th[1], th[2].sin()]),
            &DVector::from_column_slice(&[1.0, 0.0]),
        )
        .unwrap();
        assert!((&next.cov - next.cov.transpose()).abs().max() <= 1e-12);
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn non_finite_observations_are_rejected() {
        let s = state(&[1.0], DMatrix::identity(1, 1), 0.0, 0.01, 1);
        let err = iterate(&s, &UtParams::default(), |_| DVector::from_element(1, f64::NAN), &DVector::zeros(1));
        assert!(matches!(err, Err(Error::Observation)));
    }
}
