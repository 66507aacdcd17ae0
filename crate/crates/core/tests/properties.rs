mod common;

use common::relative_max_diff;
use lyapinf::lyapunov::{classify, gram_schmidt, AttractorClass, LyapunovSpectrum};
use lyapinf::models::{apply_constraint, builtin, finite_diff_jacobian, BoxMode, Constraint, ConstraintMap};
use lyapinf::odeint::TangentFrame;
use lyapinf::ukf::{
    cholesky_psd, iterate, predict, sigma_points, update_with_observations, FilterState, UtParams,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

fn random_spd(rng: &mut ChaCha8Rng, l: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, l, l);
    &a * a.transpose() + DMatrix::identity(l, l) * 1e-3
}

fn frame_matrix(f: &TangentFrame) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = f.columns().into_iter().map(DVector::from_vec).collect();
    DMatrix::from_columns(&cols)
}

// ---------------------------------------------------------------------------
// Gram-Schmidt

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gram_schmidt_is_orthonormal_and_keeps_leading_spans(seed in any::<u64>(), n in 1usize..=8, extra in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1 + extra % n;
        let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
        let frame = TangentFrame::from_columns(&cols).unwrap();
        let (q, norms) = gram_schmidt(&frame).unwrap();
        let qm = frame_matrix(&q);
        let residual = (qm.transpose() * &qm - DMatrix::identity(k, k)).abs().max();
        prop_assert!(residual < 1e-12, "orthonormality residual {residual}");
        prop_assert!(norms.iter().all(|g| *g > 0.0));

        // Column j of the input lies in the span of the first j+1 outputs.
        for (j, c) in cols.iter().enumerate() {
            let c = DVector::from_column_slice(c);
            let basis = qm.columns(0, j + 1);
            let proj = basis * (basis.transpose() * &c);
            let rel = (&c - proj).norm() / c.norm();
            prop_assert!(rel < 1e-10, "span residual {rel} at column {j}");
        }
    }
}

// ---------------------------------------------------------------------------
// Sigma points

fn ut_choices(l: usize) -> Vec<UtParams> {
    let mut out = Vec::new();
    for alpha in [1e-2, 1e-1, 1.0] {
        for kappa in [0.0, 3.0 - l as f64] {
            out.push(UtParams { alpha, beta: 2.0, kappa });
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn sigma_points_reconstruct_moments(seed in any::<u64>(), l in 1usize..=10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = DVector::from_fn(l, |_, _| 10.0 * normal(&mut rng));
        let p = random_spd(&mut rng, l);
        for ut in ut_choices(l) {
            let lambda = ut.lambda(l);
            let s = sigma_points(&mean, &p, &ut).unwrap();
            prop_assert_eq!(s.len(), 2 * l + 1);
            prop_assert!((s.w_mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let side: f64 = s.w_mean[1..].iter().sum();
            prop_assert!((side - (1.0 - lambda / (l as f64 + lambda))).abs() < 1e-9 * side.abs().max(1.0));

            let m = s.weighted_mean();
            let scale = mean.amax().max(1.0);
            prop_assert!((&m - &mean).amax() < 1e-10 * scale * s.w_mean[0].abs().max(1.0));
            let cov = s.weighted_covariance(&mean);
            prop_assert!((&cov - &p).amax() < 1e-10 * p.amax(), "alpha {} kappa {}", ut.alpha, ut.kappa);
        }
    }

    #[test]
    fn cholesky_round_trip(seed in any::<u64>(), l in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_spd(&mut rng, l);
        let f = cholesky_psd(&m).unwrap();
        prop_assert!((&f * f.transpose() - &m).amax() < 1e-12 * m.amax());
        for i in 0..l {
            for j in i + 1..l {
                prop_assert_eq!(f[(i, j)], 0.0);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Filter update

fn filter_state(rng: &mut ChaCha8Rng, l: usize, m: usize) -> FilterState {
    FilterState::new(
        DVector::from_fn(l, |_, _| normal(rng)),
        random_spd(rng, l),
        DVector::from_fn(l, |_, _| rng.gen_range(0.0..0.1)),
        DVector::from_fn(m, |_, _| rng.gen_range(0.01..0.1)),
    )
    .unwrap()
}

fn nonlinear_obs(theta: &DVector<f64>, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |i, _| {
        theta.iter().enumerate().map(|(j, t)| ((i + j + 1) as f64 * t).sin() + 0.1 * t * t).sum()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn update_ignores_sigma_point_order(seed in any::<u64>(), l in 1usize..=6, m in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = filter_state(&mut rng, l, m);
        let target = DVector::from_fn(m, |_, _| normal(&mut rng));
        let ut = UtParams { alpha: 0.5, beta: 2.0, kappa: 0.0 };
        let prior = predict(&state);
        let sigma = sigma_points(&prior.mean, &prior.cov, &ut).unwrap();
        let obs: Vec<DVector<f64>> = sigma.points.iter().map(|p| nonlinear_obs(p, m)).collect();
        let (a, _) = update_with_observations(&state, &prior, &sigma, &obs, &target).unwrap();

        let mut order: Vec<usize> = (1..sigma.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        order.insert(0, 0);
        let mut shuffled = sigma.clone();
        shuffled.points = order.iter().map(|&i| sigma.points[i].clone()).collect();
        shuffled.w_mean = order.iter().map(|&i| sigma.w_mean[i]).collect();
        shuffled.w_cov = order.iter().map(|&i| sigma.w_cov[i]).collect();
        let obs_shuffled: Vec<DVector<f64>> = order.iter().map(|&i| obs[i].clone()).collect();
        let (b, _) = update_with_observations(&state, &prior, &shuffled, &obs_shuffled, &target).unwrap();

        prop_assert!((&a.mean - &b.mean).amax() < 1e-12 * a.mean.amax().max(1.0));
        prop_assert!((&a.cov - &b.cov).amax() < 1e-12 * a.cov.amax().max(1.0));
        prop_assert_eq!(&a.cov, &a.cov.transpose());
    }

    #[test]
    fn linear_update_matches_kalman_formula(seed in any::<u64>(), l in 1usize..=5, m in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = filter_state(&mut rng, l, m);
        let h = random_matrix(&mut rng, m, l);
        let target = DVector::from_fn(m, |_, _| normal(&mut rng));
        let ut = UtParams { alpha: 0.3, beta: 2.0, kappa: 0.0 };
        let prior = predict(&state);
        let sigma = sigma_points(&prior.mean, &prior.cov, &ut).unwrap();
        let obs: Vec<DVector<f64>> = sigma.points.iter().map(|p| &h * p).collect();
        let (post, _) = update_with_observations(&state, &prior, &sigma, &obs, &target).unwrap();

        let s = &h * &prior.cov * h.transpose() + DMatrix::from_diagonal(&state.measurement_noise);
        let k = &prior.cov * h.transpose() * s.try_inverse().unwrap();
        let mean = &prior.mean + &k * (&target - &h * &prior.mean);
        let cov = &prior.cov - &k * &h * &prior.cov;
        prop_assert!((&post.mean - &mean).amax() < 1e-8 * mean.amax().max(1.0));
        prop_assert!((&post.cov - &cov).amax() < 1e-8 * cov.amax().max(1.0));
    }

    #[test]
    fn uninformative_observation_keeps_prior(seed in any::<u64>(), l in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = filter_state(&mut rng, l, 2);
        let ut = UtParams::default();
        let prior = predict(&state);
        let sigma = sigma_points(&prior.mean, &prior.cov, &ut).unwrap();
        let obs = vec![DVector::from_column_slice(&[1.0, -2.0]); sigma.len()];
        let target = DVector::from_column_slice(&[0.5, 0.5]);
        let (post, diag) = update_with_observations(&state, &prior, &sigma, &obs, &target).unwrap();
        prop_assert!(diag.gain.amax() < 1e-15);
        prop_assert!((&post.mean - &prior.mean).amax() < 1e-14 * prior.mean.amax().max(1.0));
        prop_assert!((&post.cov - &prior.cov).amax() < 1e-15 * prior.cov.amax());
    }

    #[test]
    fn linear_filter_converges_to_least_squares(seed in any::<u64>(), l in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = DMatrix::identity(l, l) + random_matrix(&mut rng, l, l) * 0.3;
        let target = DVector::from_fn(l, |_, _| normal(&mut rng));
        let mut state = FilterState::new(
            DVector::zeros(l),
            DMatrix::identity(l, l),
            DVector::from_element(l, 0.01),
            DVector::from_element(l, 0.01),
        )
        .unwrap();
        let ut = UtParams::default();
        // Ill-conditioned H converges slowly; run to the fixed point.
        for _ in 0..20_000 {
            let next = iterate(&state, &ut, |p| &h * p, &target).unwrap();
            let step = (&next.mean - &state.mean).amax();
            state = next;
            if step < 1e-15 * state.mean.amax().max(1.0) {
                break;
            }
        }
        let ls = h.clone().svd(true, true).solve(&target, 1e-14).unwrap();
        prop_assert!((&state.mean - &ls).amax() < 1e-6 * ls.amax().max(1.0), "{} vs {}", state.mean, ls);
    }
}

// ---------------------------------------------------------------------------
// Models

fn random_draw(rng: &mut ChaCha8Rng, name: &str) -> (Vec<f64>, Vec<f64>) {
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    match name {
        "lorenz" => (
            vec![u(-30.0, 30.0), u(-30.0, 30.0), u(0.0, 50.0)],
            vec![u(1.0, 30.0), u(1.0, 30.0), u(0.5, 5.0)],
        ),
        "circuit" => (
            vec![u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0)],
            vec![u(0.1, 1.0), u(0.05, 1.0), u(0.1, 1.0), u(0.5, 2.0)],
        ),
        "hes1" => (
            vec![u(0.0, 5.0), u(0.0, 5.0), u(0.0, 5.0)],
            vec![u(0.01, 0.1), u(0.5, 5.0), u(0.5, 2.0), u(0.001, 0.1), u(1.0, 10.0)],
        ),
        "hyperchaos4d" => (
            (0..4).map(|_| u(-20.0, 20.0)).collect(),
            (0..6).map(|_| u(1.0, 50.0)).collect(),
        ),
        _ => unreachable!(),
    }
}

#[test]
fn builtin_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for name in lyapinf::BUILTIN_MODELS {
        let model = builtin(name).unwrap();
        for _ in 0..100 {
            let (y, theta) = random_draw(&mut rng, name);
            let j = model.eval_jacobian(&y, &theta).unwrap();
            let fd = finite_diff_jacobian(&model, &y, &theta, 1e-6).unwrap();
            let err = relative_max_diff(j.as_slice(), fd.as_slice());
            assert!(err < 1e-5, "{name} at y={y:?} theta={theta:?}: {err}");
        }
    }
}

#[test]
fn lorenz_jacobian_trace_is_the_divergence() {
    let model = builtin("lorenz").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (y, theta) = random_draw(&mut rng, "lorenz");
        let tr = model.eval_jacobian(&y, &theta).unwrap().trace();
        assert!((tr + theta[0] + 1.0 + theta[2]).abs() < 1e-12);
    }
}

fn constraint_strategy() -> impl Strategy<Value = Constraint> {
    prop_oneof![
        Just(Constraint::Identity),
        Just(Constraint::AbsoluteValue),
        (-50.0f64..50.0, 0.0f64..40.0, any::<bool>()).prop_map(|(lo, w, reflect)| Constraint::Box {
            lo,
            hi: lo + w,
            mode: if reflect { BoxMode::Reflect } else { BoxMode::Clamp },
        }),
    ]
}

proptest! {
    #[test]
    fn constraints_land_in_the_feasible_region(
        cs in prop::collection::vec(constraint_strategy(), 1..6),
        raw in prop::collection::vec(-1e4f64..1e4, 6),
    ) {
        let map = ConstraintMap(cs.clone());
        let theta = apply_constraint(&map, &raw[..cs.len()]);
        prop_assert!(map.is_feasible(&theta), "{:?} -> {:?}", raw, theta);
        for (c, (&r, &t)) in cs.iter().zip(raw.iter().zip(&theta)) {
            if c.is_feasible(r) && matches!(c, Constraint::Box { .. } | Constraint::Identity) {
                prop_assert_eq!(r, t);
            }
        }
    }

    #[test]
    fn classification_is_monotone_in_the_leading_exponent(
        mut l1 in -2.0f64..2.0, rest in prop::collection::vec(-3.0f64..0.1, 0..3), steps in prop::collection::vec(0.0f64..0.3, 1..20),
    ) {
        let rank = |c: AttractorClass| match c {
            AttractorClass::FixedPoint => 0,
            AttractorClass::LimitCycleOrTorus => 1,
            AttractorClass::Chaos | AttractorClass::Hyperchaos => 2,
            AttractorClass::Divergent => 3,
        };
        let spectrum = |l1: f64| {
            let mut exponents = vec![l1];
            exponents.extend(&rest);
            LyapunovSpectrum { exponents, dt: 0.01, steps: 1, diverged: false }
        };
        let mut prev = rank(classify(&spectrum(l1), 0.05, 6e-3).class);
        for s in steps {
            l1 += s;
            let now = rank(classify(&spectrum(l1), 0.05, 6e-3).class);
            prop_assert!(now >= prev);
            prev = now;
        }
    }
}
