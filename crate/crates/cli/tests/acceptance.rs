//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{random_model_text, relative_max_diff};
use lyapinf::dsl::parse_model;
use lyapinf::lyapunov::{estimate_spectrum, gram_schmidt, kaplan_yorke_dimension};
use lyapinf::models::{builtin, builtin_source, finite_diff_jacobian, BoxMode, Constraint, ConstraintMap};
use lyapinf::odeint::TangentFrame;
use lyapinf::qualinf::{
    diagonal_covariance, run_inference, run_restarts, InferenceConfig, InferenceProblem, InitDistribution, TargetSpec,
};
use lyapinf::ukf::{iterate, sigma_points, FilterState, UtParams};
use lyapinf::{AttractorClass, LeConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Criterion = (&'static str, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn box_map(lo: f64, hi: f64, n: usize) -> ConstraintMap {
    ConstraintMap::uniform(Constraint::Box { lo, hi, mode: BoxMode::Reflect }, n)
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn a1_lorenz_spectrum() -> Verdict {
    let model = builtin("lorenz").unwrap();
    let config = LeConfig {
        burn_in_steps: 1000,
        estimation_steps: 10_000,
        dt: 0.01,
        ..LeConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let s = pool
        .install(|| estimate_spectrum(&model, &[10.0, 28.0, 8.0 / 3.0], model.default_initial_state(), &config))
        .unwrap();
    let elapsed = start.elapsed();
    let l = &s.exponents;
    let pass = (0.85..=0.95).contains(&l[0])
        && l[1].abs() <= 0.02
        && (-15.8..=-14.0).contains(&l[2])
        && elapsed < Duration::from_secs(5);
    verdict(pass, format!("lambda = ({:.4}, {:.4}, {:.3}) in {}", l[0], l[1], l[2], secs(elapsed)))
}

fn a2_lorenz_full_spectrum_inference() -> Verdict {
    let model = builtin("lorenz").unwrap();
    let problem = InferenceProblem::new(&model, TargetSpec::full_spectrum(vec![0.906, 0.0, -14.57])).unwrap();
    let config = InferenceConfig {
        max_iterations: 200,
        constraint: Some(box_map(0.0, 30.0, 3)),
        seed: 42,
        ..InferenceConfig::default()
    };
    let init = vec![InitDistribution::Uniform { lo: 0.0, hi: 30.0 }; 3];
    let start = Instant::now();
    let summary = run_restarts(&problem, &init, 10, &config).unwrap();
    let elapsed = start.elapsed();
    let best: Vec<f64> = summary
        .runs
        .iter()
        .map(|r| r.as_ref().ok().and_then(|r| r.trace.best()).map_or(f64::INFINITY, |b| b.sse))
        .collect();
    let hits = best.iter().filter(|&&e| e < 1e-3).count();
    let overall = best.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = hits >= 8 && overall < 1e-4 && elapsed < Duration::from_secs(600);
    verdict(pass, format!("{hits}/10 runs below 1e-3, best SSE {overall:.2e}, {}", secs(elapsed)))
}

fn a3_sum_rule() -> Verdict {
    let model = builtin("lorenz").unwrap();
    let config = LeConfig::for_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut drawn = 0;
    while accepted < 20 && drawn < 200 {
        drawn += 1;
        let theta: Vec<f64> = (0..3).map(|_| rng.gen_range(1.0..30.0)).collect();
        let s = estimate_spectrum(&model, &theta, model.default_initial_state(), &config).unwrap();
        if s.diverged {
            continue;
        }
        accepted += 1;
        let divergence = theta[0] + 1.0 + theta[2];
        worst = worst.max((s.sum() + divergence).abs() / divergence);
    }
    verdict(accepted == 20 && worst < 0.02, format!("{accepted} orbits, worst relative error {worst:.2e}"))
}

fn a4_hes1_oscillation() -> Verdict {
    let model = builtin("hes1").unwrap();
    let problem = InferenceProblem::new(&model, TargetSpec::oscillation())
        .unwrap()
        .with_free(&["P0", "nu", "k1", "h"])
        .unwrap();
    let k1 = 2;
    let config = InferenceConfig {
        constraint: Some(ConstraintMap::uniform(Constraint::AbsoluteValue, 4)),
        noise: lyapinf::qualinf::NoiseConfig {
            measurement: 1e-5,
            ..Default::default()
        },
        ..InferenceConfig::default()
    };
    let init = [
        InitDistribution::LogUniform { lo: 0.1, hi: 100.0 },
        InitDistribution::LogUniform { lo: 0.01, hi: 10.0 },
        InitDistribution::LogUniform { lo: 1e-4, hi: 1.0 },
        InitDistribution::LogUniform { lo: 1.0, hi: 10.0 },
    ];
    let start = Instant::now();
    let summary = run_restarts(&problem, &init, 5, &config).unwrap();
    let elapsed = start.elapsed();
    let found: Vec<(f64, f64)> = summary
        .runs
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter_map(|r| r.trace.last())
        .map(|l| (l.exponents[0], l.theta[k1]))
        .filter(|&(l1, k)| l1.abs() < 6e-3 && k < 0.01)
        .collect();
    let pass = !found.is_empty() && elapsed < Duration::from_secs(600);
    let detail = match found.first() {
        Some((l1, k)) => format!("{}/5 runs; e.g. lambda1 = {l1:.1e}, k1 = {k:.2e}; {}", found.len(), secs(elapsed)),
        None => format!("no run met the target; {}", secs(elapsed)),
    };
    verdict(pass, detail)
}

fn a5_kaplan_yorke() -> Verdict {
    let d_ref = kaplan_yorke_dimension(&[0.906, 0.0, -14.57]).unwrap();
    let arithmetic = 2.0 + 0.906 / 14.57;

    let model = builtin("lorenz").unwrap();
    let problem = InferenceProblem::new(&model, TargetSpec::ky_dimension(1.0))
        .unwrap()
        .with_free(&["beta"])
        .unwrap();
    let config = InferenceConfig {
        max_iterations: 100,
        constraint: Some(box_map(0.0, 30.0, 1)),
        ..InferenceConfig::default()
    };
    let theta0 = [8.0 / 3.0];
    let run = run_inference(&problem, &theta0, &diagonal_covariance(&theta0, config.initial_cov_scale), &config);
    let (reached, iterations) = match &run {
        Ok(r) => {
            let hit = r.trace.records.iter().find(|rec| (rec.observation[0] - 1.0).abs() < 0.05);
            (hit.map(|rec| rec.observation[0]), hit.map_or(r.trace.len(), |rec| rec.iteration))
        }
        Err(_) => (None, 0),
    };
    let pass = (d_ref - 2.0622).abs() <= 1e-4 && (d_ref - arithmetic).abs() < 1e-12 && reached.is_some();
    verdict(
        pass,
        format!(
            "D(0.906, 0, -14.57) = {d_ref:.5}; inferred D = {} at iteration {iterations}",
            reached.map_or("none".into(), |d| format!("{d:.4}"))
        ),
    )
}

fn a6_hyperchaos_drive() -> Verdict {
    let model = builtin("hyperchaos4d").unwrap();
    let problem = InferenceProblem::new(&model, TargetSpec::hyperchaos(15.0, 1.0)).unwrap();
    let config = InferenceConfig {
        max_iterations: 150,
        constraint: Some(ConstraintMap::uniform(Constraint::AbsoluteValue, 6)),
        ..InferenceConfig::default()
    };
    let theta0 = model.default_params().unwrap();
    let start = Instant::now();
    let run = run_inference(&problem, &theta0, &diagonal_covariance(&theta0, config.initial_cov_scale), &config);
    let elapsed = start.elapsed();
    match run {
        Ok(r) => {
            let last = r.trace.last().unwrap();
            let l = &last.exponents;
            let pass = l[0] >= 15.0 && l[1] >= 1.0 && last.class == Some(AttractorClass::Hyperchaos);
            verdict(
                pass,
                format!("lambda1 = {:.2}, lambda2 = {:.2} after {} iterations, {}", l[0], l[1], last.iteration, secs(elapsed)),
            )
        }
        Err(e) => verdict(false, format!("aborted: {e}")),
    }
}

fn a7_linear_filter_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let h = DMatrix::from_fn(3, 3, |_, _| normal(&mut rng));
        let target = DVector::from_fn(3, |_, _| normal(&mut rng));
        let mut state = FilterState::new(
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            DVector::from_element(3, 0.01),
            DVector::from_element(3, 0.01),
        )
        .unwrap();
        let ut = UtParams::default();
        for _ in 0..2000 {
            state = iterate(&state, &ut, |p| &h * p, &target).unwrap();
        }
        // Normal equations; H is square and almost surely invertible.
        let hth = h.transpose() * &h;
        let ls = hth.lu().solve(&(h.transpose() * &target)).unwrap();
        worst = worst.max((&state.mean - &ls).amax());
    }
    verdict(worst < 1e-6, format!("max deviation from least squares {worst:.2e} over 10 random H"))
}

fn a8_sigma_points() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst_mean, mut worst_cov) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let l = rng.gen_range(1..=8);
        let mean = DVector::from_fn(l, |_, _| 10.0 * normal(&mut rng));
        let a = DMatrix::from_fn(l, l, |_, _| normal(&mut rng));
        let p = &a * a.transpose() + DMatrix::identity(l, l) * 1e-3;
        let ut = UtParams {
            alpha: 10f64.powf(rng.gen_range(-2.0..0.0)),
            beta: 2.0,
            kappa: rng.gen_range(0.0..3.0),
        };
        let s = sigma_points(&mean, &p, &ut).unwrap();
        let lambda = ut.alpha * ut.alpha * (l as f64 + ut.kappa) - l as f64;
        let w0 = lambda / (l as f64 + lambda);
        let wi = 1.0 / (2.0 * (l as f64 + lambda));
        let wc0 = w0 + 1.0 - ut.alpha * ut.alpha + ut.beta;
        let m = s.points.iter().enumerate().fold(DVector::zeros(l), |acc, (i, x)| {
            acc + x * if i == 0 { w0 } else { wi }
        });
        let c = s.points.iter().enumerate().fold(DMatrix::zeros(l, l), |acc, (i, x)| {
            let d = x - &mean;
            acc + (&d * d.transpose()) * if i == 0 { wc0 } else { wi }
        });
        // Cancellation in the weighted sum scales with |w0|.
        worst_mean = worst_mean.max((&m - &mean).amax() / (mean.amax().max(1.0) * w0.abs().max(1.0)));
        worst_cov = worst_cov.max((&c - &p).amax() / p.amax());
    }
    verdict(
        worst_mean < 1e-12 && worst_cov < 1e-10,
        format!("mean error {worst_mean:.1e} (relative to |w0|), covariance error {worst_cov:.1e}"),
    )
}

fn a9_gram_schmidt() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut ortho, mut span) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=n);
        let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
        let (q, _) = gram_schmidt(&TangentFrame::from_columns(&cols).unwrap()).unwrap();
        let qm = DMatrix::from_columns(&q.columns().into_iter().map(DVector::from_vec).collect::<Vec<_>>());
        ortho = ortho.max((qm.transpose() * &qm - DMatrix::identity(k, k)).amax());
        for (j, c) in cols.iter().enumerate() {
            let c = DVector::from_column_slice(c);
            let basis = qm.columns(0, j + 1);
            span = span.max((&c - basis * (basis.transpose() * &c)).norm() / c.norm());
        }
    }
    verdict(ortho < 1e-12 && span < 1e-10, format!("orthonormality {ortho:.1e}, span {span:.1e}"))
}

fn a10_dsl_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_builtin = 0.0f64;
    for name in ["lorenz", "hes1", "hyperchaos4d"] {
        let native = builtin(name).unwrap();
        let parsed = parse_model(builtin_source(name).unwrap()).unwrap().into_model(name).unwrap();
        let theta = native.default_params().unwrap();
        for _ in 0..100 {
            let y: Vec<f64> = (0..native.dim()).map(|_| rng.gen_range(0.0..5.0)).collect();
            let p: Vec<f64> = theta.iter().map(|v| v * rng.gen_range(0.5..1.5)).collect();
            let rhs = relative_max_diff(&native.eval_rhs(&y, &p, 0.0).unwrap(), &parsed.eval_rhs(&y, &p, 0.0).unwrap());
            let jac = relative_max_diff(
                native.eval_jacobian(&y, &p).unwrap().as_slice(),
                parsed.eval_jacobian(&y, &p).unwrap().as_slice(),
            );
            worst_builtin = worst_builtin.max(rhs).max(jac);
        }
    }
    let mut worst_user = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(1..=4);
        let m = parse_model(&random_model_text(&mut rng, n, 4)).unwrap().into_model("random").unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let theta = [0.7, 1.3];
        let j = m.eval_jacobian(&y, &theta).unwrap();
        let fd = finite_diff_jacobian(&m, &y, &theta, 1e-6).unwrap();
        worst_user = worst_user.max(relative_max_diff(j.as_slice(), fd.as_slice()));
    }
    verdict(
        worst_builtin < 1e-12 && worst_user < 1e-6,
        format!("built-ins {worst_builtin:.1e}, random models vs finite differences {worst_user:.1e}"),
    )
}

fn a11_determinism() -> Verdict {
    let tmp = tempfile::TempDir::new().unwrap();
    let commands: [&[&str]; 4] = [
        &["simulate", "--model", "lorenz", "--steps", "2000"],
        &["classify", "--model", "hyperchaos4d", "--set", "lyapunov.estimation_steps=2000"],
        &["sweep", "--model", "lorenz", "--sampler", "uniform", "--samples", "12", "--seed", "5", "--set", "region.rho=[0, 30]"],
        &[
            "infer", "--model", "lorenz", "--restarts", "3", "--max-iterations", "20", "--seed", "9", "--set",
            "free.rho={ uniform = [10, 30] }", "--set", "target.kind=chaos",
        ],
    ];
    let mut compared = 0;
    for (i, args) in commands.iter().enumerate() {
        let dirs = [tmp.path().join(format!("{i}a")), tmp.path().join(format!("{i}b"))];
        let codes: Vec<i32> = dirs
            .iter()
            .map(|d| {
                let mut argv = vec!["lyapinf"];
                argv.extend_from_slice(args);
                argv.extend_from_slice(&["--out", d.to_str().unwrap()]);
                lyapinf_cli::run(argv)
            })
            .collect();
        if codes[0] != codes[1] {
            return verdict(false, format!("{}: exit codes {codes:?}", args[0]));
        }
        for name in output_files(&dirs[0]) {
            if fs::read(dirs[0].join(&name)).ok() != fs::read(dirs[1].join(&name)).ok() {
                return verdict(false, format!("{}: {name} differs", args[0]));
            }
            compared += 1;
        }
    }
    verdict(compared >= 8, format!("{compared} output files byte-identical across reruns of 4 commands"))
}

/// Everything the run wrote except the manifest, which carries timestamps.
fn output_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    names
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("A1", "Lorenz spectrum", a1_lorenz_spectrum),
        ("A2", "Lorenz full-spectrum inference", a2_lorenz_full_spectrum_inference),
        ("A3", "sum rule", a3_sum_rule),
        ("A4", "Hes1 oscillation", a4_hes1_oscillation),
        ("A5", "Kaplan-Yorke", a5_kaplan_yorke),
        ("A6", "hyperchaos drive", a6_hyperchaos_drive),
        ("A7", "linear filter vs least squares", a7_linear_filter_oracle),
        ("A8", "sigma-point moments", a8_sigma_points),
        ("A9", "Gram-Schmidt", a9_gram_schmidt),
        ("A10", "DSL fidelity", a10_dsl_fidelity),
        ("A11", "determinism", a11_determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("{id:<4} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
