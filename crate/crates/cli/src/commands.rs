use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use lyapinf::lyapunov::estimate_spectrum;
use lyapinf::odeint::{integrate, IntegratorConfig};
use lyapinf::qualinf::{
    run_restarts, sweep, InferenceConfig, InferenceProblem, InferenceRun, InitDistribution, Region, Sampler,
    SweepSetup, TargetSpec,
};
use lyapinf::{LeConfig, SpectrumReport};
use serde::Serialize;
use serde_json::json;

use crate::config::Resolved;
use crate::error::{exit_kind, CliError, ExitKind};

/// A fully validated command, ready to run.
pub enum Plan {
    Simulate {
        params: Vec<f64>,
        integrator: IntegratorConfig,
        t_end: f64,
        sample_every: usize,
    },
    Classify {
        params: Vec<f64>,
        le: LeConfig,
    },
    Infer {
        params: Vec<f64>,
        target: TargetSpec,
        inference: InferenceConfig,
        init: Vec<InitDistribution>,
    },
    Sweep {
        params: Vec<f64>,
        le: LeConfig,
        swept: Vec<usize>,
        region: Region,
        sampler: Sampler,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Classify,
    Infer,
    Sweep,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Classify => "classify",
            CommandKind::Infer => "infer",
            CommandKind::Sweep => "sweep",
        }
    }
}

/// Files written and the final status of a run.
pub struct Outcome {
    pub outputs: Vec<String>,
    pub status: Result<(), CliError>,
}

pub fn plan(kind: CommandKind, r: &Resolved) -> Result<Plan, CliError> {
    let params = r.parameters()?;
    Ok(match kind {
        CommandKind::Simulate => {
            let integrator = r.integrator()?;
            let s = &r.config.integrator;
            let t_end = s.t_end.unwrap_or(s.steps as f64 * integrator.dt);
            if !(t_end > 0.0) || !t_end.is_finite() {
                return Err(CliError::validation("integrator.t_end: must be positive"));
            }
            Plan::Simulate {
                params,
                integrator,
                t_end,
                sample_every: s.sample_every,
            }
        }
        CommandKind::Classify => Plan::Classify {
            params,
            le: r.le_config()?,
        },
        CommandKind::Infer => {
            let target = r.target()?;
            let inference = r.inference_config()?;
            let init = r.init_distributions();
            for (d, i) in init.iter().zip(r.free_indices()) {
                let name = &r.model.params()[i].name;
                d.validate().map_err(|e| CliError::validation(format!("free.{name}: {e}")))?;
            }
            Plan::Infer {
                params,
                target,
                inference,
                init,
            }
        }
        CommandKind::Sweep => {
            let (swept, region) = r.sweep_region()?;
            Plan::Sweep {
                params,
                le: r.le_config()?,
                swept,
                region,
                sampler: r.config.sweep.sampler,
                n_samples: r.config.sweep.n_samples,
            }
        }
    })
}

pub fn execute(plan: Plan, r: &Resolved, dir: &Path) -> Outcome {
    let mut outputs = Vec::new();
    let status = match plan {
        Plan::Simulate {
            params,
            integrator,
            t_end,
            sample_every,
        } => simulate(r, dir, &params, &integrator, t_end, sample_every, &mut outputs),
        Plan::Classify { params, le } => classify(r, dir, &params, &le, &mut outputs),
        Plan::Infer {
            params,
            target,
            inference,
            init,
        } => infer(r, dir, params, target, &inference, &init, &mut outputs),
        Plan::Sweep {
            params,
            le,
            swept,
            region,
            sampler,
            n_samples,
        } => run_sweep(r, dir, params, le, swept, &region, sampler, n_samples, &mut outputs),
    };
    Outcome { outputs, status }
}

fn create(dir: &Path, name: &str, outputs: &mut Vec<String>) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(format!("cannot create {}", path.display()), e))?;
    outputs.push(name.to_string());
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, outputs: &mut Vec<String>) -> Result<(), CliError> {
    let mut w = create(dir, name, outputs)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::validation(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(name, e))
}

fn write_with(
    dir: &Path,
    name: &str,
    outputs: &mut Vec<String>,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut w = create(dir, name, outputs)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(name, e))
}

fn simulate(
    r: &Resolved,
    dir: &Path,
    params: &[f64],
    integrator: &IntegratorConfig,
    t_end: f64,
    sample_every: usize,
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    let traj = integrate(&r.model, &r.initial_state, params, 0.0, t_end, integrator, sample_every)?;
    write_with(dir, "trajectory.csv", outputs, |w| traj.write_csv(r.model.state_names(), w))?;
    let bounds: BTreeMap<&str, [f64; 2]> = r
        .model
        .state_names()
        .iter()
        .zip(traj.bounds())
        .map(|(n, (lo, hi))| (n.as_str(), [lo, hi]))
        .collect();
    let summary = json!({
        "model": r.model.name(),
        "t_end": t_end,
        "samples": traj.len(),
        "final_state": traj.states.last(),
        "bounds": bounds,
    });
    write_json(dir, "summary.json", &summary, outputs)?;
    say!("{} samples over t in [0, {t_end}] -> {}", traj.len(), dir.join("trajectory.csv").display());
    Ok(())
}

fn classify(r: &Resolved, dir: &Path, params: &[f64], le: &LeConfig, outputs: &mut Vec<String>) -> Result<(), CliError> {
    let spectrum = estimate_spectrum(&r.model, params, &r.initial_state, le)?;
    let report = SpectrumReport::new(&spectrum, r.config.lyapunov.delta_tol, r.config.lyapunov.osc_tol);
    write_json(dir, "spectrum.json", &report, outputs)?;
    say!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    restart: usize,
    status: String,
    iterations: usize,
    start: Vec<f64>,
    theta: Option<Vec<f64>>,
    sse: Option<f64>,
    class: Option<String>,
    error: Option<String>,
}

fn summarize(restart: usize, start: &[f64], run: &Result<InferenceRun, lyapinf::qualinf::InferenceAbort>) -> RunSummary {
    match run {
        Ok(run) => {
            let last = run.trace.last();
            RunSummary {
                restart,
                status: serde_json::to_value(run.stop)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                iterations: run.trace.len(),
                start: start.to_vec(),
                theta: last.map(|l| l.theta.clone()),
                sse: last.map(|l| l.sse),
                class: last.and_then(|l| l.class).map(|c| c.to_string()),
                error: None,
            }
        }
        Err(abort) => RunSummary {
            restart,
            status: "aborted".into(),
            iterations: abort.trace.len(),
            start: start.to_vec(),
            theta: abort.trace.last().map(|l| l.theta.clone()),
            sse: abort.trace.last().map(|l| l.sse),
            class: None,
            error: Some(abort.error.to_string()),
        },
    }
}

fn infer(
    r: &Resolved,
    dir: &Path,
    params: Vec<f64>,
    target: TargetSpec,
    config: &InferenceConfig,
    init: &[InitDistribution],
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    let problem = InferenceProblem {
        model: &r.model,
        target,
        base_params: params,
        free: r.free_indices(),
        initial_state: r.initial_state.clone(),
    };
    let names = problem.filter_names(config.infer_initial_conditions);
    let restarts = r.config.inference.restarts;
    let summary = run_restarts(&problem, init, restarts, config)?;

    // Converged runs first, then by final SSE; ties keep restart order.
    let chosen = (0..summary.runs.len())
        .filter(|&i| summary.runs[i].is_ok())
        .min_by(|&a, &b| {
            let key = |i: usize| {
                let run = summary.runs[i].as_ref().expect("filtered");
                (!run.converged(), run.trace.last().map_or(f64::INFINITY, |l| l.sse))
            };
            let (ca, sa) = key(a);
            let (cb, sb) = key(b);
            ca.cmp(&cb).then(sa.total_cmp(&sb))
        });
    let reported = chosen.unwrap_or(0);
    let trace = match &summary.runs[reported] {
        Ok(run) => &run.trace,
        Err(abort) => &abort.trace,
    };
    write_with(dir, "trace.jsonl", outputs, |w| trace.write_jsonl(w))?;
    write_with(dir, "trace.csv", outputs, |w| trace.write_csv(w))?;

    let runs: Vec<RunSummary> = summary
        .runs
        .iter()
        .enumerate()
        .map(|(i, run)| summarize(i, &summary.starts[i], run))
        .collect();
    if restarts > 1 {
        write_with(dir, "restarts.csv", outputs, |w| {
            write!(w, "restart,status,iterations")?;
            for n in &names {
                write!(w, ",start_{n}")?;
            }
            for n in &names {
                write!(w, ",{n}")?;
            }
            writeln!(w, ",sse,class")?;
            for run in &runs {
                write!(w, "{},{},{}", run.restart, run.status, run.iterations)?;
                for v in &run.start {
                    write!(w, ",{v}")?;
                }
                match &run.theta {
                    Some(theta) => theta.iter().try_for_each(|v| write!(w, ",{v}"))?,
                    None => names.iter().try_for_each(|_| write!(w, ","))?,
                }
                let sse = run.sse.map(|s| s.to_string()).unwrap_or_default();
                writeln!(w, ",{sse},{}", run.class.as_deref().unwrap_or(""))?;
            }
            Ok(())
        })?;
    }

    let best = &runs[reported];
    let converged = summary.runs.iter().filter(|r| r.as_ref().is_ok_and(InferenceRun::converged)).count();
    let report = json!({
        "model": r.model.name(),
        "target": problem.target,
        "names": names,
        "restarts": restarts,
        "converged_runs": converged,
        "reported_restart": reported,
        "status": best.status,
        "iterations": best.iterations,
        "theta": best.theta,
        "sse": best.sse,
        "class": best.class,
        "final_exponents": trace.last().map(|l| l.exponents.clone()),
        "runs": runs,
    });
    write_json(dir, "report.json", &report, outputs)?;

    say!("restart {reported}: {} after {} iterations", best.status, best.iterations);
    if let Some(theta) = &best.theta {
        for (n, v) in names.iter().zip(theta) {
            say!("  {n} = {v}");
        }
    }
    if restarts > 1 {
        say!("{converged}/{restarts} restarts converged");
    }

    match &summary.runs[reported] {
        Ok(run) if run.converged() => Ok(()),
        Ok(_) => Err(CliError {
            kind: ExitKind::NotConverged,
            message: format!("no run met the target within {} iterations", config.max_iterations),
        }),
        Err(abort) => Err(CliError {
            kind: exit_kind(&abort.error),
            message: abort.to_string(),
        }),
    }
}

fn run_sweep(
    r: &Resolved,
    dir: &Path,
    params: Vec<f64>,
    le: LeConfig,
    swept: Vec<usize>,
    region: &Region,
    sampler: Sampler,
    n_samples: usize,
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    let setup = SweepSetup {
        model: &r.model,
        base_params: params,
        swept,
        initial_state: r.initial_state.clone(),
        le_config: le,
        delta_tol: r.config.lyapunov.delta_tol,
        osc_tol: r.config.lyapunov.osc_tol,
    };
    let map = sweep(&setup, region, sampler, n_samples, r.config.seed)?;
    write_with(dir, "regime_map.csv", outputs, |w| map.write_csv(w))?;
    let counts: BTreeMap<String, usize> = map.class_counts().into_iter().map(|(c, n)| (c.to_string(), n)).collect();
    let summary = json!({
        "model": r.model.name(),
        "axes": map.names,
        "lo": region.lo,
        "hi": region.hi,
        "sampler": sampler,
        "samples": map.rows.len(),
        "seed": r.config.seed,
        "class_counts": counts,
    });
    write_json(dir, "summary.json", &summary, outputs)?;
    say!("{} points", map.rows.len());
    for (class, n) in &counts {
        say!("  {class:<22} {n}");
    }
    Ok(())
}
