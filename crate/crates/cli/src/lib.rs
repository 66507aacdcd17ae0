//! Command-line front end: `simulate`, `classify`, `infer`, `sweep` and
//! `models`.
//!
//! Exit status: 0 success, 1 invalid input, 2 numerical failure, 3 inference
//! did not converge.

/// `println!` that ignores a closed stdout (e.g. output piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lyapinf::qualinf::Sampler;
use lyapinf::{builtin, builtin_source, BUILTIN_MODELS};

use crate::commands::CommandKind;
use crate::config::Resolved;
use crate::error::CliError;
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "lyapinf", version, about = "Lyapunov-spectrum inference for ODE models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the model and write the trajectory.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of integration steps (span = steps·dt).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Estimate the Lyapunov spectrum and classify the attractor.
    Classify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Drive parameters towards a target regime with the unscented filter.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Classify sample points of a parameter region.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_sampler)]
        sampler: Option<Sampler>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Built-in models.
    Models {
        #[command(subcommand)]
        action: ModelsAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ModelsAction {
    /// Names, states and parameter defaults.
    List,
    /// Print a built-in model in the model-file syntax.
    Show { name: String },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long, conflicts_with = "model_file")]
    pub model: Option<String>,
    /// Model file in the equation syntax.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set params.rho=28`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, env = "LYAPINF_WORKERS")]
    pub workers: Option<usize>,
}

fn parse_sampler(s: &str) -> Result<Sampler, String> {
    s.parse().map_err(|e: lyapinf::Error| e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind.code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let mut overrides: Vec<(String, toml::Value)> = Vec::new();
    let (kind, common) = match cli.command {
        Command::Models { action } => return models(action),
        Command::Simulate { common, steps } => {
            if let Some(s) = steps {
                overrides.push(("integrator.steps".into(), int(s)?));
            }
            (CommandKind::Simulate, common)
        }
        Command::Classify { common } => (CommandKind::Classify, common),
        Command::Infer {
            common,
            restarts,
            max_iterations,
        } => {
            if let Some(n) = restarts {
                overrides.push(("inference.restarts".into(), int(n)?));
            }
            if let Some(n) = max_iterations {
                overrides.push(("inference.max_iterations".into(), int(n)?));
            }
            (CommandKind::Infer, common)
        }
        Command::Sweep {
            common,
            sampler,
            samples,
        } => {
            if let Some(s) = sampler {
                let name = serde_json::to_value(s).expect("sampler serializes");
                overrides.push(("sweep.sampler".into(), toml::Value::String(name.as_str().unwrap_or("").into())));
            }
            if let Some(n) = samples {
                overrides.push(("sweep.n_samples".into(), int(n)?));
            }
            (CommandKind::Sweep, common)
        }
    };

    let mut table = config::load_table(common.config.as_deref())?;
    for assignment in &common.set {
        config::apply_set(&mut table, assignment)?;
    }
    if let Some(name) = &common.model {
        overrides.push(("model.name".into(), toml::Value::String(name.clone())));
        remove_path(&mut table, "model", "file");
    }
    if let Some(path) = &common.model_file {
        overrides.push(("model.file".into(), toml::Value::String(path.display().to_string())));
        remove_path(&mut table, "model", "name");
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), int(seed)?));
    }
    if let Some(out) = &common.out {
        overrides.push(("output.dir".into(), toml::Value::String(out.display().to_string())));
    }
    for (key, value) in overrides {
        config::set_path(&mut table, &key, value)?;
    }
    let resolved = Resolved::new(config::from_table(table)?)?;
    let plan = commands::plan(kind, &resolved)?;

    let pool = match common.workers {
        Some(0) => return Err(CliError::validation("--workers: must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| CliError::validation(format!("cannot start worker pool: {e}")))?;

    let dir = resolved.config.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
    let inputs: Vec<PathBuf> = common.config.iter().chain(&resolved.model_file).cloned().collect();
    let mut manifest = RunManifest::start(&dir, kind.name(), &resolved.config, &inputs)
        .map_err(|e| CliError::io("cannot write manifest", e))?;

    let outcome = pool.install(|| commands::execute(plan, &resolved, &dir));
    let (code, message) = match &outcome.status {
        Ok(()) => (0, None),
        Err(e) => (e.kind.code(), Some(e.message.clone())),
    };
    manifest
        .finish(code, message, &outcome.outputs)
        .map_err(|e| CliError::io("cannot write manifest", e))?;
    outcome.status.map(|()| 0)
}

fn int<T: TryInto<i64>>(v: T) -> Result<toml::Value, CliError> {
    v.try_into()
        .map(toml::Value::Integer)
        .map_err(|_| CliError::validation("integer argument out of range"))
}

fn remove_path(table: &mut toml::Table, section: &str, key: &str) {
    if let Some(toml::Value::Table(t)) = table.get_mut(section) {
        t.remove(key);
    }
}

fn models(action: ModelsAction) -> Result<i32, CliError> {
    match action {
        ModelsAction::List => {
            for name in BUILTIN_MODELS {
                let m = builtin(name)?;
                let params: Vec<String> = m
                    .params()
                    .iter()
                    .map(|p| match p.default {
                        Some(v) => format!("{}={v}", p.name),
                        None => format!("{}=?", p.name),
                    })
                    .collect();
                say!(
                    "{name:<13} states ({})  params {}  dt {}",
                    m.state_names().join(", "),
                    params.join(" "),
                    m.default_dt()
                );
            }
        }
        ModelsAction::Show { name } => match builtin_source(&name) {
            Some(text) => say!("{}", text.trim_end()),
            None => return Err(builtin(&name).map(|_| ()).map_err(CliError::from).err().unwrap_or_else(|| {
                CliError::validation(format!("model '{name}' has no source listing"))
            })),
        },
    }
    Ok(0)
}
