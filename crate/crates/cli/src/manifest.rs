//! `manifest.json`: what was run, with which inputs, and what it produced.
//!
//! Written once when the run starts (status `running`) and rewritten when
//! it ends. Timestamps live only here, so the other output files of two
//! identical runs are byte-identical.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    /// Milliseconds since the Unix epoch.
    pub started_ms: u128,
    pub finished_ms: Option<u128>,
    pub status: String,
    pub exit_code: Option<i32>,
    pub message: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: ExperimentConfig,
    #[serde(skip)]
    dir: PathBuf,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn start(dir: &Path, command: &str, config: &ExperimentConfig, inputs: &[PathBuf]) -> io::Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<io::Result<Vec<_>>>()?;
        let manifest = Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed: config.seed,
            started_ms: now_ms(),
            finished_ms: None,
            status: "running".into(),
            exit_code: None,
            message: None,
            inputs,
            outputs: Vec::new(),
            config: config.clone(),
            dir: dir.to_path_buf(),
        };
        manifest.write()?;
        Ok(manifest)
    }

    /// Records the outcome and digests of `outputs` (names relative to the
    /// output directory).
    pub fn finish(&mut self, exit_code: i32, message: Option<String>, outputs: &[String]) -> io::Result<()> {
        self.finished_ms = Some(now_ms());
        self.status = match exit_code {
            0 => "ok",
            3 => "not_converged",
            _ => "failed",
        }
        .into();
        self.exit_code = Some(exit_code);
        self.message = message;
        self.outputs = outputs
            .iter()
            .map(|name| {
                Ok(FileDigest {
                    path: name.clone(),
                    sha256: sha256_file(&self.dir.join(name))?,
                })
            })
            .collect::<io::Result<Vec<_>>>()?;
        self.write()
    }

    fn write(&self) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(self.dir.join(FILE_NAME), text + "\n")
    }
}
