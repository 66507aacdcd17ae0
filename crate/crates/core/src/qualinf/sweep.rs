use std::collections::BTreeMap;
use std::io;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{estimate_spectrum, AttractorClass, LeConfig, SpectrumReport};
use crate::models::ModelSystem;
use crate::rng::stream_rng;

/// Sobol point sets are limited to this many samples.
pub const MAX_SOBOL_SAMPLES: usize = 1 << 16;

/// Stream reserved for sweep sampling, apart from restart streams.
const SWEEP_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Grid,
    Uniform,
    Sobol,
    LatinHypercube,
}

impl std::str::FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grid" => Sampler::Grid,
            "uniform" => Sampler::Uniform,
            "sobol" => Sampler::Sobol,
            "latin_hypercube" | "lhs" => Sampler::LatinHypercube,
            _ => {
                return Err(Error::Precondition(format!(
                    "unknown sampler '{s}'; expected grid, uniform, sobol or latin_hypercube"
                )))
            }
        })
    }
}

/// Axis-aligned box with `lo[i] < hi[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let r = Self { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        Error::check_len("region upper bounds", self.hi.len(), self.lo.len())?;
        if self.lo.is_empty() {
            return Err(Error::Precondition("region has no axes".into()));
        }
        for (i, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(Error::Precondition(format!("region axis {i} is degenerate: [{l}, {h}]")));
            }
        }
        Ok(())
    }

    fn scale(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (l, h))| l + u * (h - l))
            .collect()
    }
}

/// Sample points inside `region`. The grid uses `round(n^(1/d))` points per
/// axis including both endpoints (the midpoint when that count is one), so
/// it may return other than `n` points.
pub fn sample_points(region: &Region, sampler: Sampler, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    region.validate()?;
    if n == 0 {
        return Err(Error::Precondition("n_samples must be at least 1".into()));
    }
    let d = region.dim();
    let mut rng = stream_rng(seed, SWEEP_STREAM);
    let unit: Vec<Vec<f64>> = match sampler {
        Sampler::Grid => {
            let m = ((n as f64).powf(1.0 / d as f64).round() as usize).max(1);
            let axis: Vec<f64> = if m == 1 {
                vec![0.5]
            } else {
                (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
            };
            let total = m.checked_pow(d as u32).ok_or_else(|| Error::Precondition("grid too large".into()))?;
            (0..total)
                .map(|mut idx| {
                    let mut p = vec![0.0; d];
                    for slot in p.iter_mut().rev() {
                        *slot = axis[idx % m];
                        idx /= m;
                    }
                    p
                })
                .collect()
        }
        Sampler::Uniform => (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect(),
        Sampler::Sobol => {
            if n > MAX_SOBOL_SAMPLES || d >= sobol_burley::NUM_DIMENSIONS as usize {
                return Err(Error::Precondition(format!(
                    "sobol sampling supports at most {MAX_SOBOL_SAMPLES} samples and {} axes",
                    sobol_burley::NUM_DIMENSIONS - 1
                )));
            }
            let scramble = seed as u32;
            (0..n as u32)
                .map(|i| (0..d as u32).map(|j| sobol_burley::sample(i, j, scramble) as f64).collect())
                .collect()
        }
        Sampler::LatinHypercube => {
            let mut points = vec![vec![0.0; d]; n];
            for j in 0..d {
                let mut strata: Vec<usize> = (0..n).collect();
                strata.shuffle(&mut rng);
                for (p, s) in points.iter_mut().zip(strata) {
                    p[j] = (s as f64 + rng.gen::<f64>()) / n as f64;
                }
            }
            points
        }
    };
    Ok(unit.iter().map(|u| region.scale(u)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Values of the swept parameters.
    pub theta: Vec<f64>,
    pub report: SpectrumReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeMap {
    pub names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl RegimeMap {
    pub fn class_counts(&self) -> BTreeMap<AttractorClass, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.report.class).or_insert(0) += 1;
        }
        counts
    }

    /// `<names>, lambda_1..lambda_k, class, ky_dimension`.
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        let k = self.rows.iter().map(|r| r.report.exponents.len()).max().unwrap_or(0);
        let mut header: Vec<String> = self.names.clone();
        header.extend((1..=k).map(|i| format!("lambda_{i}")));
        header.extend(["class".into(), "ky_dimension".into()]);
        writeln!(out, "{}", header.join(","))?;
        for r in &self.rows {
            let mut row: Vec<String> = r.theta.iter().map(|v| v.to_string()).collect();
            row.extend((0..k).map(|i| r.report.exponents.get(i).map_or(String::new(), |v| v.to_string())));
            row.push(r.report.class.to_string());
            row.push(r.report.ky_dimension.map_or(String::new(), |v| v.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// What is held fixed during a sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    pub model: &'a ModelSystem,
    /// Full parameter vector; swept entries are overwritten.
    pub base_params: Vec<f64>,
    /// Parameter indices matching the region axes.
    pub swept: Vec<usize>,
    pub initial_state: Vec<f64>,
    pub le_config: LeConfig,
    pub delta_tol: f64,
    pub osc_tol: f64,
}

/// Classifies every sample; samples run in parallel, rows keep sample order.
pub fn sweep(setup: &SweepSetup<'_>, region: &Region, sampler: Sampler, n_samples: usize, seed: u64) -> Result<RegimeMap> {
    let model = setup.model;
    Error::check_len("swept parameters", setup.swept.len(), region.dim())?;
    Error::check_len("parameter vector", setup.base_params.len(), model.params().len())?;
    Error::check_len("initial state", setup.initial_state.len(), model.dim())?;
    if setup.swept.iter().any(|&i| i >= setup.base_params.len()) {
        return Err(Error::Precondition("swept parameter index out of range".into()));
    }
    setup.le_config.validate(model.dim())?;
    let points = sample_points(region, sampler, n_samples, seed)?;
    let rows = points
        .into_par_iter()
        .map(|theta| {
            let mut params = setup.base_params.clone();
            for (&i, &v) in setup.swept.iter().zip(&theta) {
                params[i] = v;
            }
            let spectrum = estimate_spectrum(model, &params, &setup.initial_state, &setup.le_config)?;
            Ok(SweepRow {
                theta,
                report: SpectrumReport::new(&spectrum, setup.delta_tol, setup.osc_tol),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegimeMap {
        names: setup.swept.iter().map(|&i| model.params()[i].name.clone()).collect(),
        rows,
    })
}
