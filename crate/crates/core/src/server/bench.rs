//! Overhead measurement: original against instrumented runs.
//!
//! A suite is a TOML file of `[[bench]]` tables with `name`, `program` (a
//! path relative to the suite file), optional `input` (a list of integers)
//! and optional `runs` (default 7). Each variant runs `runs` times; the
//! fastest and slowest runs are dropped and the rest averaged.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instrument::{instrument, InstrumentError};
use crate::isa::{self, serialize, IsaError, Program};
use crate::vm::{run_image, Image, RunOptions, VmError};

pub const DEFAULT_RUNS: usize = 7;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad suite file: {0}")]
    Suite(#[from] toml::de::Error),
    #[error("{name}: {source}")]
    Program { name: String, source: IsaError },
    #[error("{name}: {source}")]
    Instrument {
        name: String,
        source: InstrumentError,
    },
    #[error("{name}: {source}")]
    Run { name: String, source: VmError },
}

#[derive(Debug, Clone, Deserialize)]
pub struct Suite {
    pub bench: Vec<BenchSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BenchSpec {
    pub name: String,
    pub program: PathBuf,
    #[serde(default)]
    pub input: Vec<i64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub name: String,
    pub runs: usize,
    pub mean_seconds_original: f64,
    pub mean_seconds_instrumented: f64,
    pub ratio: f64,
    /// Final timestamp of the instrumented run.
    pub increments: u64,
    pub steps_original: u64,
    pub steps_instrumented: u64,
    pub size_original: usize,
    pub size_instrumented: usize,
    pub size_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub results: Vec<BenchResult>,
}

/// Mean of `samples` without the smallest and largest value, or the plain
/// mean when there are fewer than three.
pub fn trimmed_mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let kept = if v.len() >= 3 { &v[1..v.len() - 1] } else { &v[..] };
    kept.iter().sum::<f64>() / kept.len() as f64
}

pub fn load_suite(path: &Path) -> Result<Suite, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut suite: Suite = toml::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for b in &mut suite.bench {
        b.program = base.join(&b.program);
    }
    Ok(suite)
}

pub fn run_suite(suite: &Suite) -> Result<BenchReport, BenchError> {
    let results = suite.bench.iter().map(run_bench).collect::<Result<_, _>>()?;
    Ok(BenchReport { results })
}

fn timed(image: &Arc<Image>, input: &Arc<[i64]>, runs: usize, name: &str) -> Result<(f64, u64, u64), BenchError> {
    let mut samples = Vec::with_capacity(runs);
    let mut last = (0, 0);
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        let ex = run_image(Arc::clone(image), Arc::clone(input), RunOptions::default()).map_err(|source| {
            BenchError::Run {
                name: name.to_string(),
                source,
            }
        })?;
        samples.push(start.elapsed().as_secs_f64());
        last = (ex.machine.state().steps, ex.final_ts());
    }
    Ok((trimmed_mean(&samples), last.0, last.1))
}

pub fn run_bench(spec: &BenchSpec) -> Result<BenchResult, BenchError> {
    let bytes = std::fs::read(&spec.program).map_err(|source| BenchError::Io {
        path: spec.program.clone(),
        source,
    })?;
    let program_err = |source| BenchError::Program {
        name: spec.name.clone(),
        source,
    };
    let original: Program = isa::load(&bytes).map_err(program_err)?;
    let (instrumented, _) = instrument(&original, None).map_err(|source| BenchError::Instrument {
        name: spec.name.clone(),
        source,
    })?;
    let size_original = serialize(&original).len();
    let size_instrumented = serialize(&instrumented).len();
    let input: Arc<[i64]> = spec.input.clone().into();
    let a = Arc::new(Image::new(original).map_err(program_err)?);
    let b = Arc::new(Image::new(instrumented).map_err(program_err)?);
    let (mean_a, steps_a, _) = timed(&a, &input, spec.runs, &spec.name)?;
    let (mean_b, steps_b, increments) = timed(&b, &input, spec.runs, &spec.name)?;
    Ok(BenchResult {
        name: spec.name.clone(),
        runs: spec.runs,
        mean_seconds_original: mean_a,
        mean_seconds_instrumented: mean_b,
        ratio: if mean_a > 0.0 { mean_b / mean_a } else { 0.0 },
        increments,
        steps_original: steps_a,
        steps_instrumented: steps_b,
        size_original,
        size_instrumented,
        size_ratio: size_instrumented as f64 / size_original as f64,
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.results.iter().map(|r| r.name.len()).max().unwrap_or(0).max(9);
        writeln!(
            f,
            "{:<w$}  {:>10}  {:>10}  {:>6}  {:>12}  {:>12}  {:>12}  {:>8}  {:>8}  {:>6}",
            "benchmark", "orig (s)", "instr (s)", "ratio", "increments", "steps", "steps+", "size", "size+", "ratio"
        )?;
        for r in &self.results {
            writeln!(
                f,
                "{:<w$}  {:>10.6}  {:>10.6}  {:>6.2}  {:>12}  {:>12}  {:>12}  {:>8}  {:>8}  {:>6.2}",
                r.name,
                r.mean_seconds_original,
                r.mean_seconds_instrumented,
                r.ratio,
                r.increments,
                r.steps_original,
                r.steps_instrumented,
                r.size_original,
                r.size_instrumented,
                r.size_ratio
            )?;
        }
        Ok(())
    }
}
