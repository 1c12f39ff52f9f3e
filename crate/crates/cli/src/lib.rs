//! Experiment harness around the planner: solving scenarios, evaluating
//! disturbance rejection per knot, incline sweeps and mesh refinement studies.

pub mod commands;
pub mod manifest;
pub mod suf;

use std::path::Path;

use anyhow::Context;
use thiserror::Error;

pub use commands::{evaluate_suf, refine, solve, sweep, EvaluateArgs, RefineArgs, SolveArgs, SweepArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] anyhow::Error),
    /// Solver failure; the best iterate and reports are still written.
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Worker count for sweep and refine legs: `ROBUSTTRAJ_THREADS` when set,
/// otherwise the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("ROBUSTTRAJ_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create '{}'", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("cannot write '{}'", path.display()))?;
    Ok(())
}
