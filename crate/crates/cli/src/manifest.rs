//! Run manifests: what was run, on which inputs, and which files came out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use robusttraj::nlp::SolveReport;
use robusttraj::transcription::ConstraintAudit;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{write_file, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub status: String,
    pub iterations: usize,
    pub violation: f64,
    pub stationarity: f64,
    pub objective: f64,
}

impl From<&SolveReport> for SolverSummary {
    fn from(r: &SolveReport) -> Self {
        SolverSummary {
            status: r.status.to_string(),
            iterations: r.iterations,
            violation: r.violation,
            stationarity: r.stationarity,
            objective: r.objective,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub objective: Option<String>,
    pub solver: Option<SolverSummary>,
    /// Feasibility solve that seeded the run, if one was needed.
    pub warm_start: Option<SolverSummary>,
    pub audit: Option<ConstraintAudit>,
    pub success: bool,
    pub outputs: Vec<String>,
    pub wall_times_s: BTreeMap<String, f64>,
    pub input_hash: String,
}

impl RunManifest {
    pub fn new(command: &str, scenario: &Path, input_hash: String) -> Self {
        RunManifest {
            command: command.to_string(),
            scenario: scenario.display().to_string(),
            objective: None,
            solver: None,
            warm_start: None,
            audit: None,
            success: false,
            outputs: Vec::new(),
            wall_times_s: BTreeMap::new(),
            input_hash,
        }
    }

    /// Writes the manifest to `path` after listing it among the outputs.
    pub fn write(mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(path.display().to_string());
        let text = serde_json::to_string_pretty(&self).expect("manifest serialization cannot fail");
        write_file(path, text.as_bytes())
    }
}

/// Object id of `bytes` as git would compute it for a blob, with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Tree-style hash over named input files and the run parameters.
#[derive(Debug, Default)]
pub struct InputHasher {
    entries: BTreeMap<String, String>,
}

impl InputHasher {
    pub fn file(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read '{}'", path.display()))?;
        self.entries.insert(role.to_string(), blob_hash(&bytes));
        Ok(())
    }

    pub fn param(&mut self, name: &str, value: impl ToString) {
        self.entries.insert(format!("param:{name}"), blob_hash(value.to_string().as_bytes()));
    }

    pub fn finish(&self) -> String {
        let listing: String = self.entries.iter().map(|(k, v)| format!("{v} {k}\n")).collect();
        blob_hash(listing.as_bytes())
    }
}

/// Path of an output file named `name` inside `dir`.
pub fn output_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_of_empty_input() {
        // sha256 of "blob 0\0"
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }

    #[test]
    fn input_hash_ignores_insertion_order() {
        let mut a = InputHasher::default();
        a.param("x", 1);
        a.param("y", "G3");
        let mut b = InputHasher::default();
        b.param("y", "G3");
        b.param("x", 1);
        assert_eq!(a.finish(), b.finish());
        b.param("x", 2);
        assert_ne!(a.finish(), b.finish());
    }
}
