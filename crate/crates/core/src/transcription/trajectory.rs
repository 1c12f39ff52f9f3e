//! Trajectory files: per-knot states and inputs plus the embedded scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{parse_model, parse_scenario_with_model, ModelError, Objective, Scenario};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("cannot access '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trajectory: {0}")]
    Format(#[from] serde_json::Error),
    #[error("embedded scenario: {0}")]
    Scenario(#[from] ModelError),
    #[error("inconsistent trajectory: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub objective: Objective,
    pub status: String,
    pub mesh_points: usize,
    pub step_s: f64,
    pub times_s: Vec<f64>,
    /// Generalized coordinates, one row per knot.
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Joint torques, one row per interval.
    pub tau: Vec<Vec<f64>>,
    /// Stacked contact forces, one row per interval.
    pub lambda: Vec<Vec<f64>>,
    /// Robustness radius per interval when planned with the robust objective.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    /// Contact-force gains per interval, row-major `n_s × 3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_lambda: Option<Vec<Vec<f64>>>,
    pub model: serde_json::Value,
    pub scenario: serde_json::Value,
}

impl Trajectory {
    pub fn intervals(&self) -> usize {
        self.tau.len()
    }

    /// Rebuilds the scenario (and model) the trajectory was planned for.
    pub fn scenario(&self) -> Result<Scenario, TrajectoryError> {
        let model = parse_model(&self.model.to_string())?;
        Ok(parse_scenario_with_model(&self.scenario.to_string(), model)?)
    }

    pub fn validate_shape(&self, scenario: &Scenario) -> Result<(), TrajectoryError> {
        let model = &scenario.model;
        let m = self.mesh_points;
        let check = |what: &str, rows: &[Vec<f64>], count: usize, width: usize| {
            if rows.len() != count || rows.iter().any(|r| r.len() != width) {
                Err(TrajectoryError::Shape(format!("{what} must have {count} rows of length {width}")))
            } else {
                Ok(())
            }
        };
        if m < 2 || self.times_s.len() != m {
            return Err(TrajectoryError::Shape(format!("times_s must have {m} entries")));
        }
        check("q", &self.q, m, model.nq())?;
        check("v", &self.v, m, model.nv())?;
        check("tau", &self.tau, m - 1, model.nj())?;
        check("lambda", &self.lambda, m - 1, model.ns())?;
        if let Some(rho) = &self.rho {
            if rho.len() != m - 1 {
                return Err(TrajectoryError::Shape(format!("rho must have {} entries", m - 1)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, TrajectoryError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrajectoryError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrajectoryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
