//! Solving a scenario for its objective, warm-started from a feasibility
//! solution when none is supplied.

use crate::model::{Objective, Scenario, SolverSettings};
use crate::nlp::{solve, SolveOptions, SolveReport, SolveStatus};
use crate::robustness::{evaluate_trajectory, extend_problem};
use crate::transcription::{build_problem, default_seed, Trajectory, TranscriptionError};

pub fn solve_options(settings: &SolverSettings) -> SolveOptions {
    SolveOptions {
        tol_feas: settings.tol_feas,
        tol_opt: settings.tol_opt,
        max_iter: settings.max_iter,
        mu0: settings.barrier_mu0,
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub report: SolveReport,
    /// Report of the feasibility solve run first, if any.
    pub warm_start: Option<SolveReport>,
}

impl PlanOutcome {
    pub fn converged(&self) -> bool {
        self.report.status == SolveStatus::Converged
    }
}

/// Solves the scenario's objective from `seed`. Without a seed, `G1` starts
/// from the standing seed and the other objectives from a `G1` solve.
pub fn plan(scenario: &Scenario, seed: Option<&Trajectory>) -> Result<PlanOutcome, TranscriptionError> {
    let opts = solve_options(&scenario.solver);
    let (start, warm_start) = match (seed, scenario.objective) {
        (Some(s), _) => (s.clone(), None),
        (None, Objective::G1) => (default_seed(scenario), None),
        (None, _) => {
            let first = plan(&scenario.clone().with_objective(Objective::G1), None)?;
            (first.trajectory, Some(first.report))
        }
    };
    let (trajectory, report) = match scenario.objective {
        Objective::G1 | Objective::G2 => {
            let nominal = build_problem(scenario)?;
            let (x, report) = solve(&nominal.problem, &nominal.layout.pack(&start), &opts);
            (nominal.layout.unpack(&x, scenario, report.status), report)
        }
        Objective::G3 => {
            let robust = extend_problem(build_problem(scenario)?, scenario);
            let start = with_knot_gains(scenario, start);
            let (x, report) = solve(&robust.problem, &robust.layout.pack(&start), &opts);
            (robust.layout.unpack(&x, scenario, report.status), report)
        }
    };
    log::info!(
        "{} solve: {} after {} iterations, objective {:.6e}, violation {:.2e}",
        scenario.objective,
        report.status,
        report.iterations,
        report.objective,
        report.violation
    );
    Ok(PlanOutcome {
        trajectory,
        report,
        warm_start,
    })
}

/// Fills in per-knot radii and gains from the knot evaluator when the
/// trajectory carries none.
fn with_knot_gains(scenario: &Scenario, mut traj: Trajectory) -> Trajectory {
    if traj.rho.is_none() || traj.k_lambda.is_none() {
        let evals = evaluate_trajectory(scenario, &traj);
        traj.k_lambda = Some(evals.iter().map(|e| e.k_lambda.transpose().as_slice().to_vec()).collect());
        traj.rho = Some(evals.into_iter().map(|e| e.rho).collect());
    }
    traj
}
