//! The four subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, ValueEnum};
use robusttraj::model::{load_scenario, Objective, Scenario};
use robusttraj::oracle::DEFAULT_DIRECTIONS;
use robusttraj::pipeline::{plan, PlanOutcome};
use robusttraj::transcription::{audit_trajectory, interval_euler_residuals, Trajectory};
use serde::Serialize;

use crate::manifest::{output_path, InputHasher, RunManifest, SolverSummary};
use crate::suf::{mean_std, rmse_against, suf_curve, suf_rows, SufRow};
use crate::{thread_count, write_file, CliError, CliResult};

/// Defect above which `evaluate-suf` flags a knot as dynamically inconsistent.
pub const EVALUATE_DEFECT_TOL: f64 = 1e-5;

fn parse_objective(s: &str) -> Result<Objective, String> {
    s.parse::<Objective>().map_err(|e| e.to_string())
}

fn load(path: &Path) -> CliResult<Scenario> {
    load_scenario(path).map_err(|e| CliError::Usage(format!("scenario '{}': {e}", path.display())))
}

fn load_trajectory(path: &Path) -> CliResult<Trajectory> {
    Trajectory::load(path).map_err(|e| CliError::Usage(format!("trajectory '{}': {e}", path.display())))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).context("cannot format CSV row")?;
    }
    Ok(w.into_inner().context("cannot flush CSV")?)
}

fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

/// Runs `f` over `items` on at most [`thread_count`] workers, keeping order.
fn run_legs<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    let workers = thread_count().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    })
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Scenario file.
    pub scenario: PathBuf,
    /// G1, G2 or G3; defaults to the scenario's objective.
    #[arg(long, value_parser = parse_objective)]
    pub objective: Option<Objective>,
    /// Trajectory used as the initial guess instead of a feasibility solve.
    #[arg(long)]
    pub seed_from: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario's mesh point count.
    #[arg(long)]
    pub mesh_points: Option<usize>,
    /// Overrides the terrain incline, in degrees.
    #[arg(long)]
    pub incline: Option<f64>,
}

#[derive(Debug)]
pub struct SolveOutput {
    pub trajectory: PathBuf,
    pub manifest: PathBuf,
    pub outcome: PlanOutcome,
}

pub fn solve(args: &SolveArgs) -> CliResult<SolveOutput> {
    let mut scenario = load(&args.scenario)?;
    if let Some(m) = args.mesh_points {
        if m < 2 {
            return Err(CliError::Usage(format!("need at least 2 mesh points, got {m}")));
        }
        scenario = scenario.with_mesh_points(m);
    }
    if let Some(d) = args.incline {
        scenario = scenario.with_incline(d);
    }
    if let Some(o) = args.objective {
        scenario = scenario.with_objective(o);
    }
    let seed = match &args.seed_from {
        Some(path) => {
            let t = load_trajectory(path)?;
            t.validate_shape(&scenario)
                .map_err(|e| CliError::Usage(format!("seed '{}' does not fit the scenario: {e}", path.display())))?;
            Some(t)
        }
        None => None,
    };

    let mut hasher = InputHasher::default();
    hasher.file("scenario", &args.scenario)?;
    if let Some(path) = &args.seed_from {
        hasher.file("seed", path)?;
    }
    hasher.param("objective", scenario.objective);
    hasher.param("mesh_points", scenario.mesh_points);
    hasher.param("incline", format!("{:?}", scenario.terrain.incline_deg));

    let start = Instant::now();
    let outcome = plan(&scenario, seed.as_ref()).map_err(|e| CliError::Usage(e.to_string()))?;
    let solve_time = start.elapsed().as_secs_f64();
    let audit = audit_trajectory(&scenario, &outcome.trajectory);
    let validated = audit.passes(scenario.solver.tol_feas);

    let stem = args.scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    let traj_path = output_path(&args.out, &format!("{stem}_{}.json", scenario.objective));
    let manifest = output_path(&args.out, &format!("{stem}_{}.manifest.json", scenario.objective));
    let mut trajectory = outcome.trajectory.clone();
    if outcome.converged() && !validated {
        trajectory.status = "audit-failed".into();
    }
    write_file(&traj_path, trajectory.to_json().as_bytes())?;

    let mut m = RunManifest::new("solve", &args.scenario, hasher.finish());
    m.objective = Some(scenario.objective.to_string());
    m.solver = Some(SolverSummary::from(&outcome.report));
    m.warm_start = outcome.warm_start.as_ref().map(SolverSummary::from);
    m.audit = Some(audit);
    m.success = outcome.converged() && validated;
    m.outputs.push(traj_path.display().to_string());
    m.wall_times_s.insert("solve".into(), solve_time);
    if let Some(w) = &outcome.warm_start {
        m.wall_times_s.insert("warm_start".into(), w.wall_time_s);
    }
    let success = m.success;
    m.write(&manifest)?;

    if !outcome.converged() {
        return Err(CliError::Solver(format!(
            "{} solve stopped with status {}; best iterate written to '{}'",
            scenario.objective,
            outcome.report.status,
            traj_path.display()
        )));
    }
    if !success {
        return Err(CliError::Solver(format!(
            "trajectory fails re-validation (worst violation {:.3e} > {:.1e})",
            audit.worst(),
            scenario.solver.tol_feas
        )));
    }
    Ok(SolveOutput {
        trajectory: traj_path,
        manifest,
        outcome,
    })
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Trajectory file written by `solve`.
    pub trajectory: PathBuf,
    /// Sampled directions for the oracle; 0 skips it.
    #[arg(long, default_value_t = DEFAULT_DIRECTIONS)]
    pub oracle_dirs: usize,
    /// Direction-set seed; defaults to the scenario's solver seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SufSummary {
    pub rows: Vec<SufRow>,
    pub mean: f64,
    pub std: f64,
    pub flagged: usize,
    pub csv: Vec<u8>,
}

pub fn evaluate_suf(args: &EvaluateArgs) -> CliResult<SufSummary> {
    let traj = load_trajectory(&args.trajectory)?;
    let scenario = traj
        .scenario()
        .map_err(|e| CliError::Usage(format!("trajectory '{}': {e}", args.trajectory.display())))?;
    traj.validate_shape(&scenario)
        .map_err(|e| CliError::Usage(format!("trajectory '{}': {e}", args.trajectory.display())))?;
    let seed = args.seed.unwrap_or(scenario.solver.seed);
    let start = Instant::now();
    let mut rows = suf_rows(&scenario, &traj, args.oracle_dirs, seed);
    for (row, defect) in rows.iter_mut().zip(interval_euler_residuals(&scenario, &traj)) {
        if !(defect <= EVALUATE_DEFECT_TOL) {
            let note = format!("defect {defect:.3e} exceeds {EVALUATE_DEFECT_TOL:.0e}");
            row.flag = if row.flag.is_empty() { note } else { format!("{}; {note}", row.flag) };
        }
    }
    let rho: Vec<f64> = rows.iter().map(|r| r.rho_reform).collect();
    let (mean, std) = mean_std(&rho);
    let flagged = rows.iter().filter(|r| !r.flag.is_empty()).count();
    let csv = csv_bytes(&rows)?;

    if let Some(path) = &args.out {
        write_file(path, &csv)?;
        let mut hasher = InputHasher::default();
        hasher.file("trajectory", &args.trajectory)?;
        hasher.param("oracle_dirs", args.oracle_dirs);
        hasher.param("seed", seed);
        let mut m = RunManifest::new("evaluate-suf", &args.trajectory, hasher.finish());
        m.objective = Some(traj.objective.to_string());
        m.success = flagged == 0;
        m.outputs.push(path.display().to_string());
        m.wall_times_s.insert("evaluate".into(), start.elapsed().as_secs_f64());
        m.write(&manifest_path(path))?;
    }
    Ok(SufSummary {
        rows,
        mean,
        std,
        flagged,
        csv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// Terrain incline in degrees.
    Incline,
    /// Friction coefficient.
    Friction,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Scenario used as the template for every value.
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "incline")]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_objective, default_value = "G1,G2,G3")]
    pub objectives: Vec<Objective>,
    #[arg(long, default_value = "out/sweep.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub mesh_points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param_value: f64,
    pub objective: String,
    #[serde(rename = "suf_mean_N")]
    pub suf_mean: f64,
    #[serde(rename = "suf_std_N")]
    pub suf_std: f64,
    pub status: String,
}

/// Solves `G1` and then every requested objective from it.
fn solve_leg(scenario: &Scenario, objectives: &[Objective]) -> Vec<(Objective, Result<PlanOutcome, String>)> {
    let g1 = plan(&scenario.with_objective(Objective::G1), None).map_err(|e| e.to_string());
    objectives
        .iter()
        .map(|&o| {
            let r = match (&g1, o) {
                (Err(e), _) => Err(e.clone()),
                (Ok(g1), Objective::G1) => Ok(g1.clone()),
                (Ok(g1), _) => plan(&scenario.with_objective(o), Some(&g1.trajectory)).map_err(|e| e.to_string()),
            };
            (o, r)
        })
        .collect()
}

fn dedup_sorted(values: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn sweep(args: &SweepArgs) -> CliResult<Vec<SweepRow>> {
    let template = load(&args.scenario)?;
    let template = match args.mesh_points {
        Some(m) => template.with_mesh_points(m),
        None => template,
    };
    if args.values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("sweep values must be finite".into()));
    }
    let values = dedup_sorted(&args.values);
    let mut objectives = args.objectives.clone();
    objectives.dedup();
    if values.is_empty() || objectives.is_empty() {
        return Err(CliError::Usage("need at least one value and one objective".into()));
    }
    let scenarios: Vec<Scenario> = values
        .iter()
        .map(|&v| match args.param {
            SweepParam::Incline => template.with_incline(v),
            SweepParam::Friction => {
                let mut s = template.clone();
                s.friction_mu = v;
                s
            }
        })
        .collect();

    let start = Instant::now();
    let legs = run_legs(&scenarios, |s| {
        solve_leg(s, &objectives)
            .into_iter()
            .map(|(o, r)| match r {
                Ok(out) => {
                    let rho: Vec<f64> = suf_curve(s, &out.trajectory).into_iter().map(|(_, r)| r).collect();
                    let (mean, std) = mean_std(&rho);
                    (o, mean, std, out.report.status.to_string())
                }
                Err(e) => {
                    log::warn!("{o} leg failed: {e}");
                    (o, f64::NAN, f64::NAN, "error".to_string())
                }
            })
            .collect::<Vec<_>>()
    });
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(legs)
        .flat_map(|(&v, leg)| {
            leg.into_iter().map(move |(o, mean, std, status)| SweepRow {
                param_value: v,
                objective: o.to_string(),
                suf_mean: mean,
                suf_std: std,
                status,
            })
        })
        .collect();
    write_file(&args.out, &csv_bytes(&rows)?)?;

    let mut hasher = InputHasher::default();
    hasher.file("scenario", &args.scenario)?;
    hasher.param("param", format!("{:?}", args.param));
    hasher.param("values", format!("{values:?}"));
    hasher.param("objectives", format!("{objectives:?}"));
    hasher.param("mesh_points", template.mesh_points);
    let mut m = RunManifest::new("sweep", &args.scenario, hasher.finish());
    let failures = rows.iter().filter(|r| r.status != "converged").count();
    m.success = failures == 0;
    m.outputs.push(args.out.display().to_string());
    m.wall_times_s.insert("sweep".into(), start.elapsed().as_secs_f64());
    m.write(&manifest_path(&args.out))?;
    if failures > 0 {
        return Err(CliError::Solver(format!("{failures} of {} sweep rows did not converge", rows.len())));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Args)]
pub struct RefineArgs {
    pub scenario: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "11,21,41")]
    pub resolutions: Vec<usize>,
    #[arg(long, default_value_t = 81)]
    pub baseline: usize,
    #[arg(long, value_parser = parse_objective, default_value = "G3")]
    pub objective: Objective,
    #[arg(long, default_value = "out/refine.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineRow {
    pub resolution: usize,
    #[serde(rename = "rmse_N")]
    pub rmse: f64,
    pub status: String,
}

pub fn refine(args: &RefineArgs) -> CliResult<Vec<RefineRow>> {
    let template = load(&args.scenario)?.with_objective(args.objective);
    let mut resolutions = args.resolutions.clone();
    resolutions.sort_unstable();
    resolutions.dedup();
    if resolutions.is_empty() {
        return Err(CliError::Usage("need at least one resolution".into()));
    }
    if let Some(&r) = resolutions.iter().find(|&&r| r < 2 || r > args.baseline) {
        return Err(CliError::Usage(format!(
            "resolution {r} must lie between 2 and the baseline {}",
            args.baseline
        )));
    }

    let mut meshes = resolutions.clone();
    if !meshes.contains(&args.baseline) {
        meshes.push(args.baseline);
    }
    let start = Instant::now();
    let curves = run_legs(&meshes, |&m| {
        let s = template.with_mesh_points(m);
        let out = solve_leg(&s, &[args.objective]).pop().expect("one objective").1;
        out.map(|o| (suf_curve(&s, &o.trajectory), o.report.status.to_string()))
    });
    let by_mesh = |m: usize| &curves[meshes.iter().position(|&x| x == m).expect("solved mesh")];
    let baseline = by_mesh(args.baseline);
    let rows: Vec<RefineRow> = resolutions
        .iter()
        .map(|&r| match (by_mesh(r), baseline) {
            (Ok((curve, status)), Ok((base, base_status))) => RefineRow {
                resolution: r,
                rmse: rmse_against(curve, base),
                status: if base_status == "converged" { status.clone() } else { format!("baseline {base_status}") },
            },
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("resolution {r}: {e}");
                RefineRow {
                    resolution: r,
                    rmse: f64::NAN,
                    status: "error".into(),
                }
            }
        })
        .collect();
    write_file(&args.out, &csv_bytes(&rows)?)?;

    let mut hasher = InputHasher::default();
    hasher.file("scenario", &args.scenario)?;
    hasher.param("resolutions", format!("{resolutions:?}"));
    hasher.param("baseline", args.baseline);
    hasher.param("objective", args.objective);
    let mut m = RunManifest::new("refine", &args.scenario, hasher.finish());
    m.objective = Some(args.objective.to_string());
    let failures = rows.iter().filter(|r| r.status != "converged").count();
    m.success = failures == 0;
    m.outputs.push(args.out.display().to_string());
    m.wall_times_s.insert("refine".into(), start.elapsed().as_secs_f64());
    m.write(&manifest_path(&args.out))?;
    if failures > 0 {
        return Err(CliError::Solver(format!("{failures} of {} resolutions did not converge", rows.len())));
    }
    Ok(rows)
}
