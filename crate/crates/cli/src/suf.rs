//! Per-knot disturbance rejection reports and the statistics built on them.

use robusttraj::model::Scenario;
use robusttraj::oracle::suf_bruteforce;
use robusttraj::robustness::evaluate_trajectory;
use robusttraj::transcription::Trajectory;
use serde::Serialize;

/// One CSV row of a SUF report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufRow {
    pub knot: usize,
    pub time_s: f64,
    #[serde(rename = "rho_reform_N")]
    pub rho_reform: f64,
    /// NaN when the oracle could not be evaluated at this knot.
    #[serde(rename = "rho_oracle_N")]
    pub rho_oracle: f64,
    #[serde(rename = "min_torque_slack_Nm")]
    pub min_torque_slack: f64,
    #[serde(rename = "min_cone_slack_N")]
    pub min_cone_slack: f64,
    /// Empty for a clean knot, otherwise what went wrong.
    pub flag: String,
}

/// Reformulation and oracle values at every interval's starting knot.
pub fn suf_rows(scenario: &Scenario, traj: &Trajectory, oracle_dirs: usize, seed: u64) -> Vec<SufRow> {
    let contacts = scenario.contacts();
    let evals = evaluate_trajectory(scenario, traj);
    evals
        .into_iter()
        .enumerate()
        .map(|(k, e)| {
            let mut flags: Vec<String> = e.diagnostic.into_iter().collect();
            let oracle = if oracle_dirs == 0 {
                f64::NAN
            } else {
                match suf_bruteforce(
                    &scenario.model,
                    &contacts,
                    &traj.q[k],
                    &traj.v[k],
                    &traj.tau[k],
                    &traj.lambda[k],
                    oracle_dirs,
                    seed,
                ) {
                    Ok(m) => m.rho_min,
                    Err(err) => {
                        flags.push(format!("oracle: {err}"));
                        f64::NAN
                    }
                }
            };
            SufRow {
                knot: k,
                time_s: traj.times_s[k],
                rho_reform: e.rho,
                rho_oracle: oracle,
                min_torque_slack: e.min_torque_slack,
                min_cone_slack: e.min_cone_slack,
                flag: flags.join("; "),
            }
        })
        .collect()
}

/// Reformulation values only, as `(time, ρ)` pairs.
pub fn suf_curve(scenario: &Scenario, traj: &Trajectory) -> Vec<(f64, f64)> {
    evaluate_trajectory(scenario, traj)
        .iter()
        .enumerate()
        .map(|(k, e)| (traj.times_s[k], e.rho))
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Piecewise-linear interpolation of `curve` (sorted by time) at `t`,
/// held constant outside its time span.
pub fn interpolate(curve: &[(f64, f64)], t: f64) -> f64 {
    let Some(&(t0, y0)) = curve.first() else {
        return f64::NAN;
    };
    if t <= t0 {
        return y0;
    }
    let i = curve.partition_point(|&(ti, _)| ti <= t) - 1;
    if i + 1 == curve.len() {
        return curve[i].1;
    }
    let ((ta, ya), (tb, yb)) = (curve[i], curve[i + 1]);
    ya + (yb - ya) * (t - ta) / (tb - ta)
}

/// Root-mean-square difference between `curve` interpolated onto the
/// baseline's times and the baseline values.
pub fn rmse_against(curve: &[(f64, f64)], baseline: &[(f64, f64)]) -> f64 {
    let sq: f64 = baseline.iter().map(|&(t, y)| (interpolate(curve, t) - y).powi(2)).sum();
    (sq / baseline.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_of_known_sample() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn interpolation_hits_samples_exactly() {
        let curve = [(0.0, 1.0), (0.1, 3.0), (0.30000000000000004, -2.0)];
        for &(t, y) in &curve {
            assert_eq!(interpolate(&curve, t), y);
        }
        assert!((interpolate(&curve, 0.05) - 2.0).abs() < 1e-15);
        assert_eq!(interpolate(&curve, 5.0), -2.0);
        assert_eq!(interpolate(&curve, -1.0), 1.0);
    }

    #[test]
    fn rmse_of_curve_against_itself_is_zero() {
        let curve: Vec<(f64, f64)> = (0..80).map(|k| (k as f64 * 0.025, (k as f64).sin())).collect();
        assert_eq!(rmse_against(&curve, &curve), 0.0);
    }

    #[test]
    fn rmse_of_constant_offset() {
        let a = [(0.0, 1.0), (1.0, 1.0)];
        let b = [(0.0, 3.0), (0.5, 3.0), (1.0, 3.0)];
        assert_eq!(rmse_against(&a, &b), 2.0);
    }
}
