mod common;

use nalgebra::{DMatrix, Rotation3, Unit, Vector3};
use rand::Rng;
use robusttraj::dynamics::{configuration_rates, forward_dynamics, mrp_to_rotation, rotation_to_mrp, Kinematics};
use robusttraj::model::{Objective, PointId, Waypoint};
use robusttraj::nlp::{check_derivatives, probe_sparsity, BlockKind, ConstraintBlock, NlpProblem};
use robusttraj::robustness::extend_problem;
use robusttraj::transcription::{
    build_problem, default_seed, euler_residual, friction_residuals, gripper_residuals, DecisionLayout,
    TranscriptionError,
};

use common::{random_q, random_vector, rng};

fn block_index(problem: &NlpProblem, name: &str) -> usize {
    problem.blocks.iter().position(|b| b.name() == name).unwrap()
}

#[test]
fn constraint_counts_match_closed_form() {
    for model_name in ["mini", "anymal_jaco_like"] {
        let model = common::model(model_name);
        for m in [2, 5, 11, 21] {
            let mut scenario = common::scenario("flat").with_mesh_points(m);
            scenario.model = model.clone();
            let t = build_problem(&scenario).unwrap();
            let (nq, nv, nj, ns, nc) = (model.nq(), model.nv(), model.nj(), model.ns(), model.nc());
            let n = m - 1;
            assert_eq!(t.problem.n(), m * (nq + nv) + n * (nj + ns), "{model_name} M={m}");
            assert_eq!(t.layout.len(), t.problem.n());
            let defects = t.problem.blocks.iter().filter(|b| b.name().starts_with("defect")).count();
            assert_eq!(defects, n);
            let eq = n * (nq + nv) + (m - 1) * 3 * nc + 10;
            assert_eq!(t.problem.constraint_count(BlockKind::Equality), eq, "{model_name} M={m}");
            assert_eq!(t.problem.constraint_count(BlockKind::Inequality), n * 5 * nc);

            let robust = extend_problem(t, &scenario.clone().with_objective(Objective::G3));
            assert_eq!(robust.problem.n(), m * (nq + nv) + n * (nj + ns) + n * (1 + 3 * ns));
            assert_eq!(robust.problem.constraint_count(BlockKind::Equality), eq + n * model.n_base() * 3);
            assert_eq!(robust.problem.constraint_count(BlockKind::Inequality), n * 5 * nc * 2 + n * 2 * nj);
        }
    }
}

#[test]
fn layout_excludes_final_inputs() {
    let model = common::model("mini");
    let layout = DecisionLayout::new(&model, 11);
    assert_eq!(layout.lambda(9).end, layout.len());
    assert_eq!(layout.tau(9).end, layout.lambda(0).start);
}

#[test]
fn euler_step_zeroes_the_defect() {
    let scenario = common::scenario("flat").with_mesh_points(4);
    let t = build_problem(&scenario).unwrap();
    let model = &scenario.model;
    let layout = t.layout;
    let h = t.mesh.step;
    let mut r = rng(31);
    for _ in 0..10 {
        let mut x = vec![0.0; layout.len()];
        let q = random_q(model, &mut r);
        let v = random_vector(model.nv(), 1.0, &mut r);
        let tau = random_vector(model.nj(), 10.0, &mut r);
        let lambda = random_vector(model.ns(), 50.0, &mut r);
        let k = r.gen_range(0..layout.intervals());
        x[layout.q(k)].copy_from_slice(&q);
        x[layout.v(k)].copy_from_slice(&v);
        x[layout.tau(k)].copy_from_slice(&tau);
        x[layout.lambda(k)].copy_from_slice(&lambda);
        let qdot = configuration_rates(model, &q, &v);
        let vdot = forward_dynamics(model, &q, &v, &tau, &lambda, &Vector3::zeros(), &scenario.gravity).unwrap();
        for i in 0..model.nq() {
            x[layout.q(k + 1).start + i] = q[i] + h * qdot[i];
        }
        for i in 0..model.nv() {
            x[layout.v(k + 1).start + i] = v[i] + h * vdot[i];
        }
        let c = t.problem.eval_block(block_index(&t.problem, &format!("defect[{k}]")), &x);
        let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(c.iter().all(|v| v.abs() <= 1e-12 * scale), "{c:?}");
    }
}

#[test]
fn seed_is_a_valid_starting_point() {
    for name in ["flat", "steps", "ramp"] {
        let scenario = common::scenario(name);
        let seed = default_seed(&scenario);
        let t = build_problem(&scenario).unwrap();
        let x = t.layout.pack(&seed);
        for i in 0..x.len() {
            assert!(t.problem.lower[i] <= x[i] && x[i] <= t.problem.upper[i], "{name}: variable {i}");
        }
        assert!(euler_residual(&scenario, &seed).is_finite());
        let contacts = scenario.contacts();
        for q in &seed.q {
            assert_eq!(q, &seed.q[0]);
            let kin = Kinematics::new(&scenario.model, q);
            for (i, c) in contacts.iter().enumerate() {
                let p = kin.point_position(&scenario.model, PointId::Contact(i));
                assert!((p - c.anchor).norm() < 1e-9, "{name}");
            }
        }
        if name == "flat" {
            for lambda in &seed.lambda {
                for (i, c) in contacts.iter().enumerate() {
                    let f = Vector3::from_column_slice(&lambda[3 * i..3 * i + 3]);
                    assert!(friction_residuals(&f, c).iter().all(|r| *r <= 0.0));
                }
            }
        }
    }
}

#[test]
fn torque_objective_vanishes_at_zero_torque() {
    let scenario = common::scenario("flat").with_objective(Objective::G2);
    let t = build_problem(&scenario).unwrap();
    let mut x = t.layout.pack(&default_seed(&scenario));
    for k in 0..t.layout.intervals() {
        x[t.layout.tau(k)].fill(0.0);
    }
    assert_eq!(t.problem.objective(&x), 0.0);
    let mut r = rng(4);
    for k in 0..t.layout.intervals() {
        for i in t.layout.tau(k) {
            x[i] = r.gen_range(-5.0..5.0);
        }
    }
    let expected: f64 = (0..t.layout.intervals()).flat_map(|k| x[t.layout.tau(k)].to_vec()).map(|v| v * v).sum();
    assert!((t.problem.objective(&x) - expected).abs() <= 1e-12 * expected);
    let objectives: Vec<_> = check_derivatives(&t.problem, &x, 1)
        .into_iter()
        .filter(|c| c.name.starts_with("torque"))
        .collect();
    assert_eq!(objectives.len(), t.layout.intervals());
    assert!(objectives.iter().all(|c| c.max_rel_error <= 1e-8));
}

/// Random point inside the variable box; unbounded entries are drawn from
/// `±scale`.
fn random_point(problem: &NlpProblem, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..problem.n())
        .map(|i| {
            let lo = problem.lower[i].max(-scale);
            let hi = problem.upper[i].min(scale);
            if lo < hi {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        })
        .collect()
}

#[test]
fn every_block_passes_derivative_checks_at_random_points() {
    let scenario = common::scenario("steps").with_mesh_points(6).with_objective(Objective::G2);
    let nominal = build_problem(&scenario).unwrap();
    let robust = extend_problem(nominal, &scenario);
    let problem = &robust.problem;
    let mut r = rng(2024);
    for point in 0..10 {
        let mut x = random_point(problem, 1.0, &mut r);
        // keep the base attitude away from the MRP singularity
        for k in 0..robust.layout.nominal.knots {
            for i in robust.layout.nominal.q(k).skip(3).take(3) {
                x[i] *= 0.3;
            }
        }
        for c in check_derivatives(problem, &x, point) {
            assert!(!c.flagged, "point {point}: {} error {:.3e}", c.name, c.max_rel_error);
        }
    }
}

#[test]
fn declared_sparsity_covers_true_dependencies() {
    let scenario = common::scenario("flat").with_mesh_points(4).with_objective(Objective::G3);
    let robust = extend_problem(build_problem(&scenario).unwrap(), &scenario);
    let mut r = rng(8);
    let x = random_point(&robust.problem, 1.0, &mut r);
    assert!(probe_sparsity(&robust.problem, &x, 3).is_empty());
}

struct Corrupted;

impl ConstraintBlock for Corrupted {
    fn name(&self) -> String {
        "corrupted".into()
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn vars(&self) -> &[usize] {
        &[0, 1]
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[1];
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[x[1], x[0] + 0.01])
    }
}

#[test]
fn corrupted_jacobian_is_flagged() {
    let mut problem = NlpProblem::new(vec![-1.0; 2], vec![1.0; 2]);
    problem.add(Corrupted);
    let checks = check_derivatives(&problem, &[0.3, -0.2], 0);
    assert!(checks[0].flagged);
}

#[test]
fn gripper_residuals_vanish_at_the_reached_pose_and_leave_yaw_free() {
    let model = common::model("mini");
    let mut r = rng(12);
    for _ in 0..5 {
        let q = random_q(&model, &mut r);
        let kin = Kinematics::new(&model, &q);
        let p = kin.point_position(&model, PointId::EndEffector);
        let a = kin.body_rotation[model.end_effector.body] * model.end_effector.axis;
        let target = Waypoint {
            position: p.into(),
            axis: a.into(),
        };
        let res = gripper_residuals(&model, &q, &target).unwrap();
        assert!(res.iter().all(|v| v.abs() < 1e-12), "{res:?}");

        // rotate the whole robot about the target axis through the gripper
        let angle = r.gen_range(-2.0..2.0);
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(a), angle);
        let mut turned = q.clone();
        let base = Vector3::new(q[0], q[1], q[2]);
        let moved = p + rot * (base - p);
        turned[..3].copy_from_slice(moved.as_slice());
        let attitude = rot.matrix() * mrp_to_rotation(&Vector3::new(q[3], q[4], q[5]));
        turned[3..6].copy_from_slice(rotation_to_mrp(&attitude).as_slice());
        let res = gripper_residuals(&model, &turned, &target).unwrap();
        assert!(res.iter().all(|v| v.abs() < 1e-9), "yaw {angle}: {res:?}");

        // a pure translation moves the position residual by exactly that much
        let delta = Vector3::new(0.05, -0.02, 0.11);
        let mut shifted = q.clone();
        for i in 0..3 {
            shifted[i] += delta[i];
        }
        let res = gripper_residuals(&model, &shifted, &target).unwrap();
        for i in 0..3 {
            assert!((res[i] - delta[i]).abs() < 1e-12);
        }
        assert!(res[3].abs() < 1e-12 && res[4].abs() < 1e-12);
    }
}

#[test]
fn unreachable_task_only_warns() {
    let mut scenario = common::scenario("flat");
    scenario.task.place.position = [10.0, 0.0, 5.0];
    let t = build_problem(&scenario).unwrap();
    assert!(!t.warnings.is_empty());
}

#[test]
fn fixed_base_model_is_rejected() {
    let mut scenario = common::scenario("flat");
    scenario.model = common::model("fixed_arm");
    assert!(matches!(build_problem(&scenario), Err(TranscriptionError::FixedBase)));
}
