//! Robot-model and scenario file formats.
//!
//! Both files are JSON. A model describes a kinematic tree of rigid bodies
//! connected by revolute joints, rooted at a (usually floating) base, plus
//! the point contacts and the end-effector frame. A scenario binds a model
//! to a terrain (contact anchors and normals), a pick-and-place task, a mesh
//! and an objective.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];
pub const DEFAULT_FRICTION: f64 = 0.7;

const AXIS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid entity '{entity}': {reason}")]
    Semantic { entity: String, reason: String },
    #[error("cannot read '{path}': {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    fn semantic(entity: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Semantic {
            entity: entity.into(),
            reason: reason.into(),
        }
    }

    fn from_json(err: serde_json::Error) -> Self {
        match err.classify() {
            serde_json::error::Category::Data => ModelError::Semantic {
                entity: format!("line {}", err.line()),
                reason: err.to_string(),
            },
            _ => ModelError::Syntax {
                line: err.line(),
                column: err.column(),
                message: err.to_string(),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// File schemas

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    #[serde(default = "default_true")]
    floating_base: bool,
    bodies: Vec<BodyFile>,
    #[serde(default)]
    joints: Vec<JointFile>,
    #[serde(default)]
    contacts: Vec<ContactFile>,
    end_effector: EndEffectorFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyFile {
    name: String,
    parent_joint: Option<String>,
    mass: f64,
    com: [f64; 3],
    inertia: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    name: String,
    parent_body: String,
    child_body: String,
    axis: [f64; 3],
    origin_xyz: [f64; 3],
    origin_rpy: [f64; 3],
    q_limits: [f64; 2],
    v_limit: f64,
    tau_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_nominal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactFile {
    body: String,
    offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndEffectorFile {
    body: String,
    offset: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
}

fn default_true() -> bool {
    true
}

// ---------------------------------------------------------------------------
// In-memory model

/// Rigid-body inertia about the body's COM, expressed in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub rotational: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    /// Index of the joint connecting this body to its parent; `None` for the root.
    pub parent_joint: Option<usize>,
    pub inertia: BodyInertia,
}

/// Revolute joint. The child frame is the joint frame rotated by `q` about `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent_body: usize,
    pub child_body: usize,
    pub axis: Vector3<f64>,
    pub origin_xyz: Vector3<f64>,
    pub origin_rpy: Vector3<f64>,
    /// Fixed rotation from the parent body frame to the joint frame.
    pub origin_rotation: Matrix3<f64>,
    pub q_limits: (f64, f64),
    pub v_limit: f64,
    pub tau_limit: f64,
    pub q_nominal: f64,
}

/// A point on a body that can touch the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSite {
    pub body: usize,
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndEffector {
    pub body: usize,
    pub offset: Vector3<f64>,
    /// Gripper approach axis in the body frame.
    pub axis: Vector3<f64>,
}

/// Identifies a point whose kinematics can be queried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointId {
    Contact(usize),
    EndEffector,
}

/// Immutable kinematic tree. Bodies are stored parent-before-child and joint
/// `i` always has child body `i + 1`; body 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub floating_base: bool,
    pub bodies: Vec<Body>,
    pub joints: Vec<Joint>,
    pub contacts: Vec<ContactSite>,
    pub end_effector: EndEffector,
}

impl Model {
    /// Joint count.
    pub fn nj(&self) -> usize {
        self.joints.len()
    }

    /// Number of base coordinates/velocities (6 or 0).
    pub fn n_base(&self) -> usize {
        if self.floating_base {
            6
        } else {
            0
        }
    }

    /// Generalized coordinate dimension (position + MRP + joints).
    pub fn nq(&self) -> usize {
        self.n_base() + self.nj()
    }

    /// Generalized velocity dimension.
    pub fn nv(&self) -> usize {
        self.n_base() + self.nj()
    }

    pub fn nc(&self) -> usize {
        self.contacts.len()
    }

    /// Contact force dimension, three per point contact.
    pub fn ns(&self) -> usize {
        3 * self.nc()
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.inertia.mass).sum()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn check_point(&self, point: PointId) -> Result<(), ModelError> {
        match point {
            PointId::Contact(i) if i >= self.nc() => Err(ModelError::semantic(
                format!("contact {i}"),
                format!("model has {} contacts", self.nc()),
            )),
            _ => Ok(()),
        }
    }

    /// Body index and local offset of a point.
    pub fn point_site(&self, point: PointId) -> (usize, Vector3<f64>) {
        match point {
            PointId::Contact(i) => (self.contacts[i].body, self.contacts[i].offset),
            PointId::EndEffector => (self.end_effector.body, self.end_effector.offset),
        }
    }

    /// Nominal joint configuration (declared `q_nominal`, or limit midpoints).
    pub fn nominal_joints(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.q_nominal).collect()
    }

    /// Serializes back to the model file format.
    pub fn to_json(&self) -> String {
        let body_name = |i: usize| self.bodies[i].name.clone();
        let file = ModelFile {
            name: self.name.clone(),
            floating_base: self.floating_base,
            bodies: self
                .bodies
                .iter()
                .map(|b| {
                    let r = &b.inertia.rotational;
                    BodyFile {
                        name: b.name.clone(),
                        parent_joint: b.parent_joint.map(|j| self.joints[j].name.clone()),
                        mass: b.inertia.mass,
                        com: b.inertia.com.into(),
                        inertia: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 1)], r[(1, 2)], r[(2, 2)]],
                    }
                })
                .collect(),
            joints: self
                .joints
                .iter()
                .map(|j| JointFile {
                    name: j.name.clone(),
                    parent_body: body_name(j.parent_body),
                    child_body: body_name(j.child_body),
                    axis: j.axis.into(),
                    origin_xyz: j.origin_xyz.into(),
                    origin_rpy: j.origin_rpy.into(),
                    q_limits: [j.q_limits.0, j.q_limits.1],
                    v_limit: j.v_limit,
                    tau_limit: j.tau_limit,
                    q_nominal: Some(j.q_nominal),
                })
                .collect(),
            contacts: self
                .contacts
                .iter()
                .map(|c| ContactFile {
                    body: body_name(c.body),
                    offset: c.offset.into(),
                })
                .collect(),
            end_effector: EndEffectorFile {
                body: body_name(self.end_effector.body),
                offset: self.end_effector.offset.into(),
                axis: Some(self.end_effector.axis.into()),
            },
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Parses and validates a model file.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let file: ModelFile = serde_json::from_str(text).map_err(ModelError::from_json)?;
    build_model(file)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text)
}

fn build_model(file: ModelFile) -> Result<Model, ModelError> {
    if file.bodies.is_empty() {
        return Err(ModelError::semantic(&file.name, "model has no bodies"));
    }

    let mut body_by_name = HashMap::new();
    for (i, b) in file.bodies.iter().enumerate() {
        if body_by_name.insert(b.name.as_str(), i).is_some() {
            return Err(ModelError::semantic(&b.name, "duplicate body name"));
        }
    }
    let mut joint_by_name = HashMap::new();
    for (i, j) in file.joints.iter().enumerate() {
        if joint_by_name.insert(j.name.as_str(), i).is_some() {
            return Err(ModelError::semantic(&j.name, "duplicate joint name"));
        }
    }

    // Per-joint checks and child -> joint map.
    let mut joint_of_child: HashMap<usize, usize> = HashMap::new();
    for (ji, j) in file.joints.iter().enumerate() {
        let parent = *body_by_name
            .get(j.parent_body.as_str())
            .ok_or_else(|| ModelError::semantic(&j.name, format!("unknown parent body '{}'", j.parent_body)))?;
        let child = *body_by_name
            .get(j.child_body.as_str())
            .ok_or_else(|| ModelError::semantic(&j.name, format!("unknown child body '{}'", j.child_body)))?;
        if parent == child {
            return Err(ModelError::semantic(&j.name, "joint connects a body to itself"));
        }
        if joint_of_child.insert(child, ji).is_some() {
            return Err(ModelError::semantic(&j.child_body, "body has more than one parent joint"));
        }
        let numbers = [
            &j.axis[..],
            &j.origin_xyz[..],
            &j.origin_rpy[..],
            &j.q_limits[..],
            &[j.v_limit, j.tau_limit][..],
        ]
        .concat();
        if !finite(&numbers) {
            return Err(ModelError::semantic(&j.name, "non-finite number"));
        }
        let norm = vec3(j.axis).norm();
        if (norm - 1.0).abs() > AXIS_TOL {
            return Err(ModelError::semantic(&j.name, format!("axis is not unit length (norm {norm})")));
        }
        if j.q_limits[0] > j.q_limits[1] {
            return Err(ModelError::semantic(&j.name, "position limits have lower > upper"));
        }
        if j.v_limit < 0.0 || j.tau_limit < 0.0 {
            return Err(ModelError::semantic(&j.name, "velocity and torque limits must be non-negative"));
        }
        if let Some(qn) = j.q_nominal {
            if !(j.q_limits[0]..=j.q_limits[1]).contains(&qn) {
                return Err(ModelError::semantic(&j.name, "nominal position outside limits"));
            }
        }
    }

    // Bodies: declared parent_joint must agree with joints' child_body.
    let mut roots = Vec::new();
    for (bi, b) in file.bodies.iter().enumerate() {
        let from_joints = joint_of_child.get(&bi).copied();
        let declared = match &b.parent_joint {
            None => None,
            Some(name) => Some(
                *joint_by_name
                    .get(name.as_str())
                    .ok_or_else(|| ModelError::semantic(&b.name, format!("unknown parent joint '{name}'")))?,
            ),
        };
        if declared != from_joints {
            return Err(ModelError::semantic(&b.name, "parent_joint disagrees with joint child_body"));
        }
        if declared.is_none() {
            roots.push(bi);
        }
        if !(b.mass > 0.0) || !b.mass.is_finite() {
            return Err(ModelError::semantic(&b.name, "mass must be positive"));
        }
        if !finite(&b.com) || !finite(&b.inertia) {
            return Err(ModelError::semantic(&b.name, "non-finite inertial parameter"));
        }
        let i = b.inertia;
        let m = Matrix3::new(i[0], i[1], i[2], i[1], i[3], i[4], i[2], i[4], i[5]);
        if m.cholesky().is_none() {
            return Err(ModelError::semantic(&b.name, "rotational inertia is not positive definite"));
        }
    }
    if roots.len() != 1 {
        let entity = roots
            .iter()
            .map(|&r| file.bodies[r].name.clone())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(ModelError::semantic(
            if entity.is_empty() { file.name.clone() } else { entity },
            format!("expected exactly one root body, found {}", roots.len()),
        ));
    }
    let root = roots[0];

    // Topological order via BFS from the root; anything unreached sits on a cycle.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); file.bodies.len()];
    for (ji, j) in file.joints.iter().enumerate() {
        children[body_by_name[j.parent_body.as_str()]].push(ji);
    }
    let mut order = vec![root];
    let mut joint_order = Vec::new();
    let mut head = 0;
    while head < order.len() {
        let b = order[head];
        head += 1;
        for &ji in &children[b] {
            joint_order.push(ji);
            order.push(body_by_name[file.joints[ji].child_body.as_str()]);
        }
    }
    if order.len() != file.bodies.len() {
        let cyclic = (0..file.bodies.len())
            .find(|b| !order.contains(b))
            .map(|b| file.bodies[b].name.clone())
            .unwrap_or_default();
        return Err(ModelError::semantic(cyclic, "body is not reachable from the root (kinematic cycle)"));
    }

    let mut new_body = vec![0usize; file.bodies.len()];
    for (new, &old) in order.iter().enumerate() {
        new_body[old] = new;
    }
    let mut new_joint = vec![0usize; file.joints.len()];
    for (new, &old) in joint_order.iter().enumerate() {
        new_joint[old] = new;
    }

    let bodies = order
        .iter()
        .map(|&old| {
            let b = &file.bodies[old];
            let i = b.inertia;
            Body {
                name: b.name.clone(),
                parent_joint: joint_of_child.get(&old).map(|&j| new_joint[j]),
                inertia: BodyInertia {
                    mass: b.mass,
                    com: vec3(b.com),
                    rotational: Matrix3::new(i[0], i[1], i[2], i[1], i[3], i[4], i[2], i[4], i[5]),
                },
            }
        })
        .collect();

    let joints: Vec<Joint> = joint_order
        .iter()
        .map(|&old| {
            let j = &file.joints[old];
            let rpy = vec3(j.origin_rpy);
            Joint {
                name: j.name.clone(),
                parent_body: new_body[body_by_name[j.parent_body.as_str()]],
                child_body: new_body[body_by_name[j.child_body.as_str()]],
                axis: vec3(j.axis),
                origin_xyz: vec3(j.origin_xyz),
                origin_rpy: rpy,
                origin_rotation: Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z).into_inner(),
                q_limits: (j.q_limits[0], j.q_limits[1]),
                v_limit: j.v_limit,
                tau_limit: j.tau_limit,
                q_nominal: j.q_nominal.unwrap_or(0.5 * (j.q_limits[0] + j.q_limits[1])),
            }
        })
        .collect();
    debug_assert!(joints.iter().enumerate().all(|(i, j)| j.child_body == i + 1 && j.parent_body < j.child_body));

    let lookup_body = |name: &str, what: &str| {
        body_by_name
            .get(name)
            .map(|&b| new_body[b])
            .ok_or_else(|| ModelError::semantic(what, format!("unknown body '{name}'")))
    };
    let mut contacts = Vec::new();
    for (ci, c) in file.contacts.iter().enumerate() {
        if !finite(&c.offset) {
            return Err(ModelError::semantic(format!("contact {ci}"), "non-finite offset"));
        }
        contacts.push(ContactSite {
            body: lookup_body(&c.body, &format!("contact {ci}"))?,
            offset: vec3(c.offset),
        });
    }
    let ee = &file.end_effector;
    let axis = vec3(ee.axis.unwrap_or([0.0, 0.0, 1.0]));
    if (axis.norm() - 1.0).abs() > AXIS_TOL {
        return Err(ModelError::semantic("end_effector", "approach axis is not unit length"));
    }
    let end_effector = EndEffector {
        body: lookup_body(&ee.body, "end_effector")?,
        offset: vec3(ee.offset),
        axis,
    };

    Ok(Model {
        name: file.name,
        floating_base: file.floating_base,
        bodies,
        joints,
        contacts,
        end_effector,
    })
}

// ---------------------------------------------------------------------------
// Scenario

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    /// Feasibility only.
    G1,
    /// Minimum squared torque.
    G2,
    /// Maximum end-effector disturbance robustness.
    G3,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Objective::G1 => "G1",
            Objective::G2 => "G2",
            Objective::G3 => "G3",
        };
        f.write_str(s)
    }
}

impl FromStr for Objective {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "G1" | "g1" => Ok(Objective::G1),
            "G2" | "g2" => Ok(Objective::G2),
            "G3" | "g3" => Ok(Objective::G3),
            other => Err(ModelError::semantic("objective", format!("unknown objective tag '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default = "SolverSettings::default_tol_feas")]
    pub tol_feas: f64,
    #[serde(default = "SolverSettings::default_tol_opt")]
    pub tol_opt: f64,
    #[serde(default = "SolverSettings::default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "SolverSettings::default_mu0")]
    pub barrier_mu0: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SolverSettings {
    fn default_tol_feas() -> f64 {
        1e-6
    }
    fn default_tol_opt() -> f64 {
        1e-4
    }
    fn default_max_iter() -> usize {
        500
    }
    fn default_mu0() -> f64 {
        0.1
    }
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_feas: Self::default_tol_feas(),
            tol_opt: Self::default_tol_opt(),
            max_iter: Self::default_max_iter(),
            barrier_mu0: Self::default_mu0(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Terrain {
    pub anchors: Vec<[f64; 3]>,
    /// Contact normals before any incline is applied.
    pub normals: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incline_deg: Option<f64>,
    /// Per-contact rotation axes used when `incline_deg` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incline_axes: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub position: [f64; 3],
    pub axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub pick: Waypoint,
    pub place: Waypoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    model: String,
    duration_s: f64,
    mesh_points: usize,
    objective: Objective,
    #[serde(default = "default_mu")]
    friction_mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gravity: Option<[f64; 3]>,
    terrain: Terrain,
    task: Task,
    #[serde(default)]
    solver: SolverSettings,
}

fn default_mu() -> f64 {
    DEFAULT_FRICTION
}

/// Contact point with its terrain frame. `(tangent, bitangent, normal)` is a
/// right-handed orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub body: usize,
    pub offset: Vector3<f64>,
    pub anchor: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub bitangent: Vector3<f64>,
    pub mu: f64,
}

impl ContactPoint {
    /// Builds the tangent basis for a unit normal deterministically.
    pub fn frame_from_normal(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let n = normal.normalize();
        // reference axis least aligned with the normal
        let reference = match n.iamin() {
            0 => Vector3::x(),
            1 => Vector3::y(),
            _ => Vector3::z(),
        };
        let b0 = n.cross(&reference).normalize();
        let t = b0.cross(&n).normalize();
        let b = n.cross(&t);
        (t, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model_ref: String,
    pub model: Model,
    pub duration: f64,
    pub mesh_points: usize,
    pub objective: Objective,
    pub friction_mu: f64,
    pub gravity: Vector3<f64>,
    pub terrain: Terrain,
    pub task: Task,
    pub solver: SolverSettings,
    gravity_declared: bool,
}

impl Scenario {
    /// Contact normals after applying the terrain incline.
    pub fn contact_normals(&self) -> Vec<Vector3<f64>> {
        let angle = self.terrain.incline_deg.unwrap_or(0.0).to_radians();
        self.terrain
            .normals
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let n = vec3(*n).normalize();
                match &self.terrain.incline_axes {
                    Some(axes) if angle != 0.0 => {
                        let axis = Unit::new_normalize(vec3(axes[i]));
                        Rotation3::from_axis_angle(&axis, angle) * n
                    }
                    _ => n,
                }
            })
            .collect()
    }

    pub fn contacts(&self) -> Vec<ContactPoint> {
        self.contact_normals()
            .into_iter()
            .zip(&self.model.contacts)
            .zip(&self.terrain.anchors)
            .map(|((normal, site), anchor)| {
                let (tangent, bitangent) = ContactPoint::frame_from_normal(&normal);
                ContactPoint {
                    body: site.body,
                    offset: site.offset,
                    anchor: vec3(*anchor),
                    normal,
                    tangent,
                    bitangent,
                    mu: self.friction_mu,
                }
            })
            .collect()
    }

    pub fn intervals(&self) -> usize {
        self.mesh_points - 1
    }

    /// Returns a copy with a different incline angle.
    pub fn with_incline(&self, degrees: f64) -> Scenario {
        let mut s = self.clone();
        s.terrain.incline_deg = Some(degrees);
        s
    }

    pub fn with_mesh_points(&self, mesh_points: usize) -> Scenario {
        let mut s = self.clone();
        s.mesh_points = mesh_points;
        s
    }

    pub fn with_objective(&self, objective: Objective) -> Scenario {
        let mut s = self.clone();
        s.objective = objective;
        s
    }

    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            model: self.model_ref.clone(),
            duration_s: self.duration,
            mesh_points: self.mesh_points,
            objective: self.objective,
            friction_mu: self.friction_mu,
            gravity: self.gravity_declared.then(|| self.gravity.into()),
            terrain: self.terrain.clone(),
            task: self.task.clone(),
            solver: self.solver.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serialization cannot fail")
    }
}

/// Parses a scenario. The referenced model path is resolved relative to `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ModelError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(ModelError::from_json)?;
    let model = load_model(base_dir.join(&file.model))?;
    build_scenario(file, model)
}

/// Parses a scenario against an already loaded model.
pub fn parse_scenario_with_model(text: &str, model: Model) -> Result<Scenario, ModelError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(ModelError::from_json)?;
    build_scenario(file, model)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}

fn build_scenario(file: ScenarioFile, model: Model) -> Result<Scenario, ModelError> {
    if file.mesh_points < 2 {
        return Err(ModelError::semantic(
            "mesh_points",
            format!("need at least 2 mesh points, got {}", file.mesh_points),
        ));
    }
    if !(file.duration_s > 0.0) || !file.duration_s.is_finite() {
        return Err(ModelError::semantic("duration_s", "duration must be positive"));
    }
    if !(file.friction_mu > 0.0) {
        return Err(ModelError::semantic("friction_mu", "friction coefficient must be positive"));
    }
    let nc = model.nc();
    let t = &file.terrain;
    if t.anchors.len() != nc {
        return Err(ModelError::semantic(
            "terrain.anchors",
            format!("expected {nc} anchors, got {}", t.anchors.len()),
        ));
    }
    if t.normals.len() != nc {
        return Err(ModelError::semantic(
            "terrain.normals",
            format!("expected {nc} normals, got {}", t.normals.len()),
        ));
    }
    if t.normals.iter().any(|n| !finite(n) || vec3(*n).norm() < 1e-9) {
        return Err(ModelError::semantic("terrain.normals", "normals must be finite and non-zero"));
    }
    if let Some(axes) = &t.incline_axes {
        if axes.len() != nc || axes.iter().any(|a| vec3(*a).norm() < 1e-9) {
            return Err(ModelError::semantic("terrain.incline_axes", format!("need {nc} non-zero axes")));
        }
    } else if t.incline_deg.is_some_and(|d| d != 0.0) {
        return Err(ModelError::semantic("terrain.incline_deg", "incline requires incline_axes"));
    }
    for (name, w) in [("task.pick", &file.task.pick), ("task.place", &file.task.place)] {
        if vec3(w.axis).norm() < 1e-9 {
            return Err(ModelError::semantic(name, "target axis has zero norm"));
        }
    }
    let s = &file.solver;
    if !(s.tol_feas > 0.0 && s.tol_opt > 0.0 && s.barrier_mu0 > 0.0) || s.max_iter == 0 {
        return Err(ModelError::semantic("solver", "tolerances, mu0 and max_iter must be positive"));
    }
    Ok(Scenario {
        model_ref: file.model,
        model,
        duration: file.duration_s,
        mesh_points: file.mesh_points,
        objective: file.objective,
        friction_mu: file.friction_mu,
        gravity: vec3(file.gravity.unwrap_or(DEFAULT_GRAVITY)),
        gravity_declared: file.gravity.is_some(),
        terrain: file.terrain,
        task: file.task,
        solver: file.solver,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SINGLE_BODY: &str = r#"{
        "name": "brick",
        "bodies": [{"name": "base", "parent_joint": null, "mass": 2.0,
                    "com": [0,0,0], "inertia": [0.1,0,0,0.2,0,0.3]}],
        "contacts": [{"body": "base", "offset": [0.1, 0, 0]}],
        "end_effector": {"body": "base", "offset": [0,0,0]}
    }"#;

    fn two_link(extra_joint_name: &str) -> String {
        format!(
            r#"{{
            "name": "chain",
            "bodies": [
              {{"name": "base", "parent_joint": null, "mass": 1.0, "com": [0,0,0], "inertia": [0.1,0,0,0.1,0,0.1]}},
              {{"name": "l1", "parent_joint": "HAA", "mass": 1.0, "com": [0,0,0], "inertia": [0.1,0,0,0.1,0,0.1]}},
              {{"name": "l2", "parent_joint": "{extra_joint_name}", "mass": 1.0, "com": [0,0,0], "inertia": [0.1,0,0,0.1,0,0.1]}}
            ],
            "joints": [
              {{"name": "{extra_joint_name}", "parent_body": "l1", "child_body": "l2", "axis": [0,1,0],
                "origin_xyz": [0,0,-0.3], "origin_rpy": [0,0,0], "q_limits": [-1,1], "v_limit": 5, "tau_limit": 10}},
              {{"name": "HAA", "parent_body": "base", "child_body": "l1", "axis": [1,0,0],
                "origin_xyz": [0,0,0], "origin_rpy": [0,0,0], "q_limits": [-1,1], "v_limit": 5, "tau_limit": 10}}
            ],
            "contacts": [],
            "end_effector": {{"body": "l2", "offset": [0,0,-0.3]}}
        }}"#
        )
    }

    #[test]
    fn single_body_dimensions() {
        let m = parse_model(SINGLE_BODY).unwrap();
        assert_eq!((m.nj(), m.nv(), m.nc(), m.ns()), (0, 6, 1, 3));
    }

    #[test]
    fn joints_are_reordered_parent_first() {
        let m = parse_model(&two_link("KFE")).unwrap();
        assert_eq!(m.joints[0].name, "HAA");
        assert_eq!(m.joints[1].name, "KFE");
        for j in &m.joints {
            assert!(j.parent_body < j.child_body);
        }
        assert_eq!(m.bodies[2].parent_joint, Some(1));
    }

    #[test]
    fn duplicate_joint_name_is_reported() {
        let err = parse_model(&two_link("HAA")).unwrap_err();
        match err {
            ModelError::Semantic { entity, .. } => assert_eq!(entity, "HAA"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_model("{\n  \"name\": \"x\",\n  oops }").unwrap_err();
        match err {
            ModelError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_unit_axis_rejected() {
        let text = two_link("KFE").replace("\"axis\": [0,1,0]", "\"axis\": [0,1.1,0]");
        let err = parse_model(&text).unwrap_err();
        assert!(matches!(err, ModelError::Semantic { ref entity, .. } if entity == "KFE"), "{err}");
    }

    #[test]
    fn bad_limits_rejected() {
        let text = two_link("KFE").replacen("[-1,1]", "[1,-1]", 1);
        assert!(matches!(parse_model(&text), Err(ModelError::Semantic { .. })));
    }

    #[test]
    fn cycle_rejected() {
        // l1 -> l2 and l2 -> l1 with no joint from the base: two roots are
        // impossible to satisfy, so the cycle shows up as unreachable bodies.
        let text = r#"{
            "name": "loop",
            "bodies": [
              {"name": "base", "parent_joint": null, "mass": 1.0, "com": [0,0,0], "inertia": [0.1,0,0,0.1,0,0.1]},
              {"name": "a", "parent_joint": "j2", "mass": 1.0, "com": [0,0,0], "inertia": [0.1,0,0,0.1,0,0.1]},
              {"name": "b", "parent_joint": "j1", "mass": 1.0, "com": [0,0,0], "inertia": [0.1,0,0,0.1,0,0.1]}
            ],
            "joints": [
              {"name": "j1", "parent_body": "a", "child_body": "b", "axis": [1,0,0],
               "origin_xyz": [0,0,0], "origin_rpy": [0,0,0], "q_limits": [-1,1], "v_limit": 1, "tau_limit": 1},
              {"name": "j2", "parent_body": "b", "child_body": "a", "axis": [1,0,0],
               "origin_xyz": [0,0,0], "origin_rpy": [0,0,0], "q_limits": [-1,1], "v_limit": 1, "tau_limit": 1}
            ],
            "end_effector": {"body": "a", "offset": [0,0,0]}
        }"#;
        let err = parse_model(text).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn unknown_parent_rejected() {
        let text = two_link("KFE").replace("\"parent_body\": \"l1\"", "\"parent_body\": \"nope\"");
        assert!(parse_model(&text).unwrap_err().to_string().contains("nope"));
    }

    #[test]
    fn print_parse_roundtrip() {
        let m = parse_model(&two_link("KFE")).unwrap();
        let again = parse_model(&m.to_json()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn tangent_frame_is_right_handed() {
        for n in [Vector3::z(), Vector3::new(0.3, -0.2, 0.9).normalize(), -Vector3::x()] {
            let (t, b) = ContactPoint::frame_from_normal(&n);
            assert!((t.cross(&b) - n).norm() < 1e-12);
            assert!(t.dot(&n).abs() < 1e-12 && b.dot(&n).abs() < 1e-12);
        }
    }

    fn scenario_text(mesh_points: usize, objective: &str, incline: &str) -> String {
        format!(
            r#"{{
            "model": "unused.json", "duration_s": 1.0, "mesh_points": {mesh_points},
            "objective": "{objective}", "friction_mu": 0.7,
            "terrain": {{"anchors": [[0.1,0,0]], "normals": [[0,0,1]] {incline}}},
            "task": {{"pick": {{"position": [0,0,0], "axis": [0,0,-1]}},
                      "place": {{"position": [0,0,0], "axis": [0,0,-1]}}}}
        }}"#
        )
    }

    #[test]
    fn scenario_mesh_points() {
        let m = parse_model(SINGLE_BODY).unwrap();
        let s = parse_scenario_with_model(&scenario_text(11, "G3", ""), m.clone()).unwrap();
        assert_eq!(s.mesh_points, 11);
        assert_eq!(s.objective, Objective::G3);
        let err = parse_scenario_with_model(&scenario_text(1, "G3", ""), m.clone()).unwrap_err();
        assert!(err.to_string().contains("mesh points"));
        let err = parse_scenario_with_model(&scenario_text(11, "G7", ""), m).unwrap_err();
        assert!(err.to_string().contains("G7"), "{err}");
    }

    #[test]
    fn scenario_anchor_count_checked() {
        let m = parse_model(SINGLE_BODY).unwrap();
        let text = scenario_text(3, "G1", "").replace("[[0.1,0,0]]", "[[0.1,0,0],[0,0,0]]");
        assert!(parse_scenario_with_model(&text, m).is_err());
    }

    #[test]
    fn incline_rotates_normals() {
        let m = parse_model(SINGLE_BODY).unwrap();
        let text = scenario_text(3, "G1", r#", "incline_deg": 30.0, "incline_axes": [[0,1,0]]"#);
        let s = parse_scenario_with_model(&text, m).unwrap();
        let a = 30f64.to_radians();
        // explicit rotation about y
        let r = Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos());
        let expected = r * Vector3::z();
        assert!((s.contact_normals()[0] - expected).norm() < 1e-12);
        let again = parse_scenario_with_model(&s.to_json(), s.model.clone()).unwrap();
        assert_eq!(again, s);
    }
}
