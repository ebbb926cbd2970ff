//! Kinematic and geometric descriptions of the human arm, the robot arm,
//! and the scenario configuration that binds them.
//!
//! Everything is expressed in the robot-base ("scene") frame `rb` with SI
//! units: meters, kilograms, radians. Gravity points along the scenario's
//! `gravity` vector (default `[0, 0, -9.81]`).

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::Primitive;
use crate::statics::{ClosureModel, SafetyLimits};

/// Joint angles of the human arm chain: three shoulder rotations
/// (intrinsic z-y-x), elbow flexion, forearm roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HumanArmState(pub [f64; 5]);

impl HumanArmState {
    pub const DOF: usize = 5;

    pub fn zeros() -> Self {
        HumanArmState([0.0; 5])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }

    /// Straight-line interpolation in joint space, `t` in `[0, 1]`.
    pub fn lerp(&self, other: &HumanArmState, t: f64) -> HumanArmState {
        let mut out = [0.0; 5];
        for i in 0..5 {
            out[i] = self.0[i] + (other.0[i] - self.0[i]) * t;
        }
        HumanArmState(out)
    }

    /// Euclidean distance in joint space.
    pub fn joint_distance(&self, other: &HumanArmState) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest per-joint absolute difference.
    pub fn max_joint_delta(&self, other: &HumanArmState) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Position plus axis-angle orientation of a frame in the `rb` frame.
///
/// The orientation vector is the rotation axis scaled by the angle; the
/// angle is kept normalized to `[0, π]` by every constructor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: [0.0; 3],
            orientation: [0.0; 3],
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let axis = iso.rotation.scaled_axis();
        Pose {
            position: [iso.translation.x, iso.translation.y, iso.translation.z],
            orientation: [axis.x, axis.y, axis.z],
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.position[0], self.position[1], self.position[2]),
            UnitQuaternion::from_scaled_axis(Vector3::new(
                self.orientation[0],
                self.orientation[1],
                self.orientation[2],
            )),
        )
    }

    /// Re-normalizes the axis-angle so the angle lies in `[0, π]`.
    pub fn normalized(&self) -> Pose {
        Pose::from_isometry(&self.to_isometry())
    }

    pub fn position_vec(&self) -> Vector3<f64> {
        Vector3::new(self.position[0], self.position[1], self.position[2])
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_scaled_axis(Vector3::new(
            self.orientation[0],
            self.orientation[1],
            self.orientation[2],
        ))
    }

    /// Angle of the relative rotation between two poses, in `[0, π]`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.rotation().rotation_to(&other.rotation()).angle()
    }

    pub fn position_distance(&self, other: &Pose) -> f64 {
        (self.position_vec() - other.position_vec()).norm()
    }
}

/// Two-link human arm: spherical shoulder fixed in space, cylinder upper
/// arm, 2-DOF elbow (flexion + forearm roll), cylinder lower arm. The
/// grasp point sits `grasp_offset` from the elbow along the lower arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanArmModel {
    pub upper_arm_radius: f64,
    pub upper_arm_length: f64,
    pub upper_arm_mass: f64,
    pub lower_arm_radius: f64,
    pub lower_arm_length: f64,
    pub lower_arm_mass: f64,
    /// Shoulder frame in `rb`; at all-zero joints the arm extends along
    /// this frame's -z axis.
    pub shoulder_origin: Pose,
    /// Closed `[lo, hi]` interval per joint, radians.
    #[serde(default = "default_human_limits")]
    pub joint_limits: [[f64; 2]; 5],
    /// Distance from the elbow to the grasp point along the lower arm.
    pub grasp_offset: f64,
}

fn default_human_limits() -> [[f64; 2]; 5] {
    use std::f64::consts::FRAC_PI_2;
    [
        [-FRAC_PI_2, FRAC_PI_2],
        [-FRAC_PI_2, FRAC_PI_2],
        [-FRAC_PI_2, FRAC_PI_2],
        [0.0, 2.6],
        [-FRAC_PI_2, FRAC_PI_2],
    ]
}

/// Intermediate frames of the human chain, used by FK, the Jacobian and
/// the statics solver.
#[derive(Debug, Clone)]
pub struct HumanFrames {
    pub shoulder_position: Vector3<f64>,
    pub elbow_position: Vector3<f64>,
    pub grasp_position: Vector3<f64>,
    /// Upper-arm frame rotation (after the three shoulder rotations).
    pub upper_arm_rot: UnitQuaternion<f64>,
    /// Lower-arm frame rotation after elbow flexion (before forearm roll).
    pub lower_arm_rot: UnitQuaternion<f64>,
    /// Full chain rotation at the grasp point.
    pub grasp_rot: UnitQuaternion<f64>,
    /// Elbow flexion axis in `rb`.
    pub flexion_axis: Vector3<f64>,
    /// Forearm long axis (elbow -> wrist direction is `-forearm_z`).
    pub forearm_z: Vector3<f64>,
}

impl HumanFrames {
    /// Unit vector from shoulder to elbow (the humeral bone direction).
    pub fn bone_direction(&self) -> Vector3<f64> {
        (self.elbow_position - self.shoulder_position).normalize()
    }

    /// Unit vector from elbow to wrist.
    pub fn forearm_direction(&self) -> Vector3<f64> {
        -(self.lower_arm_rot * Vector3::z())
    }
}

/// Computes every frame of the human chain at `theta`.
pub fn human_frames(model: &HumanArmModel, theta: &HumanArmState) -> HumanFrames {
    let [t1, t2, t3, t4, t5] = theta.0;
    let base = model.shoulder_origin.to_isometry();
    let r_base = base.rotation;
    let shoulder_position = base.translation.vector;

    let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), t1);
    let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), t2);
    let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), t3);
    let upper_arm_rot = r_base * rz * ry * rx;

    let elbow_position =
        shoulder_position + upper_arm_rot * Vector3::new(0.0, 0.0, -model.upper_arm_length);

    // Flexion rotates about the upper arm's local -y so that positive
    // flexion with the default limits [0, 2.6] folds the forearm.
    let flex = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -t4);
    let lower_arm_rot = upper_arm_rot * flex;
    let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), t5);
    let grasp_rot = lower_arm_rot * roll;

    let grasp_position =
        elbow_position + lower_arm_rot * Vector3::new(0.0, 0.0, -model.grasp_offset);

    HumanFrames {
        shoulder_position,
        elbow_position,
        grasp_position,
        upper_arm_rot,
        lower_arm_rot,
        grasp_rot,
        flexion_axis: lower_arm_rot * -Vector3::y(),
        forearm_z: lower_arm_rot * Vector3::z(),
    }
}

/// Forward kinematics of the human arm: elbow and grasp-point poses in `rb`.
pub fn human_fk(model: &HumanArmModel, theta: &HumanArmState) -> (Pose, Pose) {
    let f = human_frames(model, theta);
    let elbow = Pose::from_isometry(&Isometry3::from_parts(
        Translation3::from(f.elbow_position),
        f.upper_arm_rot,
    ));
    let grasp = Pose::from_isometry(&Isometry3::from_parts(
        Translation3::from(f.grasp_position),
        f.grasp_rot,
    ));
    (elbow, grasp)
}

/// Geometric Jacobian of the grasp frame, 6x5 with linear velocity in the
/// top three rows and angular velocity in the bottom three.
pub fn human_jacobian(
    model: &HumanArmModel,
    theta: &HumanArmState,
) -> nalgebra::SMatrix<f64, 6, 5> {
    let [t1, t2, _, _, _] = theta.0;
    let f = human_frames(model, theta);
    let r_base = model.shoulder_origin.to_isometry().rotation;
    let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), t1);
    let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), t2);

    let axes = [
        r_base * Vector3::z(),
        r_base * (rz * Vector3::y()),
        r_base * (rz * (ry * Vector3::x())),
        f.flexion_axis,
        f.forearm_z,
    ];
    let origins = [
        f.shoulder_position,
        f.shoulder_position,
        f.shoulder_position,
        f.elbow_position,
        f.elbow_position,
    ];

    let mut jac = nalgebra::SMatrix::<f64, 6, 5>::zeros();
    for j in 0..5 {
        let lin = axes[j].cross(&(f.grasp_position - origins[j]));
        for i in 0..3 {
            jac[(i, j)] = lin[i];
            jac[(i + 3, j)] = axes[j][i];
        }
    }
    jac
}

/// One capsule attached to a robot link, in that link's local frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotCapsule {
    /// Index of the joint frame the capsule is rigidly attached to.
    pub joint: usize,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

/// Serial robot manipulator described by modified-DH link parameters
/// `(a, alpha, d, theta_offset)` per joint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotArmModel {
    pub n_joints: usize,
    /// One `[a, alpha, d, theta_offset]` row per joint.
    pub link_frames: Vec<[f64; 4]>,
    pub joint_limits: Vec<[f64; 2]>,
    #[serde(default)]
    pub collision_capsules: Vec<RobotCapsule>,
}

impl RobotArmModel {
    /// 7-joint arm with Panda-like dimensions; the default scenario file
    /// spells out the same parameters explicitly.
    pub fn default_seven_dof() -> Self {
        use std::f64::consts::FRAC_PI_2;
        RobotArmModel {
            n_joints: 7,
            link_frames: vec![
                [0.0, 0.0, 0.333, 0.0],
                [0.0, -FRAC_PI_2, 0.0, 0.0],
                [0.0, FRAC_PI_2, 0.316, 0.0],
                [0.0825, FRAC_PI_2, 0.0, 0.0],
                [-0.0825, -FRAC_PI_2, 0.384, 0.0],
                [0.0, FRAC_PI_2, 0.0, 0.0],
                [0.088, FRAC_PI_2, 0.107, 0.0],
            ],
            joint_limits: vec![
                [-2.8973, 2.8973],
                [-1.7628, 1.7628],
                [-2.8973, 2.8973],
                [-3.0718, -0.0698],
                [-2.8973, 2.8973],
                [-0.0175, 3.7525],
                [-2.8973, 2.8973],
            ],
            collision_capsules: vec![
                // Shoulder column (kept off the floor the pedestal sits on).
                RobotCapsule {
                    joint: 0,
                    a: [0.0, 0.0, -0.18],
                    b: [0.0, 0.0, 0.0],
                    radius: 0.08,
                },
                // Upper arm link along the d-offset of joint 3.
                RobotCapsule {
                    joint: 2,
                    a: [0.0, 0.0, -0.31],
                    b: [0.0, 0.0, 0.0],
                    radius: 0.075,
                },
                // Forearm link along the d-offset of joint 5, trimmed back
                // from the wrist end, which rides at the grasp point.
                RobotCapsule {
                    joint: 4,
                    a: [0.0, 0.0, -0.36],
                    b: [0.0, 0.0, -0.1],
                    radius: 0.06,
                },
            ],
        }
    }

    /// Midpoint of each joint's range; the default IK seed.
    pub fn mid_limits(&self) -> Vec<f64> {
        self.joint_limits
            .iter()
            .map(|l| 0.5 * (l[0] + l[1]))
            .collect()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.n_joints
            && q.iter()
                .zip(self.joint_limits.iter())
                .all(|(qi, l)| *qi >= l[0] && *qi <= l[1])
    }
}

/// Frames of the robot chain at `q`, in the robot's own base frame.
#[derive(Debug, Clone)]
pub struct RobotFrames {
    /// Frame after each joint's transform (`n_joints` entries).
    pub joint_frames: Vec<Isometry3<f64>>,
    /// Rotation axis of each joint in the base frame.
    pub axes: Vec<Vector3<f64>>,
    /// Point on each joint's axis in the base frame.
    pub origins: Vec<Vector3<f64>>,
    pub end_effector: Isometry3<f64>,
}

/// Walks the modified-DH chain: per joint,
/// `T_j = RotX(alpha) * TransX(a) * RotZ(theta + offset) * TransZ(d)`.
pub fn robot_frames(model: &RobotArmModel, q: &[f64]) -> RobotFrames {
    assert_eq!(q.len(), model.n_joints, "joint vector length mismatch");
    let mut t = Isometry3::identity();
    let mut joint_frames = Vec::with_capacity(model.n_joints);
    let mut axes = Vec::with_capacity(model.n_joints);
    let mut origins = Vec::with_capacity(model.n_joints);

    for (j, p) in model.link_frames.iter().enumerate() {
        let [a, alpha, d, offset] = *p;
        // RotX and TransX share the x axis, so from_parts gives their product.
        t *= Isometry3::from_parts(
            Translation3::new(a, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), alpha),
        );
        // Axis of joint j before its own rotation is applied.
        axes.push(t.rotation * Vector3::z());
        origins.push(t.translation.vector);
        t *= Isometry3::from_parts(
            Translation3::new(0.0, 0.0, d),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q[j] + offset),
        );
        joint_frames.push(t);
    }

    RobotFrames {
        end_effector: t,
        joint_frames,
        axes,
        origins,
    }
}

/// Forward kinematics of the robot end-effector in the robot base frame.
pub fn robot_fk(model: &RobotArmModel, q: &[f64]) -> Pose {
    Pose::from_isometry(&robot_frames(model, q).end_effector)
}

/// Geometric Jacobian of the end-effector, 6xn, linear rows on top.
pub fn robot_jacobian(model: &RobotArmModel, q: &[f64]) -> nalgebra::DMatrix<f64> {
    let f = robot_frames(model, q);
    let p_ee = f.end_effector.translation.vector;
    let mut jac = nalgebra::DMatrix::zeros(6, model.n_joints);
    for j in 0..model.n_joints {
        let lin = f.axes[j].cross(&(p_ee - f.origins[j]));
        for i in 0..3 {
            jac[(i, j)] = lin[i];
            jac[(i + 3, j)] = f.axes[j][i];
        }
    }
    jac
}

/// Position/orientation weights of the path cost.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostWeights {
    pub c_p: f64,
    pub c_o: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { c_p: 1.0, c_o: 1.0 }
    }
}

/// Full problem description: models, endpoints, environment, budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub human: HumanArmModel,
    #[serde(default = "RobotArmModel::default_seven_dof")]
    pub robot: RobotArmModel,
    pub theta_start: HumanArmState,
    pub theta_goal: HumanArmState,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default = "default_ground_height")]
    pub ground_height: f64,
    #[serde(default)]
    pub obstacles: Vec<Primitive>,
    #[serde(default)]
    pub safety: SafetyLimits,
    #[serde(default)]
    pub closure: ClosureModel,
    #[serde(default)]
    pub base_pose_mean: [f64; 6],
    #[serde(default = "default_base_cov")]
    pub base_pose_cov_diag: [f64; 6],
    #[serde(default)]
    pub cost_weights: CostWeights,
    /// Wall-clock budget per sub-process (planning, refinement), seconds.
    #[serde(default = "default_time_budget")]
    pub time_budget_s: f64,
    /// When set, the planner stops after this many iterations instead of
    /// on wall-clock time; required for byte-deterministic output.
    #[serde(default)]
    pub planner_iterations: Option<u64>,
    /// Iteration budget for the refinement stage (deterministic mode).
    #[serde(default)]
    pub refine_iterations: Option<u64>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_n_waypoints")]
    pub n_waypoints: usize,
    /// Clearance margin for collision checks, meters.
    #[serde(default = "default_collision_margin")]
    pub collision_margin: f64,
    #[serde(default = "default_max_base_samples")]
    pub max_base_samples: usize,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

fn default_ground_height() -> f64 {
    -1000.0
}

fn default_base_cov() -> [f64; 6] {
    [0.01, 0.0025, 1e-6, 1e-6, 1e-6, 0.07]
}

fn default_time_budget() -> f64 {
    120.0
}

fn default_n_waypoints() -> usize {
    50
}

fn default_collision_margin() -> f64 {
    0.005
}

fn default_max_base_samples() -> usize {
    1000
}

impl Scenario {
    pub fn gravity_vec(&self) -> Vector3<f64> {
        Vector3::new(self.gravity[0], self.gravity[1], self.gravity[2])
    }

    pub fn within_human_limits(&self, theta: &HumanArmState) -> bool {
        theta
            .0
            .iter()
            .zip(self.human.joint_limits.iter())
            .all(|(t, l)| *t >= l[0] && *t <= l[1])
    }
}

/// Errors from [`load_scenario`].
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses and validates a scenario JSON document.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.human.shoulder_origin = scenario.human.shoulder_origin.normalized();
    validate_scenario(&scenario)?;
    Ok(scenario)
}

pub fn validate_scenario(s: &Scenario) -> Result<(), ScenarioError> {
    let h = &s.human;
    for (name, v) in [
        ("human.upper_arm_radius", h.upper_arm_radius),
        ("human.upper_arm_length", h.upper_arm_length),
        ("human.upper_arm_mass", h.upper_arm_mass),
        ("human.lower_arm_radius", h.lower_arm_radius),
        ("human.lower_arm_length", h.lower_arm_length),
        ("human.lower_arm_mass", h.lower_arm_mass),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(name, format!("must be strictly positive, got {v}")));
        }
    }
    if !(h.grasp_offset > 0.0 && h.grasp_offset <= h.lower_arm_length) {
        return Err(invalid(
            "human.grasp_offset",
            format!(
                "must lie in (0, lower_arm_length = {}], got {}",
                h.lower_arm_length, h.grasp_offset
            ),
        ));
    }
    for (i, l) in h.joint_limits.iter().enumerate() {
        if !(l[0] < l[1]) {
            return Err(invalid(
                "human.joint_limits",
                format!("joint {i}: lower {} must be < upper {}", l[0], l[1]),
            ));
        }
    }
    for (name, theta) in [
        ("theta_start", &s.theta_start),
        ("theta_goal", &s.theta_goal),
    ] {
        if !theta.is_finite() {
            return Err(invalid(name, "must be finite"));
        }
        for (i, (t, l)) in theta.0.iter().zip(h.joint_limits.iter()).enumerate() {
            if *t < l[0] || *t > l[1] {
                return Err(invalid(
                    name,
                    format!("joint {i} value {t} outside limits [{}, {}]", l[0], l[1]),
                ));
            }
        }
    }

    let r = &s.robot;
    if r.n_joints < 6 {
        return Err(invalid(
            "robot.n_joints",
            format!(
                "need at least 6 joints for a full grasp pose, got {}",
                r.n_joints
            ),
        ));
    }
    if r.link_frames.len() != r.n_joints {
        return Err(invalid(
            "robot.link_frames",
            format!("expected {} rows, got {}", r.n_joints, r.link_frames.len()),
        ));
    }
    if r.joint_limits.len() != r.n_joints {
        return Err(invalid(
            "robot.joint_limits",
            format!("expected {} rows, got {}", r.n_joints, r.joint_limits.len()),
        ));
    }
    for (i, l) in r.joint_limits.iter().enumerate() {
        if !(l[0] < l[1]) {
            return Err(invalid(
                "robot.joint_limits",
                format!("joint {i}: lower {} must be < upper {}", l[0], l[1]),
            ));
        }
    }
    for (i, c) in r.collision_capsules.iter().enumerate() {
        if !(c.radius > 0.0) {
            return Err(invalid(
                "robot.collision_capsules",
                format!("capsule {i}: radius must be positive, got {}", c.radius),
            ));
        }
        if c.joint >= r.n_joints {
            return Err(invalid(
                "robot.collision_capsules",
                format!("capsule {i}: joint index {} out of range", c.joint),
            ));
        }
    }

    for (i, p) in s.obstacles.iter().enumerate() {
        p.validate()
            .map_err(|m| invalid("obstacles", format!("obstacle {i}: {m}")))?;
    }
    s.safety.validate().map_err(|m| invalid("safety", m))?;
    if s.base_pose_cov_diag
        .iter()
        .any(|v| *v < 0.0 || !v.is_finite())
    {
        return Err(invalid(
            "base_pose_cov_diag",
            "entries must be finite and >= 0",
        ));
    }
    if !(s.time_budget_s > 0.0) {
        return Err(invalid("time_budget_s", "must be > 0"));
    }
    if s.n_waypoints < 2 {
        return Err(invalid("n_waypoints", "need at least 2 waypoints"));
    }
    if !(s.collision_margin >= 0.0) {
        return Err(invalid("collision_margin", "must be >= 0"));
    }
    if s.max_base_samples == 0 {
        return Err(invalid("max_base_samples", "must be >= 1"));
    }
    if let Some(it) = s.planner_iterations {
        if it == 0 {
            return Err(invalid("planner_iterations", "must be >= 1 when set"));
        }
    }
    Ok(())
}
