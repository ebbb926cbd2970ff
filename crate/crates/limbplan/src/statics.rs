//! Quasi-static reaction-force solver for the two-link human arm under a
//! grasp wrench.
//!
//! With the person unconscious (no joint torques) and the motion slow
//! enough to drop inertial terms, force and moment balance of the two
//! links yields 12 equations in 13 unknowns: the shoulder reaction force,
//! the elbow reaction force and single transmissible elbow torque, and the
//! 6-vector grasp wrench. The free direction is an internal force along
//! the humerus; one closure equation relating the gravity-parallel
//! reaction components makes the system uniquely solvable.
//!
//! Sign conventions: `shoulder_force` acts on the upper arm from the
//! torso; `elbow_force` and `elbow_torque` act on the lower arm from the
//! upper arm; the wrench acts on the lower arm at the grasp point.
//! Closure components are taken along the upward unit vector (opposite
//! gravity). The balanced closure enforces
//! `r_z1 = sin(theta/2) * (-r_z2)` - shoulder and elbow shares of the
//! supported weight - which keeps the system solvable over the whole
//! motion range including the arm hanging parallel to gravity.

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{human_frames, HumanArmModel, HumanArmState};

/// Force and torque applied at the grasp point, `[fx fy fz tx ty tz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

impl Wrench {
    pub fn zero() -> Self {
        Wrench {
            force: [0.0; 3],
            torque: [0.0; 3],
        }
    }

    pub fn force_vec(&self) -> Vector3<f64> {
        Vector3::from(self.force)
    }

    pub fn torque_vec(&self) -> Vector3<f64> {
        Vector3::from(self.torque)
    }
}

/// Choice of the extra equation closing the 13-unknown statics system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureModel {
    /// Zero gravity-parallel reaction at the shoulder.
    ShoulderRelief,
    /// Zero gravity-parallel reaction at the elbow.
    ElbowRelief,
    /// Distribute the load by the angle between gravity and the humerus.
    #[default]
    Balanced,
}

impl ClosureModel {
    pub fn name(&self) -> &'static str {
        match self {
            ClosureModel::ShoulderRelief => "shoulder_relief",
            ClosureModel::ElbowRelief => "elbow_relief",
            ClosureModel::Balanced => "balanced",
        }
    }

    pub fn all() -> [ClosureModel; 3] {
        [
            ClosureModel::ShoulderRelief,
            ClosureModel::ElbowRelief,
            ClosureModel::Balanced,
        ]
    }
}

/// Musculoskeletal load limits; comparisons are strict.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SafetyLimits {
    pub shoulder_force_max: f64,
    pub elbow_force_max: f64,
    pub elbow_torque_max: f64,
}

impl Default for SafetyLimits {
    fn default() -> Self {
        SafetyLimits {
            shoulder_force_max: 150.0,
            elbow_force_max: 400.0,
            elbow_torque_max: 10.0,
        }
    }
}

impl SafetyLimits {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("shoulder_force_max", self.shoulder_force_max),
            ("elbow_force_max", self.elbow_force_max),
            ("elbow_torque_max", self.elbow_torque_max),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Jointly solved reactions and grasp wrench at one configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReactionSolution {
    /// Force on the upper arm from the torso, `rb` frame.
    pub shoulder_force: [f64; 3],
    /// Force on the lower arm from the upper arm, `rb` frame.
    pub elbow_force: [f64; 3],
    /// Torque about the axis orthogonal to both elbow revolute axes.
    pub elbow_torque: f64,
    pub wrench: Wrench,
}

impl ReactionSolution {
    pub fn zero() -> Self {
        ReactionSolution {
            shoulder_force: [0.0; 3],
            elbow_force: [0.0; 3],
            elbow_torque: 0.0,
            wrench: Wrench::zero(),
        }
    }

    pub fn shoulder_force_vec(&self) -> Vector3<f64> {
        Vector3::from(self.shoulder_force)
    }

    pub fn elbow_force_vec(&self) -> Vector3<f64> {
        Vector3::from(self.elbow_force)
    }
}

/// Pass/fail with per-limit margins (limit minus attained value).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetyReport {
    pub pass: bool,
    pub shoulder_force_margin: f64,
    pub elbow_force_margin: f64,
    pub elbow_torque_margin: f64,
    /// Names of the violated limits, empty when passing.
    pub violations: Vec<String>,
}

#[derive(Debug, Error)]
pub enum StaticsError {
    /// The 13x13 system is numerically singular at this configuration
    /// (for example a straight elbow or a humerus perpendicular to
    /// gravity); the planner must reject such states.
    #[error("singular statics configuration (condition estimate {condition:.3e})")]
    SingularConfiguration { condition: f64 },
}

/// Condition-number estimate above which a configuration is rejected.
pub const SINGULARITY_THRESHOLD: f64 = 1e12;

/// Upward unit vector (opposite gravity); falls back to +z when the
/// gravity vector vanishes so closure directions stay defined.
fn up_direction(gravity: &Vector3<f64>) -> Vector3<f64> {
    let n = gravity.norm();
    if n < 1e-12 {
        Vector3::z()
    } else {
        -gravity / n
    }
}

/// Load-sharing ratio `sin(theta/2)` of the balanced closure, where
/// `theta` is the angle between the upward direction and the humeral
/// bone (shoulder to elbow). 0 with the arm pointing straight up, 1
/// hanging parallel to gravity.
pub fn balanced_ratio(model: &HumanArmModel, theta: &HumanArmState, gravity: &Vector3<f64>) -> f64 {
    let frames = human_frames(model, theta);
    let up = up_direction(gravity);
    let bone = frames.bone_direction();
    let angle = up.dot(&bone).clamp(-1.0, 1.0).acos();
    (0.5 * angle).sin()
}

struct Assembled {
    a: SMatrix<f64, 13, 13>,
    b: SVector<f64, 13>,
}

/// Unknown ordering: `[r1(3), r2(3), t2, f(3), t(3)]`.
fn assemble(
    model: &HumanArmModel,
    theta: &HumanArmState,
    gravity: &Vector3<f64>,
    closure: ClosureModel,
) -> Assembled {
    let frames = human_frames(model, theta);
    let p_s = frames.shoulder_position;
    let p_e = frames.elbow_position;
    let p_g = frames.grasp_position;
    let com1 = 0.5 * (p_s + p_e);
    let com2 = p_e + 0.5 * model.lower_arm_length * frames.forearm_direction();
    let g1 = model.upper_arm_mass * gravity;
    let g2 = model.lower_arm_mass * gravity;
    // Torque transmissible through the 2-DOF elbow: orthogonal to the
    // flexion axis and the forearm roll axis.
    let t_axis = frames.flexion_axis.cross(&frames.forearm_z);
    let up = up_direction(gravity);

    let mut a = SMatrix::<f64, 13, 13>::zeros();
    let mut b = SVector::<f64, 13>::zeros();

    let set3 =
        |a: &mut SMatrix<f64, 13, 13>, row: usize, col: usize, m: &nalgebra::Matrix3<f64>| {
            for i in 0..3 {
                for j in 0..3 {
                    a[(row + i, col + j)] = m[(i, j)];
                }
            }
        };
    let eye = nalgebra::Matrix3::identity();

    // Upper arm force balance: r1 - r2 = -g1.
    set3(&mut a, 0, 0, &eye);
    set3(&mut a, 0, 3, &(-eye));
    for i in 0..3 {
        b[i] = -g1[i];
    }

    // Upper arm moments about the shoulder:
    // (p_e - p_s) x (-r2) - t2*axis = -(com1 - p_s) x g1.
    let skew_e = skew(&(p_e - p_s));
    set3(&mut a, 3, 3, &(-skew_e));
    for i in 0..3 {
        a[(3 + i, 6)] = -t_axis[i];
    }
    let m1 = -(com1 - p_s).cross(&g1);
    for i in 0..3 {
        b[3 + i] = m1[i];
    }

    // Lower arm force balance: r2 + f = -g2.
    set3(&mut a, 6, 3, &eye);
    set3(&mut a, 6, 7, &eye);
    for i in 0..3 {
        b[6 + i] = -g2[i];
    }

    // Lower arm moments about the elbow:
    // (p_g - p_e) x f + t + t2*axis = -(com2 - p_e) x g2.
    let skew_g = skew(&(p_g - p_e));
    set3(&mut a, 9, 7, &skew_g);
    set3(&mut a, 9, 10, &eye);
    for i in 0..3 {
        a[(9 + i, 6)] = t_axis[i];
    }
    let m2 = -(com2 - p_e).cross(&g2);
    for i in 0..3 {
        b[9 + i] = m2[i];
    }

    // Closure row.
    match closure {
        ClosureModel::ShoulderRelief => {
            for i in 0..3 {
                a[(12, i)] = up[i];
            }
        }
        ClosureModel::ElbowRelief => {
            for i in 0..3 {
                a[(12, 3 + i)] = up[i];
            }
        }
        ClosureModel::Balanced => {
            let ratio = {
                let bone = frames.bone_direction();
                let angle = up.dot(&bone).clamp(-1.0, 1.0).acos();
                (0.5 * angle).sin()
            };
            for i in 0..3 {
                a[(12, i)] = up[i];
                a[(12, 3 + i)] = ratio * up[i];
            }
        }
    }

    Assembled { a, b }
}

fn skew(v: &Vector3<f64>) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Solves the 12 equilibrium equations plus the active closure equation.
pub fn solve_reactions(
    model: &HumanArmModel,
    theta: &HumanArmState,
    gravity: &Vector3<f64>,
    closure: ClosureModel,
) -> Result<ReactionSolution, StaticsError> {
    assert!(
        theta.is_finite(),
        "solve_reactions called with non-finite theta"
    );
    let sys = assemble(model, theta, gravity, closure);
    let lu = sys.a.lu();

    let u = lu.u();
    let mut dmax = 0.0_f64;
    let mut dmin = f64::INFINITY;
    for i in 0..13 {
        let d = u[(i, i)].abs();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    let condition = if dmin > 0.0 {
        dmax / dmin
    } else {
        f64::INFINITY
    };
    if !condition.is_finite() || condition > SINGULARITY_THRESHOLD {
        return Err(StaticsError::SingularConfiguration { condition });
    }

    let mut x = lu
        .solve(&sys.b)
        .ok_or(StaticsError::SingularConfiguration { condition })?;
    // One step of iterative refinement keeps the equilibrium residual near
    // machine precision even for poorly scaled configurations.
    let r = sys.b - sys.a * x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }

    if !x.iter().all(|v| v.is_finite()) {
        return Err(StaticsError::SingularConfiguration { condition });
    }

    Ok(ReactionSolution {
        shoulder_force: [x[0], x[1], x[2]],
        elbow_force: [x[3], x[4], x[5]],
        elbow_torque: x[6],
        wrench: Wrench {
            force: [x[7], x[8], x[9]],
            torque: [x[10], x[11], x[12]],
        },
    })
}

/// Residuals of a solution: infinity norm over the 12 equilibrium
/// equations and the absolute closure-equation residual.
pub fn equilibrium_residual(
    model: &HumanArmModel,
    theta: &HumanArmState,
    gravity: &Vector3<f64>,
    closure: ClosureModel,
    sol: &ReactionSolution,
) -> (f64, f64) {
    let sys = assemble(model, theta, gravity, closure);
    let x = solution_vector(sol);
    let r = sys.b - sys.a * x;
    let eq = (0..12).map(|i| r[i].abs()).fold(0.0, f64::max);
    (eq, r[12].abs())
}

fn solution_vector(sol: &ReactionSolution) -> SVector<f64, 13> {
    SVector::<f64, 13>::from_column_slice(&[
        sol.shoulder_force[0],
        sol.shoulder_force[1],
        sol.shoulder_force[2],
        sol.elbow_force[0],
        sol.elbow_force[1],
        sol.elbow_force[2],
        sol.elbow_torque,
        sol.wrench.force[0],
        sol.wrench.force[1],
        sol.wrench.force[2],
        sol.wrench.torque[0],
        sol.wrench.torque[1],
        sol.wrench.torque[2],
    ])
}

/// Checks a solution against the safety limits; shoulder torque is not
/// checked because the spherical joint transmits none.
pub fn check_safety(sol: &ReactionSolution, limits: &SafetyLimits) -> SafetyReport {
    let fs = sol.shoulder_force_vec().norm();
    let fe = sol.elbow_force_vec().norm();
    let te = sol.elbow_torque.abs();
    let mut violations = Vec::new();
    if fs >= limits.shoulder_force_max {
        violations.push(format!(
            "shoulder force {:.3} N >= {} N",
            fs, limits.shoulder_force_max
        ));
    }
    if fe >= limits.elbow_force_max {
        violations.push(format!(
            "elbow force {:.3} N >= {} N",
            fe, limits.elbow_force_max
        ));
    }
    if te >= limits.elbow_torque_max {
        violations.push(format!(
            "elbow torque {:.3} N*m >= {} N*m",
            te, limits.elbow_torque_max
        ));
    }
    SafetyReport {
        pass: violations.is_empty(),
        shoulder_force_margin: limits.shoulder_force_max - fs,
        elbow_force_margin: limits.elbow_force_max - fe,
        elbow_torque_margin: limits.elbow_torque_max - te,
        violations,
    }
}

/// Tendon yield force from yield stress (N/mm^2) and cross-section (mm^2).
pub fn yield_force(sigma_yp: f64, area: f64) -> f64 {
    sigma_yp * area
}

/// Standard gravity used by the planar demonstration solver.
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Solution of the planar single-link free-body diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarSolution {
    pub f_y: f64,
    pub t_z: f64,
    pub r_x: f64,
    pub r_y: f64,
}

/// Planar pedagogical solver for a link pinned at its base under a wrench
/// `[f_x, f_y, t_z]` at the tip. `f_x` is supplied externally: the axial
/// force and reaction appear in a single equation, so without a constraint
/// on it the reaction `r_x = m_b*g*sin(theta_A+theta_B) - f_x` ranges over
/// everything the robot can produce. The closure `r_y = 0` fixes the rest.
pub fn solve_planar_fbd(
    m_b: f64,
    l_b: f64,
    theta_a: f64,
    theta_b: f64,
    f_x: f64,
) -> PlanarSolution {
    let c = (theta_a + theta_b).cos();
    let s = (theta_a + theta_b).sin();
    let w = m_b * STANDARD_GRAVITY;
    let r_y = 0.0;
    let f_y = -w * c - r_y;
    let t_z = -l_b * f_y - 0.5 * l_b * w * c;
    let r_x = w * s - f_x;
    PlanarSolution { f_y, t_z, r_x, r_y }
}
