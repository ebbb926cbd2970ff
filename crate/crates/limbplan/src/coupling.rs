//! Couples a refined human trajectory to the robot arm.
//!
//! A robot base pose is drawn from a normal distribution (diagonal
//! covariance, position + axis-angle components) and accepted as soon as
//! damped-least-squares IK tracks the grasp pose at every step while the
//! joint motion stays continuous and collision free. The accepted base,
//! the per-step joint vectors, and the per-step wrench/reaction solutions
//! make up the coupled trajectory.

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::collision::state_free;
use crate::model::{robot_frames, HumanArmState, Pose, RobotArmModel, Scenario};
use crate::planner::grasp_pose;
use crate::statics::{solve_reactions, ClosureModel, ReactionSolution, StaticsError, Wrench};

/// Robot base placement in the scene frame: `[x y z ax ay az]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePose(pub [f64; 6]);

impl BasePose {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.0[0], self.0[1], self.0[2]),
            UnitQuaternion::from_scaled_axis(Vector3::new(self.0[3], self.0[4], self.0[5])),
        )
    }
}

/// One synchronized step of the coupled human/robot motion.
#[derive(Debug, Clone)]
pub struct CoupledStep {
    pub theta: HumanArmState,
    pub q: Vec<f64>,
    pub grasp: Pose,
    pub wrench: Wrench,
    pub reactions: ReactionSolution,
}

#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    pub steps: Vec<CoupledStep>,
    pub base: BasePose,
    /// Base-pose samples drawn until one was accepted.
    pub samples_tried: usize,
}

/// Why one base-pose candidate was rejected.
#[derive(Debug, Clone, Copy, Default)]
pub struct RejectionCounts {
    pub ik_failed: usize,
    pub discontinuous: usize,
    pub collision: usize,
    pub statics: usize,
}

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("IK diverged after {iterations} iterations (position error {position_error:.3e} m)")]
    IkDiverged {
        iterations: usize,
        position_error: f64,
    },
    #[error(
        "no feasible base pose after {samples} samples \
         (ik {} / continuity {} / collision {} / statics {})",
        rejections.ik_failed,
        rejections.discontinuous,
        rejections.collision,
        rejections.statics
    )]
    NoFeasibleBase {
        samples: usize,
        rejections: RejectionCounts,
    },
    #[error("robot Jacobian ill conditioned (condition {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("statics failed at step {step}: {source}")]
    SingularStep { step: usize, source: StaticsError },
}

/// IK success tolerances; comfortably tighter than the grasp-constraint
/// bounds (1e-3 m, 1e-2 rad) enforced on coupled trajectories.
pub const IK_POSITION_TOL: f64 = 1e-5;
pub const IK_ORIENTATION_TOL: f64 = 1e-4;
const IK_MAX_ITERATIONS: usize = 200;
const IK_DAMPING: f64 = 0.05;
const IK_MAX_STEP: f64 = 0.3;

/// Per-joint continuity bound between consecutive trajectory steps.
pub const CONTINUITY_MAX_JOINT_JUMP: f64 = 0.2;

fn pose_error(current: &Isometry3<f64>, target: &Isometry3<f64>) -> Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let dw = current.rotation.rotation_to(&target.rotation).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dw.x, dw.y, dw.z)
}

/// Damped-least-squares IK from `q_init` toward a scene-frame target.
pub fn ik_solve(
    robot: &RobotArmModel,
    base: &BasePose,
    target: &Pose,
    q_init: &[f64],
) -> Result<Vec<f64>, CouplingError> {
    let base_iso = base.to_isometry();
    // Work in the robot's own base frame.
    let local_target = base_iso.inverse() * target.to_isometry();
    let mut q = q_init.to_vec();
    let mut last_pos_err = f64::INFINITY;

    for _ in 0..IK_MAX_ITERATIONS {
        let frames = robot_frames(robot, &q);
        let err = pose_error(&frames.end_effector, &local_target);
        let pos_err = err.fixed_rows::<3>(0).norm();
        let ori_err = err.fixed_rows::<3>(3).norm();
        last_pos_err = pos_err;
        if pos_err < IK_POSITION_TOL && ori_err < IK_ORIENTATION_TOL {
            return Ok(q);
        }

        let jac = crate::model::robot_jacobian(robot, &q);
        // dq = J^T (J J^T + lambda^2 I)^-1 e
        let jjt = &jac * jac.transpose();
        let damped = jjt + DMatrix::identity(6, 6) * (IK_DAMPING * IK_DAMPING);
        let Some(sol) = damped
            .lu()
            .solve(&DVector::from_column_slice(err.as_slice()))
        else {
            break;
        };
        let dq = jac.transpose() * sol;
        let scale = {
            let m = dq.amax();
            if m > IK_MAX_STEP {
                IK_MAX_STEP / m
            } else {
                1.0
            }
        };
        for j in 0..q.len() {
            q[j] = (q[j] + scale * dq[j]).clamp(robot.joint_limits[j][0], robot.joint_limits[j][1]);
        }
    }
    Err(CouplingError::IkDiverged {
        iterations: IK_MAX_ITERATIONS,
        position_error: last_pos_err,
    })
}

/// Grasp-constraint residual between the human grasp pose and the robot
/// end effector at `q`: (position error m, orientation angle rad).
pub fn grasp_residual(
    scenario: &Scenario,
    theta: &HumanArmState,
    q: &[f64],
    base: &BasePose,
) -> (f64, f64) {
    let human = grasp_pose(&scenario.human, theta);
    let robot_world =
        Pose::from_isometry(&(base.to_isometry() * robot_frames(&scenario.robot, q).end_effector));
    (
        human.position_distance(&robot_world),
        human.angle_to(&robot_world),
    )
}

enum Rejection {
    Ik,
    Discontinuous,
    Collision,
    Statics,
}

/// Attempts to track the whole human trajectory from one base pose.
fn try_couple(
    scenario: &Scenario,
    waypoints: &[HumanArmState],
    base: &BasePose,
) -> Result<Vec<CoupledStep>, Rejection> {
    let base_iso = base.to_isometry();
    let mut steps = Vec::with_capacity(waypoints.len());
    let mut q_prev = scenario.robot.mid_limits();

    for (i, theta) in waypoints.iter().enumerate() {
        let target = grasp_pose(&scenario.human, theta);
        let q = ik_solve(&scenario.robot, base, &target, &q_prev).map_err(|_| Rejection::Ik)?;
        if i > 0 {
            let jump = q
                .iter()
                .zip(q_prev.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if jump > CONTINUITY_MAX_JOINT_JUMP {
                return Err(Rejection::Discontinuous);
            }
        }
        if !state_free(scenario, theta, Some((&q, &base_iso))) {
            return Err(Rejection::Collision);
        }
        let reactions = solve_reactions(
            &scenario.human,
            theta,
            &scenario.gravity_vec(),
            scenario.closure,
        )
        .map_err(|_| Rejection::Statics)?;
        steps.push(CoupledStep {
            theta: *theta,
            q: q.clone(),
            grasp: target,
            wrench: reactions.wrench,
            reactions,
        });
        q_prev = q;
    }
    Ok(steps)
}

/// Marsaglia-free standard normal via Box-Muller; one value per call so
/// the stream layout stays simple and reproducible.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rejection sampling over base poses drawn from
/// `N(base_pose_mean, diag(base_pose_cov_diag))`; accepts the first base
/// for which IK succeeds at every step with continuity and clearance.
pub fn sample_base_pose(
    scenario: &Scenario,
    waypoints: &[HumanArmState],
    rng: &mut ChaCha8Rng,
) -> Result<CoupledTrajectory, CouplingError> {
    let mut rejections = RejectionCounts::default();
    for sample in 1..=scenario.max_base_samples {
        let mut pose = [0.0; 6];
        for i in 0..6 {
            let sigma = scenario.base_pose_cov_diag[i].sqrt();
            pose[i] = scenario.base_pose_mean[i] + sigma * standard_normal(rng);
        }
        let base = BasePose(pose);
        match try_couple(scenario, waypoints, &base) {
            Ok(steps) => {
                return Ok(CoupledTrajectory {
                    steps,
                    base,
                    samples_tried: sample,
                })
            }
            Err(Rejection::Ik) => rejections.ik_failed += 1,
            Err(Rejection::Discontinuous) => rejections.discontinuous += 1,
            Err(Rejection::Collision) => rejections.collision += 1,
            Err(Rejection::Statics) => rejections.statics += 1,
        }
    }
    Err(CouplingError::NoFeasibleBase {
        samples: scenario.max_base_samples,
        rejections,
    })
}

/// Maps measured joint torques to the end-effector wrench through the
/// pseudoinverse-transpose of the robot Jacobian (the statics-consistent
/// inverse of `tau = J^T w`).
pub fn robot_wrench_from_torques(
    robot: &RobotArmModel,
    base: &BasePose,
    q: &[f64],
    tau: &[f64],
) -> Result<Wrench, CouplingError> {
    assert_eq!(tau.len(), robot.n_joints, "torque vector length mismatch");
    let jac_local = crate::model::robot_jacobian(robot, q);
    // Rotate into the scene frame so the wrench matches scene-frame forces.
    let rot = base.to_isometry().rotation.to_rotation_matrix();
    let mut jac = jac_local.clone();
    for col in 0..robot.n_joints {
        let lin = rot
            * Vector3::new(
                jac_local[(0, col)],
                jac_local[(1, col)],
                jac_local[(2, col)],
            );
        let ang = rot
            * Vector3::new(
                jac_local[(3, col)],
                jac_local[(4, col)],
                jac_local[(5, col)],
            );
        for i in 0..3 {
            jac[(i, col)] = lin[i];
            jac[(i + 3, col)] = ang[i];
        }
    }

    let svd = jac.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !condition.is_finite() || condition > 1e10 {
        return Err(CouplingError::IllConditioned { condition });
    }

    // Least-squares solution of J^T w = tau.
    let jt = jac.transpose();
    let w = jt
        .svd(true, true)
        .solve(&DVector::from_column_slice(tau), 1e-14)
        .map_err(|_| CouplingError::IllConditioned { condition })?;
    Ok(Wrench {
        force: [w[0], w[1], w[2]],
        torque: [w[3], w[4], w[5]],
    })
}

/// Recomputes the per-step human reactions under `closure` for offline
/// force analysis (the force-profile comparison data).
pub fn replay_forces(
    scenario: &Scenario,
    coupled: &CoupledTrajectory,
    closure: ClosureModel,
) -> Result<Vec<ReactionSolution>, CouplingError> {
    replay_forces_over(scenario, coupled.steps.iter().map(|s| s.theta), closure)
}

/// Replay over bare joint states (used by the forces command).
pub fn replay_forces_over(
    scenario: &Scenario,
    thetas: impl IntoIterator<Item = HumanArmState>,
    closure: ClosureModel,
) -> Result<Vec<ReactionSolution>, CouplingError> {
    let gravity = scenario.gravity_vec();
    thetas
        .into_iter()
        .enumerate()
        .map(|(step, theta)| {
            solve_reactions(&scenario.human, &theta, &gravity, closure)
                .map_err(|source| CouplingError::SingularStep { step, source })
        })
        .collect()
}
