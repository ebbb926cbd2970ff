//! Biomechanically safe trajectory generation for repositioning a passive
//! human arm with a robot manipulator.
//!
//! The library plans a joint-space trajectory for an unconscious person's
//! arm (3-DOF spherical shoulder + 2-DOF elbow), keeping the joint reaction
//! forces computed by a quasi-static solver below musculoskeletal safety
//! limits, then couples the motion to a robot arm by sampling a base pose
//! and solving per-step inverse kinematics against the grasp point.
//!
//! Pipeline (see [`cli`] for the command-line entry points):
//!
//! 1. [`planner`] — sampling-based search over human joint space,
//! 2. [`trajopt`] — feasibility-preserving refinement of the coarse path,
//! 3. [`coupling`] — robot base-pose rejection sampling + IK tracking,
//!
//! with [`statics`] providing the reaction-force model and [`collision`]
//! the geometric validity checks used at every stage.

// Negated comparisons like `!(v > 0.0)` are deliberate NaN guards, and
// index loops mirror the fixed-size vector math they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod cli;
pub mod collision;
pub mod coupling;
pub mod model;
pub mod planner;
pub mod report;
pub mod statics;
pub mod trajopt;

pub use model::{HumanArmModel, HumanArmState, Pose, RobotArmModel, Scenario};
pub use statics::{ClosureModel, ReactionSolution, SafetyLimits, Wrench};
