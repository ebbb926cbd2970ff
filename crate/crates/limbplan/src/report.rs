//! Run reports and the fixed CSV formats for trajectories and force
//! profiles.
//!
//! Trajectory CSV column order is fixed and versioned (header `step`,
//! five human joints, robot joints, grasp pose, wrench, shoulder and
//! elbow reactions, elbow torque). Floats are written with Rust's
//! shortest round-trip formatting, so parsing an emitted file recovers
//! the exact values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::CoupledTrajectory;
use crate::model::{HumanArmState, Pose};
use crate::statics::{ReactionSolution, SafetyLimits, Wrench};

/// Format version recorded in `report.json`.
pub const TRAJECTORY_CSV_VERSION: u32 = 1;

/// Metrics of one pipeline stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMetrics {
    pub run_time_s: f64,
    pub iterations: u64,
    pub pos_length_m: f64,
    pub ori_length_rad: f64,
    pub cost: f64,
}

/// Per-closure force extremes over a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosureMaxima {
    pub closure: String,
    pub max_shoulder_force_n: f64,
    pub max_elbow_force_n: f64,
    pub max_elbow_torque_nm: f64,
    pub within_limits: bool,
}

/// Summary emitted as `report.json` after a planning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub csv_version: u32,
    pub feasible: bool,
    pub planner: StageMetrics,
    pub refiner: StageMetrics,
    pub coupling_run_time_s: f64,
    pub base_samples_tried: usize,
    pub base_pose: [f64; 6],
    pub per_closure_max: Vec<ClosureMaxima>,
}

pub fn closure_maxima(
    closure_name: &str,
    reactions: &[ReactionSolution],
    limits: &SafetyLimits,
) -> ClosureMaxima {
    let mut fs: f64 = 0.0;
    let mut fe: f64 = 0.0;
    let mut te: f64 = 0.0;
    for r in reactions {
        fs = fs.max(r.shoulder_force_vec().norm());
        fe = fe.max(r.elbow_force_vec().norm());
        te = te.max(r.elbow_torque.abs());
    }
    ClosureMaxima {
        closure: closure_name.to_string(),
        max_shoulder_force_n: fs,
        max_elbow_force_n: fe,
        max_elbow_torque_nm: te,
        within_limits: fs < limits.shoulder_force_max
            && fe < limits.elbow_force_max
            && te < limits.elbow_torque_max,
    }
}

/// One parsed trajectory row.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub step: usize,
    pub theta: HumanArmState,
    pub q: Vec<f64>,
    pub grasp: Pose,
    pub wrench: Wrench,
    pub reactions: ReactionSolution,
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn trajectory_header(n_joints: usize) -> String {
    let mut cols: Vec<String> = vec!["step".into()];
    for i in 1..=5 {
        cols.push(format!("theta{i}"));
    }
    for i in 1..=n_joints {
        cols.push(format!("q{i}"));
    }
    for name in [
        "grasp_x", "grasp_y", "grasp_z", "grasp_ax", "grasp_ay", "grasp_az",
    ] {
        cols.push(name.into());
    }
    for name in ["fx", "fy", "fz", "tx", "ty", "tz"] {
        cols.push(name.into());
    }
    for name in ["shoulder_fx", "shoulder_fy", "shoulder_fz"] {
        cols.push(name.into());
    }
    for name in ["elbow_fx", "elbow_fy", "elbow_fz"] {
        cols.push(name.into());
    }
    cols.push("elbow_torque".into());
    cols.join(",")
}

/// Emits the fixed-column trajectory CSV.
pub fn write_trajectory_csv(traj: &CoupledTrajectory, n_joints: usize) -> String {
    let mut out = String::new();
    out.push_str(&trajectory_header(n_joints));
    out.push('\n');
    for (i, s) in traj.steps.iter().enumerate() {
        let mut fields: Vec<String> = vec![i.to_string()];
        fields.extend(s.theta.0.iter().map(|v| v.to_string()));
        fields.extend(s.q.iter().map(|v| v.to_string()));
        fields.extend(s.grasp.position.iter().map(|v| v.to_string()));
        fields.extend(s.grasp.orientation.iter().map(|v| v.to_string()));
        fields.extend(s.wrench.force.iter().map(|v| v.to_string()));
        fields.extend(s.wrench.torque.iter().map(|v| v.to_string()));
        fields.extend(s.reactions.shoulder_force.iter().map(|v| v.to_string()));
        fields.extend(s.reactions.elbow_force.iter().map(|v| v.to_string()));
        fields.push(s.reactions.elbow_torque.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Parses a trajectory CSV produced by [`write_trajectory_csv`]. The
/// robot joint count is inferred from the header.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryRow>, CsvError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(CsvError::Malformed {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let n_joints = cols.iter().filter(|c| c.starts_with('q')).count();
    let expected = 1 + 5 + n_joints + 6 + 6 + 3 + 3 + 1;
    if cols.len() != expected {
        return Err(CsvError::Malformed {
            line: 1,
            message: format!("expected {expected} columns, found {}", cols.len()),
        });
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(CsvError::Malformed {
                line: idx + 1,
                message: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str, line: usize| -> Result<f64, CsvError> {
            s.parse::<f64>().map_err(|e| CsvError::Malformed {
                line,
                message: format!("bad float {s:?}: {e}"),
            })
        };
        let step = fields[0]
            .parse::<usize>()
            .map_err(|e| CsvError::Malformed {
                line: idx + 1,
                message: format!("bad step index {:?}: {e}", fields[0]),
            })?;
        let mut at = 1;
        let mut take = |n: usize| -> &[&str] {
            let s = &fields[at..at + n];
            at += n;
            s
        };
        let mut theta = [0.0; 5];
        for (i, s) in take(5).iter().enumerate() {
            theta[i] = parse(s, idx + 1)?;
        }
        let mut q = Vec::with_capacity(n_joints);
        for s in take(n_joints) {
            q.push(parse(s, idx + 1)?);
        }
        let mut grasp = [0.0; 6];
        for (i, s) in take(6).iter().enumerate() {
            grasp[i] = parse(s, idx + 1)?;
        }
        let mut wrench = [0.0; 6];
        for (i, s) in take(6).iter().enumerate() {
            wrench[i] = parse(s, idx + 1)?;
        }
        let mut shoulder = [0.0; 3];
        for (i, s) in take(3).iter().enumerate() {
            shoulder[i] = parse(s, idx + 1)?;
        }
        let mut elbow = [0.0; 3];
        for (i, s) in take(3).iter().enumerate() {
            elbow[i] = parse(s, idx + 1)?;
        }
        let elbow_torque = parse(take(1)[0], idx + 1)?;

        let wrench = Wrench {
            force: [wrench[0], wrench[1], wrench[2]],
            torque: [wrench[3], wrench[4], wrench[5]],
        };
        rows.push(TrajectoryRow {
            step,
            theta: HumanArmState(theta),
            q,
            grasp: Pose {
                position: [grasp[0], grasp[1], grasp[2]],
                orientation: [grasp[3], grasp[4], grasp[5]],
            },
            wrench,
            reactions: ReactionSolution {
                shoulder_force: shoulder,
                elbow_force: elbow,
                elbow_torque,
                wrench,
            },
        });
    }
    Ok(rows)
}

pub fn forces_header() -> &'static str {
    "step,fx,fy,fz,tx,ty,tz,shoulder_fx,shoulder_fy,shoulder_fz,elbow_fx,elbow_fy,elbow_fz,\
     elbow_torque,wrench_force_norm,shoulder_force_norm,elbow_force_norm"
}

/// Emits the per-step force profile CSV for one closure model.
pub fn write_forces_csv(reactions: &[ReactionSolution]) -> String {
    let mut out = String::new();
    out.push_str(forces_header());
    out.push('\n');
    for (i, r) in reactions.iter().enumerate() {
        let mut fields: Vec<String> = vec![i.to_string()];
        fields.extend(r.wrench.force.iter().map(|v| v.to_string()));
        fields.extend(r.wrench.torque.iter().map(|v| v.to_string()));
        fields.extend(r.shoulder_force.iter().map(|v| v.to_string()));
        fields.extend(r.elbow_force.iter().map(|v| v.to_string()));
        fields.push(r.elbow_torque.to_string());
        fields.push(r.wrench.force_vec().norm().to_string());
        fields.push(r.shoulder_force_vec().norm().to_string());
        fields.push(r.elbow_force_vec().norm().to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{BasePose, CoupledStep};

    fn sample_traj() -> CoupledTrajectory {
        let steps = (0..3)
            .map(|i| {
                let x = i as f64;
                CoupledStep {
                    theta: HumanArmState([0.1 * x, -0.2, 1.0 / 3.0 + x, 0.5, 0.7]),
                    q: vec![
                        0.1,
                        0.2,
                        0.3,
                        -1.5,
                        0.5,
                        1.8,
                        std::f64::consts::PI / (x + 1.0),
                    ],
                    grasp: Pose {
                        position: [x, 0.45, 0.2],
                        orientation: [0.0, 0.1, -0.3],
                    },
                    wrench: Wrench {
                        force: [1.0 + x, 2.0, 3.0],
                        torque: [0.1, 0.2, 0.3],
                    },
                    reactions: ReactionSolution {
                        shoulder_force: [1e-17, 24.5, -3.0],
                        elbow_force: [0.0, -24.5, 3.0],
                        elbow_torque: 0.25 * x,
                        wrench: Wrench {
                            force: [1.0 + x, 2.0, 3.0],
                            torque: [0.1, 0.2, 0.3],
                        },
                    },
                }
            })
            .collect();
        CoupledTrajectory {
            steps,
            base: BasePose([0.35, 0.55, 0.0, 0.0, 0.0, -1.57]),
            samples_tried: 1,
        }
    }

    #[test]
    fn trajectory_csv_round_trips_exactly() {
        let traj = sample_traj();
        let text = write_trajectory_csv(&traj, 7);
        let rows = parse_trajectory_csv(&text).expect("parses");
        assert_eq!(rows.len(), 3);
        for (row, step) in rows.iter().zip(traj.steps.iter()) {
            assert_eq!(row.theta.0, step.theta.0, "thetas round trip bit-exactly");
            assert_eq!(row.q, step.q);
            assert_eq!(row.grasp.position, step.grasp.position);
            assert_eq!(row.wrench.force, step.wrench.force);
            assert_eq!(row.reactions.elbow_torque, step.reactions.elbow_torque);
        }
    }

    #[test]
    fn malformed_csv_reports_line() {
        let traj = sample_traj();
        let mut text = write_trajectory_csv(&traj, 7);
        text.push_str("0,1,2\n");
        let err = parse_trajectory_csv(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 5"), "got: {msg}");
    }

    #[test]
    fn forces_csv_has_row_per_step() {
        let traj = sample_traj();
        let reactions: Vec<_> = traj.steps.iter().map(|s| s.reactions).collect();
        let text = write_forces_csv(&reactions);
        assert_eq!(text.lines().count(), 1 + reactions.len());
    }
}
