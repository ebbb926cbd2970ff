//! Command-line pipeline: `plan` runs the whole trajectory-generation
//! algorithm (coarse planning, refinement, base-pose sampling + IK) and
//! writes the trajectory, per-closure force profiles, and a run report;
//! `forces` recomputes reaction profiles for an existing trajectory;
//! `validate` checks a scenario file.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupling::{replay_forces, sample_base_pose, CouplingError};
use crate::model::{load_scenario, Scenario};
use crate::planner::{self, path_lengths, PlanError};
use crate::report::{
    closure_maxima, parse_trajectory_csv, write_forces_csv, write_trajectory_csv, RunReport,
    StageMetrics, TRAJECTORY_CSV_VERSION,
};
use crate::statics::ClosureModel;
use crate::trajopt;

/// Exit codes: distinct nonzero values per failure stage.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const INVALID_ENDPOINT: i32 = 3;
    pub const NO_PATH_FOUND: i32 = 4;
    pub const NO_FEASIBLE_BASE: i32 = 5;
    pub const SINGULAR_CONFIGURATION: i32 = 6;
}

#[derive(Parser)]
#[command(
    name = "limbplan",
    about = "Biomechanically safe trajectory generation for repositioning a passive human arm"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write trajectory.csv, forces_<closure>.csv
    /// and report.json into the output directory.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit per-step reactions/wrench for an existing trajectory.
    Forces {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, value_enum)]
        closure: ClosureArg,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Solve with gravity zeroed out.
        #[arg(long)]
        zero_gravity: bool,
    },
    /// Validate a scenario file (exit 0 when valid, 1 otherwise).
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClosureArg {
    Balanced,
    ShoulderRelief,
    ElbowRelief,
}

impl From<ClosureArg> for ClosureModel {
    fn from(c: ClosureArg) -> Self {
        match c {
            ClosureArg::Balanced => ClosureModel::Balanced,
            ClosureArg::ShoulderRelief => ClosureModel::ShoulderRelief,
            ClosureArg::ElbowRelief => ClosureModel::ElbowRelief,
        }
    }
}

/// Parses argv and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version through this path as well.
            let _ = e.print();
            return if e.use_stderr() {
                exit_code::IO
            } else {
                exit_code::OK
            };
        }
    };
    match cli.command {
        Command::Plan {
            scenario,
            out,
            seed,
        } => cmd_plan(&scenario, &out, seed),
        Command::Forces {
            scenario,
            trajectory,
            closure,
            out,
            zero_gravity,
        } => cmd_forces(
            &scenario,
            &trajectory,
            closure.into(),
            out.as_deref(),
            zero_gravity,
        ),
        Command::Validate { scenario } => cmd_validate(&scenario),
    }
}

fn read_scenario(path: &Path) -> Result<Scenario, i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(exit_code::IO);
        }
    };
    match load_scenario(&text) {
        Ok(s) => Ok(s),
        Err(e) => {
            eprintln!("error: scenario validation failed: {e}");
            Err(exit_code::VALIDATION)
        }
    }
}

pub fn cmd_plan(scenario_path: &Path, out_dir: &Path, seed: Option<u64>) -> i32 {
    let mut scenario = match read_scenario(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Some(seed) = seed {
        scenario.rng_seed = seed;
    }
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return exit_code::IO;
    }

    eprintln!("[1/3] planning coarse human path...");
    let coarse = match planner::plan(&scenario) {
        Ok(p) => p,
        Err(e @ PlanError::InvalidEndpoint { .. }) => {
            eprintln!("error: planning failed: {e}");
            return exit_code::INVALID_ENDPOINT;
        }
        Err(e @ PlanError::NoPathFound { .. }) => {
            eprintln!("error: planning failed: {e}");
            return exit_code::NO_PATH_FOUND;
        }
    };
    let (coarse_pos, coarse_ori) = path_lengths(&scenario.human, &coarse.waypoints);
    eprintln!(
        "      {} waypoints, pos {:.3} m, ori {:.3} rad, {:.2} s",
        coarse.waypoints.len(),
        coarse_pos,
        coarse_ori,
        coarse.run_time_s
    );

    eprintln!("[2/3] refining...");
    let refined = trajopt::refine(&scenario, &coarse);
    let (refined_pos, refined_ori) = path_lengths(&scenario.human, &refined.waypoints);
    eprintln!(
        "      {} waypoints, pos {:.3} m, ori {:.3} rad, {:.2} s",
        refined.waypoints.len(),
        refined_pos,
        refined_ori,
        refined.run_time_s
    );

    eprintln!("[3/3] sampling robot base pose + IK...");
    let coupling_start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed.wrapping_add(1));
    let coupled = match sample_base_pose(&scenario, &refined.waypoints, &mut rng) {
        Ok(c) => c,
        Err(e @ CouplingError::NoFeasibleBase { .. }) => {
            eprintln!("error: coupling failed: {e}");
            return exit_code::NO_FEASIBLE_BASE;
        }
        Err(e) => {
            eprintln!("error: coupling failed: {e}");
            return exit_code::SINGULAR_CONFIGURATION;
        }
    };
    let coupling_run_time = coupling_start.elapsed().as_secs_f64();
    eprintln!(
        "      accepted base sample {} at [{:.3} {:.3} {:.3} | {:.3} {:.3} {:.3}]",
        coupled.samples_tried,
        coupled.base.0[0],
        coupled.base.0[1],
        coupled.base.0[2],
        coupled.base.0[3],
        coupled.base.0[4],
        coupled.base.0[5],
    );

    // Trajectory CSV.
    let traj_csv = write_trajectory_csv(&coupled, scenario.robot.n_joints);
    if let Err(e) = std::fs::write(out_dir.join("trajectory.csv"), traj_csv) {
        eprintln!("error: writing trajectory.csv: {e}");
        return exit_code::IO;
    }

    // Per-closure force replays.
    let mut per_closure_max = Vec::new();
    for closure in ClosureModel::all() {
        let reactions = match replay_forces(&scenario, &coupled, closure) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: force replay ({}) failed: {e}", closure.name());
                return exit_code::SINGULAR_CONFIGURATION;
            }
        };
        per_closure_max.push(closure_maxima(closure.name(), &reactions, &scenario.safety));
        let path = out_dir.join(format!("forces_{}.csv", closure.name()));
        if let Err(e) = std::fs::write(&path, write_forces_csv(&reactions)) {
            eprintln!("error: writing {}: {e}", path.display());
            return exit_code::IO;
        }
    }

    let report = RunReport {
        csv_version: TRAJECTORY_CSV_VERSION,
        feasible: true,
        planner: StageMetrics {
            run_time_s: coarse.run_time_s,
            iterations: coarse.iterations,
            pos_length_m: coarse_pos,
            ori_length_rad: coarse_ori,
            cost: coarse.cost,
        },
        refiner: StageMetrics {
            run_time_s: refined.run_time_s,
            iterations: refined.iterations,
            pos_length_m: refined_pos,
            ori_length_rad: refined_ori,
            cost: refined.cost,
        },
        coupling_run_time_s: coupling_run_time,
        base_samples_tried: coupled.samples_tried,
        base_pose: coupled.base.0,
        per_closure_max,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Err(e) = std::fs::write(out_dir.join("report.json"), json) {
        eprintln!("error: writing report.json: {e}");
        return exit_code::IO;
    }
    eprintln!("done: results in {}", out_dir.display());
    exit_code::OK
}

pub fn cmd_forces(
    scenario_path: &Path,
    trajectory_path: &Path,
    closure: ClosureModel,
    out: Option<&Path>,
    zero_gravity: bool,
) -> i32 {
    let mut scenario = match read_scenario(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if zero_gravity {
        scenario.gravity = [0.0, 0.0, 0.0];
    }
    let text = match std::fs::read_to_string(trajectory_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", trajectory_path.display());
            return exit_code::IO;
        }
    };
    let rows = match parse_trajectory_csv(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: trajectory parse failed: {e}");
            return exit_code::VALIDATION;
        }
    };
    let reactions =
        match crate::coupling::replay_forces_over(&scenario, rows.iter().map(|r| r.theta), closure)
        {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return exit_code::SINGULAR_CONFIGURATION;
            }
        };
    let csv = write_forces_csv(&reactions);
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, csv) {
                eprintln!("error: writing {}: {e}", path.display());
                return exit_code::IO;
            }
        }
        None => print!("{csv}"),
    }
    exit_code::OK
}

pub fn cmd_validate(scenario_path: &Path) -> i32 {
    let text = match std::fs::read_to_string(scenario_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", scenario_path.display());
            return 1;
        }
    };
    match load_scenario(&text) {
        Ok(_) => {
            println!("ok");
            exit_code::OK
        }
        Err(e) => {
            eprintln!("invalid: {e}");
            1
        }
    }
}
