//! End-to-end tests of the command pipeline and its file formats.

use std::path::PathBuf;

use limbplan::cli::{cmd_forces, cmd_plan, cmd_validate, exit_code};
use limbplan::model::load_scenario;
use limbplan::planner::path_cost;
use limbplan::report::parse_trajectory_csv;
use limbplan::statics::{solve_reactions, ClosureModel};

fn scenario_path() -> PathBuf {
    PathBuf::from(format!(
        "{}/../../scenarios/supine_lift.json",
        env!("CARGO_MANIFEST_DIR")
    ))
}

fn scenario_text() -> String {
    std::fs::read_to_string(scenario_path()).expect("scenario file")
}

/// Writes a modified copy of the default scenario and returns its path.
fn write_scenario(dir: &std::path::Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut doc: serde_json::Value = serde_json::from_str(&scenario_text()).unwrap();
    edit(&mut doc);
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

#[test]
fn reference_scenario_carries_stated_settings() {
    let s = load_scenario(&scenario_text()).expect("loads");
    assert_eq!(s.cost_weights.c_p, 1.0);
    assert_eq!(s.cost_weights.c_o, 1.0);
    assert_eq!(s.time_budget_s, 120.0);
    assert_eq!(s.base_pose_cov_diag, [0.01, 0.0025, 1e-6, 1e-6, 1e-6, 0.07]);
    assert_eq!(s.human.upper_arm_mass, 5.0);
    assert_eq!(s.human.lower_arm_mass, 3.0);
    assert_eq!(s.human.upper_arm_radius, 0.095);
    assert_eq!(s.human.lower_arm_radius, 0.075);
    assert_eq!(s.human.upper_arm_length, 0.22);
    assert_eq!(s.human.lower_arm_length, 0.25);
}

#[test]
fn plan_writes_outputs_and_report_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), |doc| {
        doc["planner_iterations"] = 900.into();
        doc["refine_iterations"] = 100.into();
    });
    let out = dir.path().join("out");
    let code = cmd_plan(&scenario, &out, None);
    assert_eq!(code, exit_code::OK);

    for name in [
        "trajectory.csv",
        "forces_balanced.csv",
        "forces_shoulder_relief.csv",
        "forces_elbow_relief.csv",
        "report.json",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["feasible"], true);
    let coarse_pos = report["planner"]["pos_length_m"].as_f64().unwrap();
    let refined_pos = report["refiner"]["pos_length_m"].as_f64().unwrap();
    let coarse_ori = report["planner"]["ori_length_rad"].as_f64().unwrap();
    let refined_ori = report["refiner"]["ori_length_rad"].as_f64().unwrap();
    assert!(refined_pos <= coarse_pos + 1e-9);
    assert!(refined_ori <= coarse_ori + 1e-9);

    // Report numbers must be recomputable from the trajectory file.
    let s = load_scenario(&std::fs::read_to_string(&scenario).unwrap()).unwrap();
    let rows = parse_trajectory_csv(&std::fs::read_to_string(out.join("trajectory.csv")).unwrap())
        .unwrap();
    let thetas: Vec<_> = rows.iter().map(|r| r.theta).collect();
    let pos = path_cost(&s.human, &thetas, 1.0, 0.0);
    let ori = path_cost(&s.human, &thetas, 0.0, 1.0);
    assert!((pos - refined_pos).abs() < 1e-9, "{pos} vs {refined_pos}");
    assert!((ori - refined_ori).abs() < 1e-9, "{ori} vs {refined_ori}");

    // Emitted trajectory parses back to the exact same values.
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let reparsed = parse_trajectory_csv(&text).unwrap();
    assert_eq!(rows.len(), reparsed.len());
    for (a, b) in rows.iter().zip(reparsed.iter()) {
        assert_eq!(a.theta.0, b.theta.0);
        assert_eq!(a.q, b.q);
    }

    // Balanced closure stays within limits; at least one relief does not.
    let maxima = report["per_closure_max"].as_array().unwrap();
    let balanced = maxima.iter().find(|m| m["closure"] == "balanced").unwrap();
    assert_eq!(balanced["within_limits"], true);
    assert!(maxima.iter().any(|m| m["within_limits"] == false));
}

#[test]
fn forces_command_matches_direct_solve_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), |doc| {
        doc["planner_iterations"] = 900.into();
        doc["refine_iterations"] = 100.into();
    });
    let out = dir.path().join("out");
    assert_eq!(cmd_plan(&scenario, &out, Some(3)), exit_code::OK);

    let traj = out.join("trajectory.csv");
    let forces_out = dir.path().join("forces.csv");
    let code = cmd_forces(
        &scenario,
        &traj,
        ClosureModel::ElbowRelief,
        Some(&forces_out),
        false,
    );
    assert_eq!(code, exit_code::OK);

    let s = load_scenario(&std::fs::read_to_string(&scenario).unwrap()).unwrap();
    let rows = parse_trajectory_csv(&std::fs::read_to_string(&traj).unwrap()).unwrap();
    let forces_text = std::fs::read_to_string(&forces_out).unwrap();
    let force_lines: Vec<&str> = forces_text.lines().skip(1).collect();
    assert_eq!(force_lines.len(), rows.len(), "row count matches waypoints");

    for (row, line) in rows.iter().zip(force_lines.iter()) {
        let sol = solve_reactions(
            &s.human,
            &row.theta,
            &s.gravity_vec(),
            ClosureModel::ElbowRelief,
        )
        .expect("solvable");
        let fields: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|f| f.parse().unwrap())
            .collect();
        for i in 0..3 {
            assert!((fields[i] - sol.wrench.force[i]).abs() < 1e-12);
            assert!((fields[6 + i] - sol.shoulder_force[i]).abs() < 1e-12);
            assert!((fields[9 + i] - sol.elbow_force[i]).abs() < 1e-12);
        }
        assert!((fields[12] - sol.elbow_torque).abs() < 1e-12);
    }
}

#[test]
fn forces_zero_gravity_emits_zero_columns() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), |doc| {
        doc["planner_iterations"] = 900.into();
        doc["refine_iterations"] = 50.into();
    });
    let out = dir.path().join("out");
    assert_eq!(cmd_plan(&scenario, &out, Some(4)), exit_code::OK);

    let forces_out = dir.path().join("forces0.csv");
    let code = cmd_forces(
        &scenario,
        &out.join("trajectory.csv"),
        ClosureModel::Balanced,
        Some(&forces_out),
        true,
    );
    assert_eq!(code, exit_code::OK);
    let text = std::fs::read_to_string(&forces_out).unwrap();
    for line in text.lines().skip(1) {
        for field in line.split(',').skip(1) {
            let v: f64 = field.parse().unwrap();
            assert_eq!(v, 0.0, "zero gravity must zero all force columns");
        }
    }
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cmd_validate(&scenario_path()), 0);

    let bad = write_scenario(dir.path(), |doc| {
        doc["human"]["upper_arm_mass"] = (-1.0).into();
    });
    assert_eq!(cmd_validate(&bad), 1);

    let missing = write_scenario(dir.path(), |doc| {
        doc["human"]
            .as_object_mut()
            .unwrap()
            .remove("lower_arm_mass");
    });
    assert_eq!(cmd_validate(&missing), 1);
}

#[test]
fn plan_exit_codes_for_failure_stages() {
    let dir = tempfile::tempdir().unwrap();

    // Goal outside joint limits: caught by scenario validation.
    let out_of_limits = write_scenario(dir.path(), |doc| {
        doc["theta_goal"] = serde_json::json!([0.0, 0.15, 0.0, 3.4, 0.0]);
    });
    assert_eq!(
        cmd_plan(&out_of_limits, &dir.path().join("o1"), None),
        exit_code::VALIDATION
    );

    // Goal inside limits but colliding with the ground: invalid endpoint.
    let colliding = write_scenario(dir.path(), |doc| {
        doc["theta_goal"] = serde_json::json!([0.0, 1.4, 0.0, 0.3, 0.0]);
    });
    assert_eq!(
        cmd_plan(&colliding, &dir.path().join("o2"), None),
        exit_code::INVALID_ENDPOINT
    );

    // Base mean far out of reach: rejection sampling exhausts.
    let unreachable = write_scenario(dir.path(), |doc| {
        doc["base_pose_mean"] = serde_json::json!([100.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        doc["max_base_samples"] = 10.into();
        doc["planner_iterations"] = 600.into();
        doc["refine_iterations"] = 20.into();
        doc["n_waypoints"] = 10.into();
    });
    assert_eq!(
        cmd_plan(&unreachable, &dir.path().join("o3"), None),
        exit_code::NO_FEASIBLE_BASE
    );

    // Unreadable scenario path.
    assert_eq!(
        cmd_plan(&dir.path().join("nope.json"), &dir.path().join("o4"), None),
        exit_code::IO
    );
}

#[test]
fn plan_seed_flag_overrides_scenario_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), |doc| {
        doc["planner_iterations"] = 700.into();
        doc["refine_iterations"] = 40.into();
    });
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    assert_eq!(cmd_plan(&scenario, &out_a, Some(11)), exit_code::OK);
    assert_eq!(cmd_plan(&scenario, &out_b, Some(11)), exit_code::OK);
    assert_eq!(cmd_plan(&scenario, &out_c, Some(12)), exit_code::OK);

    let a = std::fs::read(out_a.join("trajectory.csv")).unwrap();
    let b = std::fs::read(out_b.join("trajectory.csv")).unwrap();
    let c = std::fs::read(out_c.join("trajectory.csv")).unwrap();
    assert_eq!(a, b, "same seed, same bytes");
    assert_ne!(a, c, "different seed should explore differently");
}
