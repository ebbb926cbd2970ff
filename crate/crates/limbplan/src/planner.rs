//! Sampling-based motion planning over the human joint space.
//!
//! A batch-organized, asymptotically-optimal tree planner (RRT*-style
//! rewiring, uniform sampling with goal bias) produces a coarse feasible
//! path. Validity of a configuration means joint limits, collision
//! clearance, and a solvable statics system whose reactions pass the
//! safety check. Edges are validated by interpolation at a fixed joint
//! resolution. All randomness comes from a seeded stream, so identical
//! scenarios produce identical paths.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::collision::state_free;
use crate::model::{human_fk, HumanArmModel, HumanArmState, Pose, Scenario};
use crate::statics::{check_safety, solve_reactions};

/// Maximum joint-space step between interpolated edge samples, radians.
pub const EDGE_RESOLUTION_RAD: f64 = 0.05;

/// Maximum tree-extension length in joint space, radians (L2).
const STEER_STEP_RAD: f64 = 0.5;

/// Probability of sampling the goal configuration directly.
const GOAL_BIAS: f64 = 0.05;

/// Iterations per anytime batch; the incumbent cost is recorded at batch
/// boundaries and never increases.
pub const BATCH_SIZE: u64 = 256;

/// Coarse feasible path through human joint space with planner metadata.
#[derive(Debug, Clone)]
pub struct HumanPath {
    pub waypoints: Vec<HumanArmState>,
    pub run_time_s: f64,
    pub iterations: u64,
    pub cost: f64,
    /// Incumbent cost at each batch boundary after a path was found.
    pub batch_costs: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("{which} failed validity: {reason}")]
    InvalidEndpoint { which: &'static str, reason: String },
    #[error("no path found within budget ({iterations} iterations, {elapsed_s:.1} s)")]
    NoPathFound { iterations: u64, elapsed_s: f64 },
}

/// Explains why a configuration is invalid, or `Ok` if it passes every
/// check required by the problem constraints.
pub fn validity_report(scenario: &Scenario, theta: &HumanArmState) -> Result<(), String> {
    if !theta.is_finite() {
        return Err("non-finite joint values".into());
    }
    for (i, (t, l)) in theta
        .0
        .iter()
        .zip(scenario.human.joint_limits.iter())
        .enumerate()
    {
        if *t < l[0] || *t > l[1] {
            return Err(format!("joint {i} value {t} outside [{}, {}]", l[0], l[1]));
        }
    }
    if !state_free(scenario, theta, None) {
        return Err("collision clearance violated".into());
    }
    let sol = solve_reactions(
        &scenario.human,
        theta,
        &scenario.gravity_vec(),
        scenario.closure,
    )
    .map_err(|e| e.to_string())?;
    let report = check_safety(&sol, &scenario.safety);
    if !report.pass {
        return Err(report.violations.join("; "));
    }
    Ok(())
}

/// True iff `theta` is within limits, collision free, and statically safe
/// under the scenario's closure model.
pub fn is_valid(scenario: &Scenario, theta: &HumanArmState) -> bool {
    validity_report(scenario, theta).is_ok()
}

/// Interior interpolation parameters for edge validation at the fixed
/// joint resolution (excludes both endpoints).
pub fn edge_interpolation_steps(a: &HumanArmState, b: &HumanArmState) -> usize {
    (a.max_joint_delta(b) / EDGE_RESOLUTION_RAD).ceil() as usize
}

/// Validates the open segment between two (already valid) states.
pub fn edge_valid(scenario: &Scenario, a: &HumanArmState, b: &HumanArmState) -> bool {
    let n = edge_interpolation_steps(a, b);
    for i in 1..n {
        let t = i as f64 / n as f64;
        if !is_valid(scenario, &a.lerp(b, t)) {
            return false;
        }
    }
    true
}

/// Grasp pose at a configuration (the quantity the cost measures).
pub fn grasp_pose(model: &HumanArmModel, theta: &HumanArmState) -> Pose {
    human_fk(model, theta).1
}

/// Cost of moving between two grasp poses: weighted translation plus
/// relative-rotation angle.
pub fn pose_delta_cost(a: &Pose, b: &Pose, c_p: f64, c_o: f64) -> f64 {
    c_p * a.position_distance(b) + c_o * a.angle_to(b)
}

/// Path cost: sum of grasp-pose deltas over consecutive waypoints.
pub fn path_cost(model: &HumanArmModel, waypoints: &[HumanArmState], c_p: f64, c_o: f64) -> f64 {
    assert!(waypoints.len() >= 2, "path needs at least two waypoints");
    let mut prev = grasp_pose(model, &waypoints[0]);
    let mut total = 0.0;
    for theta in &waypoints[1..] {
        let cur = grasp_pose(model, theta);
        total += pose_delta_cost(&prev, &cur, c_p, c_o);
        prev = cur;
    }
    total
}

/// Position-only and orientation-only lengths of a waypoint path.
pub fn path_lengths(model: &HumanArmModel, waypoints: &[HumanArmState]) -> (f64, f64) {
    (
        path_cost(model, waypoints, 1.0, 0.0),
        path_cost(model, waypoints, 0.0, 1.0),
    )
}

struct Vertex {
    theta: HumanArmState,
    pose: Pose,
    parent: usize,
    cost: f64,
    children: Vec<usize>,
}

enum Budget {
    Iterations(u64),
    Time(f64),
}

impl Budget {
    fn exhausted(&self, iterations: u64, start: &Instant) -> bool {
        match self {
            Budget::Iterations(n) => iterations >= *n,
            Budget::Time(s) => start.elapsed().as_secs_f64() >= *s,
        }
    }
}

/// Plans a feasible coarse path from `theta_start` to `theta_goal`.
///
/// Deterministic for a fixed scenario (including seed) when an iteration
/// budget is set; with a wall-clock budget the waypoints still come from
/// the same sample stream but the stopping point may vary.
pub fn plan(scenario: &Scenario) -> Result<HumanPath, PlanError> {
    let start_time = Instant::now();
    for (which, theta) in [
        ("theta_start", &scenario.theta_start),
        ("theta_goal", &scenario.theta_goal),
    ] {
        validity_report(scenario, theta)
            .map_err(|reason| PlanError::InvalidEndpoint { which, reason })?;
    }

    let model = &scenario.human;
    let cw = scenario.cost_weights;
    let start = scenario.theta_start;
    let goal = scenario.theta_goal;

    if start.joint_distance(&goal) < 1e-12 {
        return Ok(HumanPath {
            waypoints: vec![start, goal],
            run_time_s: start_time.elapsed().as_secs_f64(),
            iterations: 0,
            cost: 0.0,
            batch_costs: vec![0.0],
        });
    }

    let budget = match scenario.planner_iterations {
        Some(n) => Budget::Iterations(n),
        None => Budget::Time(scenario.time_budget_s),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);

    let mut vertices = vec![Vertex {
        theta: start,
        pose: grasp_pose(model, &start),
        parent: usize::MAX,
        cost: 0.0,
        children: Vec::new(),
    }];
    let goal_pose = grasp_pose(model, &goal);
    // Virtual goal vertex: best known parent in the tree and total cost.
    let mut goal_parent: Option<usize> = None;
    let mut goal_cost = f64::INFINITY;
    let mut batch_costs = Vec::new();

    let mut iterations: u64 = 0;
    while !budget.exhausted(iterations, &start_time) {
        iterations += 1;

        let sample = if rng.gen::<f64>() < GOAL_BIAS {
            goal
        } else {
            let mut t = [0.0; 5];
            for i in 0..5 {
                let l = model.joint_limits[i];
                t[i] = rng.gen_range(l[0]..=l[1]);
            }
            HumanArmState(t)
        };

        // Nearest vertex in joint space, then bounded extension toward
        // the sample. The limit box is convex, so the result stays inside.
        let nearest = (0..vertices.len())
            .min_by(|a, b| {
                let da = vertices[*a].theta.joint_distance(&sample);
                let db = vertices[*b].theta.joint_distance(&sample);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let dist = vertices[nearest].theta.joint_distance(&sample);
        if dist < 1e-12 {
            continue;
        }
        let new_theta = if dist <= STEER_STEP_RAD {
            sample
        } else {
            vertices[nearest].theta.lerp(&sample, STEER_STEP_RAD / dist)
        };
        if !is_valid(scenario, &new_theta) {
            continue;
        }
        let new_pose = grasp_pose(model, &new_theta);

        // Shrinking RRT* neighborhood radius in joint space.
        let n = vertices.len() as f64;
        let radius = (2.5 * ((n.ln() + 1.0) / n).powf(0.2)).clamp(STEER_STEP_RAD, 2.0);
        let near: Vec<usize> = (0..vertices.len())
            .filter(|i| vertices[*i].theta.joint_distance(&new_theta) <= radius)
            .collect();

        // Choose the cheapest valid parent among the neighborhood.
        let mut best_parent = None;
        let mut best_cost = f64::INFINITY;
        let mut candidates = near.clone();
        if !candidates.contains(&nearest) {
            candidates.push(nearest);
        }
        candidates.sort_by(|a, b| {
            let ca =
                vertices[*a].cost + pose_delta_cost(&vertices[*a].pose, &new_pose, cw.c_p, cw.c_o);
            let cb =
                vertices[*b].cost + pose_delta_cost(&vertices[*b].pose, &new_pose, cw.c_p, cw.c_o);
            ca.partial_cmp(&cb).unwrap()
        });
        for &i in &candidates {
            let through =
                vertices[i].cost + pose_delta_cost(&vertices[i].pose, &new_pose, cw.c_p, cw.c_o);
            if through >= best_cost {
                break;
            }
            if edge_valid(scenario, &vertices[i].theta, &new_theta) {
                best_parent = Some(i);
                best_cost = through;
                break;
            }
        }
        let Some(parent) = best_parent else { continue };

        let new_index = vertices.len();
        vertices.push(Vertex {
            theta: new_theta,
            pose: new_pose,
            parent,
            cost: best_cost,
            children: Vec::new(),
        });
        vertices[parent].children.push(new_index);

        // Rewire the neighborhood through the new vertex where cheaper.
        for &i in &near {
            if i == parent || i == 0 {
                continue;
            }
            let through = best_cost + pose_delta_cost(&new_pose, &vertices[i].pose, cw.c_p, cw.c_o);
            if through + 1e-12 < vertices[i].cost
                && edge_valid(scenario, &new_theta, &vertices[i].theta)
            {
                let old_parent = vertices[i].parent;
                vertices[old_parent].children.retain(|c| *c != i);
                vertices[i].parent = new_index;
                vertices[new_index].children.push(i);
                let delta = through - vertices[i].cost;
                propagate_cost(&mut vertices, i, delta);
            }
        }

        // Try to connect the new vertex to the goal.
        if new_theta.joint_distance(&goal) <= radius {
            let through = vertices[new_index].cost
                + pose_delta_cost(&vertices[new_index].pose, &goal_pose, cw.c_p, cw.c_o);
            if through < goal_cost && edge_valid(scenario, &new_theta, &goal) {
                goal_cost = through;
                goal_parent = Some(new_index);
            }
        }

        if iterations % BATCH_SIZE == 0 {
            if let Some(gp) = goal_parent {
                // Rewiring may have improved the incumbent's upstream cost.
                goal_cost = vertices[gp].cost
                    + pose_delta_cost(&vertices[gp].pose, &goal_pose, cw.c_p, cw.c_o);
                batch_costs.push(goal_cost);
            }
        }
    }

    let Some(gp) = goal_parent else {
        return Err(PlanError::NoPathFound {
            iterations,
            elapsed_s: start_time.elapsed().as_secs_f64(),
        });
    };
    let final_cost =
        vertices[gp].cost + pose_delta_cost(&vertices[gp].pose, &goal_pose, cw.c_p, cw.c_o);
    batch_costs.push(final_cost);

    let mut vertices_on_path = vec![goal];
    let mut cursor = gp;
    while cursor != usize::MAX {
        // Goal-biased samples can create a tree vertex equal to the goal;
        // skip zero-length repeats during reconstruction.
        if vertices[cursor]
            .theta
            .joint_distance(vertices_on_path.last().unwrap())
            > 1e-12
        {
            vertices_on_path.push(vertices[cursor].theta);
        }
        cursor = vertices[cursor].parent;
    }
    if vertices_on_path.last().unwrap().joint_distance(&start) > 1e-12 {
        vertices_on_path.push(start);
    }
    vertices_on_path.reverse();

    // Emit the path densified at the edge-validation resolution: these
    // interpolated states were already checked valid, and the summed
    // pose deltas then measure the actual motion instead of hiding
    // curvature inside long chords.
    let mut waypoints = vec![vertices_on_path[0]];
    for pair in vertices_on_path.windows(2) {
        let n = edge_interpolation_steps(&pair[0], &pair[1]).max(1);
        for i in 1..n {
            waypoints.push(pair[0].lerp(&pair[1], i as f64 / n as f64));
        }
        // Exact vertex, not lerp(..., 1.0): endpoints must match bit-wise.
        waypoints.push(pair[1]);
    }

    Ok(HumanPath {
        cost: path_cost(model, &waypoints, cw.c_p, cw.c_o),
        waypoints,
        run_time_s: start_time.elapsed().as_secs_f64(),
        iterations,
        batch_costs,
    })
}

fn propagate_cost(vertices: &mut [Vertex], root: usize, delta: f64) {
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        vertices[v].cost += delta;
        stack.extend(vertices[v].children.iter().copied());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_scenario, HumanArmModel, Pose};
    use nalgebra::{UnitQuaternion, Vector3};

    fn lift_scenario() -> Scenario {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../scenarios/supine_lift.json"
        ))
        .expect("default scenario file");
        let mut s = load_scenario(&text).expect("valid scenario");
        s.planner_iterations = Some(1500);
        s
    }

    #[test]
    fn endpoints_of_default_scenario_are_valid() {
        let s = lift_scenario();
        assert!(
            is_valid(&s, &s.theta_start),
            "{:?}",
            validity_report(&s, &s.theta_start)
        );
        assert!(
            is_valid(&s, &s.theta_goal),
            "{:?}",
            validity_report(&s, &s.theta_goal)
        );
    }

    #[test]
    fn out_of_limit_state_is_invalid() {
        let s = lift_scenario();
        let mut theta = s.theta_start;
        theta.0[3] = s.human.joint_limits[3][1] + 0.1;
        assert!(!is_valid(&s, &theta));
    }

    #[test]
    fn inflated_mass_fails_safety() {
        let mut s = lift_scenario();
        assert!(is_valid(&s, &s.theta_start));
        // Distal mass is carried by the wrench, not the joints: the
        // closure family pins the joint reactions to the upper-arm weight
        // alone, so a heavy forearm leaves the reactions unchanged.
        let baseline =
            crate::statics::solve_reactions(&s.human, &s.theta_start, &s.gravity_vec(), s.closure)
                .unwrap();
        s.human.lower_arm_mass = 200.0;
        let heavy_forearm =
            crate::statics::solve_reactions(&s.human, &s.theta_start, &s.gravity_vec(), s.closure)
                .unwrap();
        for i in 0..3 {
            assert!((baseline.shoulder_force[i] - heavy_forearm.shoulder_force[i]).abs() < 1e-9);
        }
        assert!(is_valid(&s, &s.theta_start));

        // Inflating the upper arm loads the shoulder past its limit.
        s.human.lower_arm_mass = 3.0;
        s.human.upper_arm_mass = 200.0;
        assert!(
            !is_valid(&s, &s.theta_start),
            "200 kg upper arm must exceed the shoulder force limit"
        );
    }

    #[test]
    fn trivial_plan_when_start_equals_goal() {
        let mut s = lift_scenario();
        s.theta_goal = s.theta_start;
        let path = plan(&s).expect("trivial plan");
        assert_eq!(path.waypoints.len(), 2);
        assert_eq!(path.cost, 0.0);
    }

    #[test]
    fn invalid_goal_is_reported_as_endpoint() {
        let mut s = lift_scenario();
        // Colliding goal: drive the arm into the ground.
        s.theta_goal = HumanArmState([0.0, 1.4, 0.0, 0.3, 0.0]);
        match plan(&s) {
            Err(PlanError::InvalidEndpoint { which, .. }) => assert_eq!(which, "theta_goal"),
            other => panic!("expected InvalidEndpoint, got {other:?}"),
        }

        // Goal outside the joint limits fails the same way.
        let mut s = lift_scenario();
        s.theta_goal.0[3] = s.human.joint_limits[3][1] + 0.5;
        match plan(&s) {
            Err(PlanError::InvalidEndpoint { which, reason }) => {
                assert_eq!(which, "theta_goal");
                assert!(reason.contains("outside"), "reason: {reason}");
            }
            other => panic!("expected InvalidEndpoint, got {other:?}"),
        }
    }

    #[test]
    fn exhausted_budget_reports_no_path() {
        let mut s = lift_scenario();
        s.planner_iterations = Some(2);
        match plan(&s) {
            Err(PlanError::NoPathFound { iterations, .. }) => assert_eq!(iterations, 2),
            other => panic!("expected NoPathFound, got {other:?}"),
        }
    }

    #[test]
    fn plan_finds_valid_path_on_default_scenario() {
        let s = lift_scenario();
        let path = plan(&s).expect("plan succeeds");
        assert_eq!(path.waypoints.first().unwrap().0, s.theta_start.0);
        assert_eq!(path.waypoints.last().unwrap().0, s.theta_goal.0);
        for w in &path.waypoints {
            assert!(is_valid(&s, w));
        }
        for pair in path.waypoints.windows(2) {
            assert!(edge_valid(&s, &pair[0], &pair[1]));
        }
        // Anytime property: batch incumbents never increase.
        for pair in path.batch_costs.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }

    #[test]
    fn plan_cost_within_3x_of_valid_straight_line() {
        // Free corridor variant: drop the keep-out sphere so the straight
        // joint-space line is itself valid and usable as a cost oracle.
        let mut s = lift_scenario();
        s.obstacles.truncate(1);
        let straight = [s.theta_start, s.theta_goal];
        assert!(
            edge_valid(&s, &straight[0], &straight[1]),
            "straight line must be valid in the free corridor"
        );
        let straight_cost = path_cost(&s.human, &straight, 1.0, 1.0);
        let path = plan(&s).expect("plan succeeds");
        assert!(
            path.cost <= 3.0 * straight_cost + 1e-9,
            "cost {} vs straight {}",
            path.cost,
            straight_cost
        );
    }

    #[test]
    fn planning_is_deterministic_under_seed() {
        let s = lift_scenario();
        let a = plan(&s).expect("plan a");
        let b = plan(&s).expect("plan b");
        assert_eq!(a.waypoints.len(), b.waypoints.len());
        for (wa, wb) in a.waypoints.iter().zip(b.waypoints.iter()) {
            assert_eq!(wa.0, wb.0, "waypoints must be byte-identical");
        }
        assert_eq!(a.cost, b.cost);
    }

    #[test]
    fn cost_examples() {
        // Synthetic poses: cost is translation plus rotation angle.
        let a = Pose::identity();
        let b = Pose {
            position: [0.1, 0.0, 0.0],
            orientation: [0.0, 0.0, 0.0],
        };
        assert!((pose_delta_cost(&a, &b, 1.0, 1.0) - 0.1).abs() < 1e-12);

        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let q = UnitQuaternion::from_scaled_axis(axis * 0.5);
        let c = Pose {
            position: [0.0; 3],
            orientation: (q.scaled_axis()).into(),
        };
        // Independent composition check: angle of a*c^-1 equals 0.5.
        let rel = Pose::identity().rotation().rotation_to(&c.rotation());
        assert!((rel.angle() - 0.5).abs() < 1e-12);
        assert!((pose_delta_cost(&a, &c, 1.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn path_cost_is_additive_and_zero_for_constant() {
        let s = lift_scenario();
        let a = s.theta_start;
        let m = a.lerp(&s.theta_goal, 0.4);
        let b = s.theta_goal;
        let whole = path_cost(&s.human, &[a, m, b], 1.0, 1.0);
        let parts = path_cost(&s.human, &[a, m], 1.0, 1.0) + path_cost(&s.human, &[m, b], 1.0, 1.0);
        assert!((whole - parts).abs() < 1e-12);

        let constant = [a, a, a];
        assert_eq!(path_cost(&s.human, &constant, 1.0, 1.0), 0.0);
    }

    fn _assert_model_usable(m: &HumanArmModel) {
        let _ = m.upper_arm_length;
    }
}
