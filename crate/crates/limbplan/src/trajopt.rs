//! Refinement of a coarse human path by feasible, monotone descent on the
//! grasp-pose path cost.
//!
//! The coarse path is resampled to a fixed waypoint count with uniform
//! arc-length stations on its polyline, then interior waypoints are moved
//! one at a time along numerical anti-gradients of the cost. A move is
//! kept only when it lowers the cost and the waypoint plus its two edges
//! stay valid, so feasibility is never lost and accepted iterations never
//! increase the cost. If the discretization overhead of uniform stations
//! leaves the result above the input cost (already-optimal inputs), the
//! refiner falls back to a cost-exact resampling (new stations duplicate
//! polyline vertices) whose descent output can never exceed the input.

use std::time::Instant;

use crate::model::{HumanArmModel, HumanArmState, Scenario};
use crate::planner::{edge_valid, grasp_pose, is_valid, path_cost, pose_delta_cost, HumanPath};
use crate::statics::{solve_reactions, ReactionSolution};

/// Coarse path resampled to `n_waypoints` and locally optimized.
#[derive(Debug, Clone)]
pub struct RefinedTrajectory {
    pub waypoints: Vec<HumanArmState>,
    pub cost: f64,
    pub reactions: Vec<ReactionSolution>,
    pub run_time_s: f64,
    /// Completed descent sweeps over the interior waypoints.
    pub iterations: u64,
}

/// Relative cost improvement under which refinement stops, measured over
/// a 10-sweep window.
const CONVERGENCE_RTOL: f64 = 1e-6;
const CONVERGENCE_WINDOW: u64 = 10;

/// Central-difference step for the cost gradient.
const GRADIENT_STEP: f64 = 1e-6;

/// Largest waypoint move attempted by the line search, radians.
const MAX_MOVE_RAD: f64 = 0.12;
const LINE_SEARCH_HALVINGS: usize = 6;

/// Uniform arc-length stations along the joint-space polyline. Spreads
/// waypoints evenly, which the robot-coupling continuity check needs;
/// may increase the summed grasp-pose cost slightly because chords of a
/// curve subdivide into longer chord sums.
pub fn resample_uniform(waypoints: &[HumanArmState], n: usize) -> Vec<HumanArmState> {
    resample_uniform_anchored(waypoints, n).0
}

/// Uniform stations plus, for each station, the index of the nearer
/// endpoint of its source segment. Input vertices are known-valid
/// states, so a station that lands in an invalid sliver between the
/// edge-check samples can be snapped back to its anchor.
fn resample_uniform_anchored(
    waypoints: &[HumanArmState],
    n: usize,
) -> (Vec<HumanArmState>, Vec<usize>) {
    assert!(waypoints.len() >= 2 && n >= 2);
    let mut cumulative = vec![0.0];
    for pair in waypoints.windows(2) {
        let d = pair[0].joint_distance(&pair[1]);
        cumulative.push(cumulative.last().unwrap() + d);
    }
    let total = *cumulative.last().unwrap();
    if total <= 0.0 {
        return (vec![waypoints[0]; n], vec![0; n]);
    }
    let mut out = Vec::with_capacity(n);
    let mut anchors = Vec::with_capacity(n);
    out.push(waypoints[0]);
    anchors.push(0);
    let mut seg = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let t = if span > 0.0 {
            (target - cumulative[seg]) / span
        } else {
            0.0
        };
        out.push(waypoints[seg].lerp(&waypoints[seg + 1], t));
        anchors.push(if t < 0.5 { seg } else { seg + 1 });
    }
    out.push(*waypoints.last().unwrap());
    anchors.push(waypoints.len() - 1);
    (out, anchors)
}

/// Resamples to `n` waypoints without increasing the cost and without
/// creating any state not already in the input: when the path must grow,
/// new waypoints duplicate segment starts (zero-length segments cost
/// nothing); when it must shrink, a subset of the input vertices is kept
/// (dropping vertices only shortens chord sums).
pub fn resample_exact_cost(waypoints: &[HumanArmState], n: usize) -> Vec<HumanArmState> {
    assert!(waypoints.len() >= 2 && n >= 2);
    if waypoints.len() == n {
        return waypoints.to_vec();
    }
    if waypoints.len() > n {
        let mut cumulative = vec![0.0];
        for pair in waypoints.windows(2) {
            let d = pair[0].joint_distance(&pair[1]);
            cumulative.push(cumulative.last().unwrap() + d);
        }
        let total = *cumulative.last().unwrap();
        let mut out = Vec::with_capacity(n);
        out.push(waypoints[0]);
        let mut prev_idx = 0;
        for k in 1..n - 1 {
            let target = total * k as f64 / (n - 1) as f64;
            let mut idx = match cumulative.binary_search_by(|c| c.partial_cmp(&target).unwrap()) {
                Ok(i) => i,
                Err(i) => {
                    // Nearer of the two bracketing vertices.
                    if i == 0 {
                        0
                    } else if i >= cumulative.len() {
                        cumulative.len() - 1
                    } else if target - cumulative[i - 1] <= cumulative[i] - target {
                        i - 1
                    } else {
                        i
                    }
                }
            };
            idx = idx.clamp(prev_idx, waypoints.len() - 1);
            out.push(waypoints[idx]);
            prev_idx = idx;
        }
        out.push(*waypoints.last().unwrap());
        return out;
    }
    let mut lengths: Vec<f64> = waypoints
        .windows(2)
        .map(|w| w[0].joint_distance(&w[1]))
        .collect();
    let sum: f64 = lengths.iter().sum();
    if sum <= 0.0 {
        lengths.iter_mut().for_each(|l| *l = 1.0);
    }
    let total: f64 = lengths.iter().sum();
    let extra = n - waypoints.len();
    let mut copies: Vec<usize> = lengths
        .iter()
        .map(|l| (extra as f64 * l / total).floor() as usize)
        .collect();
    let mut assigned: usize = copies.iter().sum();
    let n_segments = copies.len();
    let mut seg = 0;
    while assigned < extra {
        copies[seg % n_segments] += 1;
        assigned += 1;
        seg += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (i, w) in waypoints[..waypoints.len() - 1].iter().enumerate() {
        out.push(*w);
        for _ in 0..copies[i] {
            out.push(*w);
        }
    }
    out.push(*waypoints.last().unwrap());
    debug_assert_eq!(out.len(), n);
    out
}

/// Central-difference gradient of [`path_cost`] with respect to each
/// interior waypoint; endpoint rows are zero. Only the two segments
/// adjacent to a waypoint depend on it, so the stencil is local.
pub fn finite_diff_gradient(
    model: &HumanArmModel,
    waypoints: &[HumanArmState],
    c_p: f64,
    c_o: f64,
    h: f64,
) -> Vec<[f64; 5]> {
    assert!(h > 0.0);
    let mut grad = vec![[0.0; 5]; waypoints.len()];
    if waypoints.len() < 3 {
        return grad;
    }
    let poses: Vec<_> = waypoints.iter().map(|w| grasp_pose(model, w)).collect();
    for i in 1..waypoints.len() - 1 {
        grad[i] = local_gradient(
            model,
            &poses[i - 1],
            &waypoints[i],
            &poses[i + 1],
            c_p,
            c_o,
            h,
        );
    }
    grad
}

fn local_gradient(
    model: &HumanArmModel,
    prev: &crate::model::Pose,
    at: &HumanArmState,
    next: &crate::model::Pose,
    c_p: f64,
    c_o: f64,
    h: f64,
) -> [f64; 5] {
    let mut g = [0.0; 5];
    for j in 0..5 {
        let mut plus = *at;
        let mut minus = *at;
        plus.0[j] += h;
        minus.0[j] -= h;
        let cost_at = |theta: &HumanArmState| {
            let p = grasp_pose(model, theta);
            pose_delta_cost(prev, &p, c_p, c_o) + pose_delta_cost(&p, next, c_p, c_o)
        };
        g[j] = (cost_at(&plus) - cost_at(&minus)) / (2.0 * h);
    }
    g
}

struct DescentOutcome {
    waypoints: Vec<HumanArmState>,
    cost: f64,
    sweeps: u64,
}

/// Position and orientation parts of one chord.
fn chord_parts(a: &crate::model::Pose, b: &crate::model::Pose) -> (f64, f64) {
    (a.position_distance(b), a.angle_to(b))
}

/// Coordinate-descent sweeps over interior waypoints with a backtracking
/// line search per waypoint. Monotone in cost; every accepted move keeps
/// the moved waypoint and both touched edges valid, and never pushes the
/// summed position or orientation length above its cap (the coarse
/// path's lengths), so the refined trajectory improves per component,
/// not just in the weighted sum.
fn descend(
    scenario: &Scenario,
    mut waypoints: Vec<HumanArmState>,
    start_time: &Instant,
    sweep_budget: Option<u64>,
    pos_cap: f64,
    ori_cap: f64,
) -> DescentOutcome {
    let model = &scenario.human;
    let cw = scenario.cost_weights;
    let mut poses: Vec<_> = waypoints.iter().map(|w| grasp_pose(model, w)).collect();
    let mut cost = path_cost(model, &waypoints, cw.c_p, cw.c_o);
    let (mut pos_len, mut ori_len) = crate::planner::path_lengths(model, &waypoints);
    let mut sweeps: u64 = 0;
    let mut window_cost = cost;

    loop {
        match sweep_budget {
            Some(limit) => {
                if sweeps >= limit {
                    break;
                }
            }
            None => {
                if start_time.elapsed().as_secs_f64() >= scenario.time_budget_s {
                    break;
                }
            }
        }
        sweeps += 1;
        let mut sweep_gain = 0.0;

        for i in 1..waypoints.len() - 1 {
            let (p0, o0) = chord_parts(&poses[i - 1], &poses[i]);
            let (p1, o1) = chord_parts(&poses[i], &poses[i + 1]);
            let current = cw.c_p * (p0 + p1) + cw.c_o * (o0 + o1);
            let g = local_gradient(
                model,
                &poses[i - 1],
                &waypoints[i],
                &poses[i + 1],
                cw.c_p,
                cw.c_o,
                GRADIENT_STEP,
            );
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < 1e-14 {
                continue;
            }

            // Gradient-proportional steps, capped in joint space; small
            // gradients near the valley floor get correspondingly small
            // trial moves instead of bottoming out at a fixed length.
            let mut alpha = (MAX_MOVE_RAD / gnorm).min(2.0);
            for _ in 0..LINE_SEARCH_HALVINGS {
                let mut candidate = waypoints[i];
                for j in 0..5 {
                    candidate.0[j] -= alpha * g[j];
                }
                let cp = grasp_pose(model, &candidate);
                let (np0, no0) = chord_parts(&poses[i - 1], &cp);
                let (np1, no1) = chord_parts(&cp, &poses[i + 1]);
                let new_local = cw.c_p * (np0 + np1) + cw.c_o * (no0 + no1);
                let dpos = (np0 + np1) - (p0 + p1);
                let dori = (no0 + no1) - (o0 + o1);
                if new_local < current - 1e-15
                    && pos_len + dpos <= pos_cap
                    && ori_len + dori <= ori_cap
                    && is_valid(scenario, &candidate)
                    && edge_valid(scenario, &waypoints[i - 1], &candidate)
                    && edge_valid(scenario, &candidate, &waypoints[i + 1])
                {
                    sweep_gain += current - new_local;
                    pos_len += dpos;
                    ori_len += dori;
                    waypoints[i] = candidate;
                    poses[i] = cp;
                    break;
                }
                alpha *= 0.5;
            }
        }

        cost -= sweep_gain;
        if sweep_gain <= 0.0 {
            break;
        }
        if sweeps % CONVERGENCE_WINDOW == 0 {
            let rel = (window_cost - cost) / window_cost.max(1e-12);
            if rel < CONVERGENCE_RTOL {
                break;
            }
            window_cost = cost;
        }
    }

    // Incremental bookkeeping drifts; recompute exactly.
    let cost = path_cost(model, &waypoints, cw.c_p, cw.c_o);
    DescentOutcome {
        waypoints,
        cost,
        sweeps,
    }
}

/// Refines a coarse path: fixed waypoint count, monotone feasible descent
/// on the path cost, endpoints pinned, output cost never above the input
/// path's cost. Worst case returns a resampling of the input unchanged.
pub fn refine(scenario: &Scenario, path: &HumanPath) -> RefinedTrajectory {
    let start_time = Instant::now();
    let model = &scenario.human;
    let cw = scenario.cost_weights;
    let input_cost = path_cost(model, &path.waypoints, cw.c_p, cw.c_o);
    // Per-component caps: the refined trajectory must not trade one
    // length component above the coarse path's value to buy the other.
    let (pos_cap, ori_cap) = crate::planner::path_lengths(model, &path.waypoints);

    let (mut uniform, anchors) = resample_uniform_anchored(&path.waypoints, scenario.n_waypoints);
    // Interpolated stations are not exactly the states the edge grid
    // validated; snap any invalid one to its nearest input vertex.
    for (w, anchor) in uniform.iter_mut().zip(anchors.iter()).skip(1) {
        if !is_valid(scenario, w) {
            *w = path.waypoints[*anchor];
        }
    }
    let primary = descend(
        scenario,
        uniform,
        &start_time,
        scenario.refine_iterations,
        pos_cap,
        ori_cap,
    );

    let within_caps = |out: &DescentOutcome| {
        let (p, o) = crate::planner::path_lengths(model, &out.waypoints);
        out.cost <= input_cost + 1e-9 && p <= pos_cap + 1e-9 && o <= ori_cap + 1e-9
    };
    let best = if within_caps(&primary) {
        primary
    } else {
        // Uniform stations could not descend below the input (the path
        // was already near optimal); redo from the cost-exact resampling,
        // which starts exactly at the input cost and lengths and can only
        // improve.
        let padded = resample_exact_cost(&path.waypoints, scenario.n_waypoints);
        descend(
            scenario,
            padded,
            &start_time,
            scenario.refine_iterations,
            pos_cap,
            ori_cap,
        )
    };

    let reactions = best
        .waypoints
        .iter()
        .map(|w| {
            solve_reactions(model, w, &scenario.gravity_vec(), scenario.closure)
                .expect("refined waypoints stay valid")
        })
        .collect();

    RefinedTrajectory {
        cost: best.cost,
        reactions,
        run_time_s: start_time.elapsed().as_secs_f64(),
        iterations: best.sweeps,
        waypoints: best.waypoints,
    }
}
