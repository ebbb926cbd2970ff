//! Geometric validity: signed distances between primitive shapes and the
//! free-space check for human (and optionally robot) configurations.

use nalgebra::{Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::model::{human_frames, robot_frames, HumanArmState, Scenario};

/// Collision primitive. Cylindrical links are approximated by capsules,
/// the ground by a half space (`normal . x <= offset` is solid).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Capsule {
        a: [f64; 3],
        b: [f64; 3],
        radius: f64,
    },
    HalfSpace {
        normal: [f64; 3],
        offset: f64,
    },
}

impl Primitive {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Primitive::Sphere { radius, .. } | Primitive::Capsule { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(format!("radius must be positive, got {radius}"));
                }
            }
            Primitive::HalfSpace { normal, .. } => {
                let n = Vector3::from(*normal).norm();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(format!("normal must be unit length, |n| = {n}"));
                }
            }
        }
        Ok(())
    }
}

/// Closest distance between two segments `p0-p1` and `q0-q1`.
pub fn segment_segment_distance(
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    q0: &Vector3<f64>,
    q1: &Vector3<f64>,
) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    if a < 1e-14 && e < 1e-14 {
        return r.norm();
    }
    if a < 1e-14 {
        let t = (f / e).clamp(0.0, 1.0);
        return (p0 - (q0 + d2 * t)).norm();
    }
    let c = d1.dot(&r);
    if e < 1e-14 {
        let s = (-c / a).clamp(0.0, 1.0);
        return ((p0 + d1 * s) - q0).norm();
    }

    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom.abs() > 1e-14 {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(&ab);
    if len2 < 1e-14 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Signed clearance between two primitives: positive when separated by
/// that amount, zero or negative when touching or penetrating. Exact for
/// every pair of supported shapes.
pub fn distance(a: &Primitive, b: &Primitive) -> f64 {
    use Primitive::*;
    match (a, b) {
        (
            Sphere {
                center: ca,
                radius: ra,
            },
            Sphere {
                center: cb,
                radius: rb,
            },
        ) => (Vector3::from(*ca) - Vector3::from(*cb)).norm() - ra - rb,
        (
            Sphere { center, radius },
            Capsule {
                a: ca,
                b: cb,
                radius: rc,
            },
        ) => {
            point_segment_distance(
                &Vector3::from(*center),
                &Vector3::from(*ca),
                &Vector3::from(*cb),
            ) - radius
                - rc
        }
        (Capsule { .. }, Sphere { .. }) => distance(b, a),
        (
            Capsule {
                a: a0,
                b: a1,
                radius: ra,
            },
            Capsule {
                a: b0,
                b: b1,
                radius: rb,
            },
        ) => {
            segment_segment_distance(
                &Vector3::from(*a0),
                &Vector3::from(*a1),
                &Vector3::from(*b0),
                &Vector3::from(*b1),
            ) - ra
                - rb
        }
        (Sphere { center, radius }, HalfSpace { normal, offset }) => {
            Vector3::from(*normal).dot(&Vector3::from(*center)) - offset - radius
        }
        (
            Capsule {
                a: ca,
                b: cb,
                radius,
            },
            HalfSpace { normal, offset },
        ) => {
            let n = Vector3::from(*normal);
            let da = n.dot(&Vector3::from(*ca));
            let db = n.dot(&Vector3::from(*cb));
            da.min(db) - offset - radius
        }
        (HalfSpace { .. }, Sphere { .. }) | (HalfSpace { .. }, Capsule { .. }) => distance(b, a),
        (
            HalfSpace {
                normal: na,
                offset: oa,
            },
            HalfSpace {
                normal: nb,
                offset: ob,
            },
        ) => {
            // Two half spaces only avoid each other when they face away
            // from one another; otherwise they always overlap somewhere.
            if (Vector3::from(*na) + Vector3::from(*nb)).norm() < 1e-9 {
                -(oa + ob)
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

/// Human arm as two capsules covering the full links (the capsule end
/// caps stand in for the joint spheres).
pub fn human_link_primitives(scenario: &Scenario, theta: &HumanArmState) -> [Primitive; 2] {
    let f = human_frames(&scenario.human, theta);
    let wrist = f.elbow_position + scenario.human.lower_arm_length * f.forearm_direction();
    [
        Primitive::Capsule {
            a: f.shoulder_position.into(),
            b: f.elbow_position.into(),
            radius: scenario.human.upper_arm_radius,
        },
        Primitive::Capsule {
            a: f.elbow_position.into(),
            b: wrist.into(),
            radius: scenario.human.lower_arm_radius,
        },
    ]
}

/// Robot collision capsules in the scene frame, tagged with their joint
/// index so adjacent pairs can be exempted.
pub fn robot_link_primitives(
    scenario: &Scenario,
    q: &[f64],
    base: &Isometry3<f64>,
) -> Vec<(usize, Primitive)> {
    let frames = robot_frames(&scenario.robot, q);
    scenario
        .robot
        .collision_capsules
        .iter()
        .map(|c| {
            let t = base * frames.joint_frames[c.joint];
            let a = t * nalgebra::Point3::from(Vector3::from(c.a));
            let b = t * nalgebra::Point3::from(Vector3::from(c.b));
            (
                c.joint,
                Primitive::Capsule {
                    a: a.coords.into(),
                    b: b.coords.into(),
                    radius: c.radius,
                },
            )
        })
        .collect()
}

fn ground(scenario: &Scenario) -> Primitive {
    Primitive::HalfSpace {
        normal: [0.0, 0.0, 1.0],
        offset: scenario.ground_height,
    }
}

/// True when every checked pair of shapes clears `scenario.collision_margin`.
///
/// Checked pairs: human links against the ground and obstacles (the two
/// arm links are adjacent and exempt from self-collision), and, when a
/// robot configuration is supplied, robot capsules against the human
/// links, the ground, the obstacles, and each other (capsules on the same
/// or neighboring joints exempt).
pub fn state_free(
    scenario: &Scenario,
    theta: &HumanArmState,
    robot: Option<(&[f64], &Isometry3<f64>)>,
) -> bool {
    state_free_with_margin(scenario, theta, robot, scenario.collision_margin)
}

pub fn state_free_with_margin(
    scenario: &Scenario,
    theta: &HumanArmState,
    robot: Option<(&[f64], &Isometry3<f64>)>,
    margin: f64,
) -> bool {
    let human = human_link_primitives(scenario, theta);
    let ground = ground(scenario);

    for link in &human {
        if distance(link, &ground) <= margin {
            return false;
        }
        for obs in &scenario.obstacles {
            if distance(link, obs) <= margin {
                return false;
            }
        }
    }

    if let Some((q, base)) = robot {
        let robot_links = robot_link_primitives(scenario, q, base);
        for (i, (joint_i, prim_i)) in robot_links.iter().enumerate() {
            if distance(prim_i, &ground) <= margin {
                return false;
            }
            for obs in &scenario.obstacles {
                if distance(prim_i, obs) <= margin {
                    return false;
                }
            }
            for link in &human {
                if distance(prim_i, link) <= margin {
                    return false;
                }
            }
            for (joint_j, prim_j) in robot_links.iter().skip(i + 1) {
                // Capsules on the same link or on consecutive
                // capsule-carrying links always touch at their shared
                // joint and are exempt, like the human's two arm links.
                let (lo, hi) = (joint_i.min(joint_j), joint_i.max(joint_j));
                let adjacent = lo == hi || !robot_links.iter().any(|(j, _)| *j > *lo && *j < *hi);
                if adjacent {
                    continue;
                }
                if distance(prim_i, prim_j) <= margin {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HumanArmModel, Pose, RobotArmModel};
    use proptest::prelude::*;

    fn test_scenario() -> Scenario {
        Scenario {
            human: HumanArmModel {
                upper_arm_radius: 0.095,
                upper_arm_length: 0.22,
                upper_arm_mass: 5.0,
                lower_arm_radius: 0.075,
                lower_arm_length: 0.25,
                lower_arm_mass: 3.0,
                shoulder_origin: Pose {
                    position: [0.0, 0.0, 0.25],
                    orientation: [0.0, -std::f64::consts::FRAC_PI_2, 0.0],
                },
                joint_limits: [
                    [-1.5, 1.5],
                    [-1.5, 1.5],
                    [-1.5, 1.5],
                    [0.0, 2.6],
                    [-1.5, 1.5],
                ],
                grasp_offset: 0.25,
            },
            robot: RobotArmModel::default_seven_dof(),
            theta_start: HumanArmState::zeros(),
            theta_goal: HumanArmState::zeros(),
            gravity: [0.0, 0.0, -9.81],
            ground_height: 0.0,
            obstacles: vec![],
            safety: Default::default(),
            closure: Default::default(),
            base_pose_mean: [0.0; 6],
            base_pose_cov_diag: [0.0; 6],
            cost_weights: Default::default(),
            time_budget_s: 120.0,
            planner_iterations: None,
            refine_iterations: None,
            rng_seed: 0,
            n_waypoints: 50,
            collision_margin: 0.005,
            max_base_samples: 1000,
        }
    }

    #[test]
    fn sphere_sphere_distances() {
        let a = Primitive::Sphere {
            center: [0.0, 0.0, 0.0],
            radius: 1.0,
        };
        let b = Primitive::Sphere {
            center: [3.0, 0.0, 0.0],
            radius: 1.0,
        };
        assert!((distance(&a, &b) - 1.0).abs() < 1e-12);
        let c = Primitive::Sphere {
            center: [0.0, 0.0, 0.0],
            radius: 1.0,
        };
        assert!((distance(&a, &c) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_capsules() {
        let a = Primitive::Capsule {
            a: [0.0, 0.0, 0.0],
            b: [1.0, 0.0, 0.0],
            radius: 0.1,
        };
        let b = Primitive::Capsule {
            a: [0.0, 0.5, 0.0],
            b: [1.0, 0.5, 0.0],
            radius: 0.2,
        };
        assert!((distance(&a, &b) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn segment_distance_dominates_random_point_samples() {
        // The exact segment-segment distance can never exceed the distance
        // between any sampled point pair.
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let p: Vec<Vector3<f64>> = (0..4)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let exact = segment_segment_distance(&p[0], &p[1], &p[2], &p[3]);
            let mut best = f64::INFINITY;
            for i in 0..=40 {
                for j in 0..=40 {
                    let s = i as f64 / 40.0;
                    let t = j as f64 / 40.0;
                    let x = p[0] + (p[1] - p[0]) * s;
                    let y = p[2] + (p[3] - p[2]) * t;
                    best = best.min((x - y).norm());
                }
            }
            assert!(exact <= best + 1e-9, "exact {exact} > sampled {best}");
            assert!(best - exact < 2e-2, "sampled bound too far from exact");
        }
    }

    #[test]
    fn capsule_halfspace() {
        let ground = Primitive::HalfSpace {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
        };
        let c = Primitive::Capsule {
            a: [0.0, 0.0, 0.5],
            b: [1.0, 0.0, 1.0],
            radius: 0.2,
        };
        assert!((distance(&c, &ground) - 0.3).abs() < 1e-12);
        assert!((distance(&ground, &c) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn arm_above_ground_is_free_raised_ground_is_not() {
        let mut s = test_scenario();
        // Rest pose: arm along +x at shoulder height 0.25.
        let theta = HumanArmState([0.0, 0.3, 0.0, 0.4, 0.0]);
        assert!(state_free(&s, &theta, None));
        s.ground_height = 0.5;
        assert!(!state_free(&s, &theta, None));
    }

    #[test]
    fn obstacle_blocks_wrist() {
        let mut s = test_scenario();
        let theta = HumanArmState([0.0, 0.3, 0.0, 0.4, 0.0]);
        // Find the wrist and drop a sphere on it.
        let f = human_frames(&s.human, &theta);
        let wrist = f.elbow_position + s.human.lower_arm_length * f.forearm_direction();
        assert!(state_free(&s, &theta, None));
        s.obstacles.push(Primitive::Sphere {
            center: wrist.into(),
            radius: 0.05,
        });
        assert!(!state_free(&s, &theta, None));
    }

    #[test]
    fn margin_monotonicity() {
        let s = test_scenario();
        let theta = HumanArmState([0.0, 0.3, 0.0, 0.4, 0.0]);
        for eps in [0.0, 0.002, 0.005, 0.02, 0.08] {
            let at_eps = state_free_with_margin(&s, &theta, None, eps);
            let at_smaller = state_free_with_margin(&s, &theta, None, eps * 0.5);
            if at_eps {
                assert!(at_smaller, "free at {eps} must stay free at smaller margin");
            }
        }
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(
            ax in -2.0..2.0f64, ay in -2.0..2.0f64, az in -2.0..2.0f64,
            bx in -2.0..2.0f64, by in -2.0..2.0f64, bz in -2.0..2.0f64,
            cx in -2.0..2.0f64, cy in -2.0..2.0f64, cz in -2.0..2.0f64,
            ra in 0.01..0.5f64, rb in 0.01..0.5f64,
        ) {
            let s = Primitive::Sphere { center: [ax, ay, az], radius: ra };
            let c = Primitive::Capsule { a: [bx, by, bz], b: [cx, cy, cz], radius: rb };
            let h = Primitive::HalfSpace { normal: [0.0, 0.0, 1.0], offset: -1.0 };
            prop_assert!((distance(&s, &c) - distance(&c, &s)).abs() < 1e-12);
            prop_assert!((distance(&s, &h) - distance(&h, &s)).abs() < 1e-12);
            prop_assert!((distance(&c, &h) - distance(&h, &c)).abs() < 1e-12);
        }

        #[test]
        fn distance_is_continuous_under_tiny_perturbation(
            ax in -2.0..2.0f64, ay in -2.0..2.0f64, az in -2.0..2.0f64,
            bx in -2.0..2.0f64, by in -2.0..2.0f64, bz in -2.0..2.0f64,
            cx in -2.0..2.0f64, cy in -2.0..2.0f64, cz in -2.0..2.0f64,
        ) {
            let c1 = Primitive::Capsule { a: [ax, ay, az], b: [bx, by, bz], radius: 0.1 };
            let s1 = Primitive::Sphere { center: [cx, cy, cz], radius: 0.2 };
            let d0 = distance(&c1, &s1);
            let eps = 1e-9;
            let c2 = Primitive::Capsule { a: [ax + eps, ay, az], b: [bx, by + eps, bz], radius: 0.1 };
            let s2 = Primitive::Sphere { center: [cx, cy, cz + eps], radius: 0.2 };
            let d1 = distance(&c2, &s2);
            prop_assert!((d0 - d1).abs() < 1e-7);
        }
    }
}
