use std::f64::consts::{FRAC_PI_2, PI, TAU};

use super::{Action, AgentState, Boundary, Dynamics, TaskConfig, WorldConfig};
use crate::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Wraps a heading into `[0, 2 pi)`.
#[inline]
pub fn wrap_heading(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

pub fn apply_boundary(x: f64, y: f64, world: &WorldConfig) -> (f64, f64) {
    match world.boundary {
        Boundary::Closed => (x.clamp(0.0, world.x_max), y.clamp(0.0, world.y_max)),
        Boundary::Toroidal => {
            let wrap = |v: f64, m: f64| {
                let r = v.rem_euclid(m);
                if r >= m {
                    0.0
                } else {
                    r
                }
            };
            (wrap(x, world.x_max), wrap(y, world.y_max))
        }
    }
}

/// One explicit Euler step of the unicycle model.
///
/// Under double-integrator dynamics the velocities are updated (and clamped to
/// `v_max`/`omega_max`) before they move the agent.
pub fn step_kinematics(
    state: &AgentState,
    action: Action,
    world: &WorldConfig,
    dynamics: Dynamics,
    task: &TaskConfig,
) -> AgentState {
    let dt = world.dt;
    let (v, omega) = match dynamics {
        Dynamics::Single => (action.linear, action.angular),
        Dynamics::Double => (
            (state.v + action.linear * dt).clamp(-task.v_max, task.v_max),
            (state.omega + action.angular * dt).clamp(-task.omega_max, task.omega_max),
        ),
    };
    let x = state.x + v * state.phi.cos() * dt;
    let y = state.y + v * state.phi.sin() * dt;
    let (x, y) = apply_boundary(x, y, world);
    AgentState {
        x,
        y,
        phi: wrap_heading(state.phi + omega * dt),
        v,
        omega,
    }
}

/// Quantities agent `i` can sense about agent `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborFeatures {
    pub distance: f64,
    /// Direction to `j` relative to `i`'s heading, in `(-pi, pi]`.
    pub bearing: f64,
    /// Direction to `i` relative to `j`'s heading, in `(-pi, pi]`.
    pub orientation: f64,
    /// `nu_i - nu_j`.
    pub relative_velocity: [f64; 2],
}

pub fn pairwise_geometry(i: &AgentState, j: &AgentState, world: &WorldConfig) -> NeighborFeatures {
    let [dx, dy] = world.displacement(i.position(), j.position());
    let distance = dx.hypot(dy);
    let (bearing, orientation) = if distance == 0.0 {
        (0.0, 0.0)
    } else {
        (
            wrap_angle(dy.atan2(dx) - i.phi),
            wrap_angle((-dy).atan2(-dx) - j.phi),
        )
    };
    let vi = i.velocity();
    let vj = j.velocity();
    NeighborFeatures {
        distance,
        bearing,
        orientation,
        relative_velocity: [vi[0] - vj[0], vi[1] - vj[1]],
    }
}

/// Distance to the closest wall and its direction relative to the heading.
///
/// Ties are resolved in the order x-min, y-min, x-max, y-max.
pub fn wall_features(state: &AgentState, world: &WorldConfig) -> Result<(f64, f64)> {
    if world.boundary == Boundary::Toroidal {
        return Err(Error::AbsentFeature("wall distance"));
    }
    let candidates = [
        (state.x, PI),
        (state.y, -FRAC_PI_2),
        (world.x_max - state.x, 0.0),
        (world.y_max - state.y, FRAC_PI_2),
    ];
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.0 < best.0 {
            best = *c;
        }
    }
    Ok((best.0, wrap_angle(best.1 - state.phi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn task() -> TaskConfig {
        TaskConfig::default()
    }

    #[test]
    fn straight_motion_along_heading() {
        let w = WorldConfig::default();
        let s = AgentState::at(10.0, 20.0, 0.0);
        let n = step_kinematics(&s, Action::new(0.5, 0.0), &w, Dynamics::Single, &task());
        assert_relative_eq!(n.x, 10.5);
        assert_eq!(n.y, 20.0);
        assert_eq!(n.phi, 0.0);
    }

    #[test]
    fn pure_rotation() {
        let w = WorldConfig::default();
        let s = AgentState::at(10.0, 20.0, 1.0);
        let n = step_kinematics(&s, Action::new(0.0, PI / 4.0), &w, Dynamics::Single, &task());
        assert_eq!((n.x, n.y), (10.0, 20.0));
        assert_relative_eq!(n.phi, 1.0 + PI / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn double_integrator_two_step_rollout() {
        let w = WorldConfig::default();
        let phi = 0.3;
        let s = AgentState::at(50.0, 50.0, phi);
        let a = Action::new(0.1, 0.0);
        let s1 = step_kinematics(&s, a, &w, Dynamics::Double, &task());
        let s2 = step_kinematics(&s1, a, &w, Dynamics::Double, &task());
        assert_relative_eq!(s2.v, 0.2, max_relative = 1e-14);
        assert_relative_eq!(s2.x, 50.0 + (0.1 + 0.2) * phi.cos(), max_relative = 1e-14);
        assert_relative_eq!(s2.y, 50.0 + (0.1 + 0.2) * phi.sin(), max_relative = 1e-14);
    }

    #[test]
    fn double_integrator_clamps_velocities() {
        let w = WorldConfig::default();
        let mut s = AgentState::at(50.0, 50.0, 0.0);
        for _ in 0..100 {
            s = step_kinematics(&s, Action::new(1.0, 1.0), &w, Dynamics::Double, &task());
        }
        assert!(s.v <= task().v_max && s.omega <= task().omega_max);
    }

    #[test]
    fn boundaries() {
        let t = WorldConfig::toroidal();
        assert_eq!(apply_boundary(101.0, 50.0, &t), (1.0, 50.0));
        assert_eq!(apply_boundary(-1.0, 100.0, &t), (99.0, 0.0));
        let c = WorldConfig::default();
        assert_eq!(apply_boundary(50.0, -5.0, &c), (50.0, 0.0));
        assert_eq!(apply_boundary(42.0, 17.0, &c), (42.0, 17.0));
        assert_eq!(apply_boundary(42.0, 17.0, &t), (42.0, 17.0));
    }

    #[test]
    fn pairwise_axis_geometry() {
        let w = WorldConfig::default();
        let f = pairwise_geometry(&AgentState::at(0.0, 0.0, 0.0), &AgentState::at(0.0, 10.0, 0.0), &w);
        assert_relative_eq!(f.distance, 10.0);
        assert_relative_eq!(f.bearing, FRAC_PI_2);
    }

    #[test]
    fn pairwise_minimal_image() {
        let w = WorldConfig::toroidal();
        let f = pairwise_geometry(&AgentState::at(1.0, 0.0, 0.0), &AgentState::at(99.0, 0.0, 0.0), &w);
        assert_relative_eq!(f.distance, 2.0, max_relative = 1e-12);
        assert_relative_eq!(f.bearing, PI);
    }

    #[test]
    fn relative_orientation_direct_evaluation() {
        let w = WorldConfig::default();
        let i = AgentState::at(0.0, 0.0, FRAC_PI_2);
        let j = AgentState::at(10.0, 0.0, 0.0);
        let f = pairwise_geometry(&i, &j, &w);
        // atan2(y_i - y_j, x_i - x_j) - phi_j
        let expected = wrap_angle((0.0f64 - 0.0).atan2(0.0 - 10.0) - 0.0);
        assert_relative_eq!(f.orientation, expected);
        assert_relative_eq!(f.orientation, PI);
        assert_relative_eq!(f.bearing, -FRAC_PI_2);
    }

    #[test]
    fn coincident_agents_have_zero_bearing() {
        let w = WorldConfig::default();
        let a = AgentState::at(3.0, 4.0, 1.0);
        let f = pairwise_geometry(&a, &a, &w);
        assert_eq!((f.distance, f.bearing, f.orientation), (0.0, 0.0, 0.0));
    }

    #[test]
    fn relative_velocity_is_difference_of_velocity_vectors() {
        let w = WorldConfig::default();
        let mut i = AgentState::at(0.0, 0.0, 0.0);
        i.v = 0.5;
        let mut j = AgentState::at(5.0, 0.0, FRAC_PI_2);
        j.v = 0.25;
        let f = pairwise_geometry(&i, &j, &w);
        assert_relative_eq!(f.relative_velocity[0], 0.5);
        assert_relative_eq!(f.relative_velocity[1], -0.25);
    }

    #[test]
    fn wall_distance_and_ties() {
        let w = WorldConfig::default();
        let (d, _) = wall_features(&AgentState::at(50.0, 10.0, 0.0), &w).unwrap();
        assert_eq!(d, 10.0);
        // centre: all four walls at 50, x-min wins (absolute direction pi)
        let (d, phi) = wall_features(&AgentState::at(50.0, 50.0, 0.0), &w).unwrap();
        assert_eq!(d, 50.0);
        assert_relative_eq!(phi, PI);
        // facing the south wall head-on
        let (_, phi) = wall_features(&AgentState::at(50.0, 10.0, 1.5 * PI), &w).unwrap();
        assert_relative_eq!(phi, 0.0, epsilon = 1e-12);
        assert!(wall_features(&AgentState::at(1.0, 1.0, 0.0), &WorldConfig::toroidal()).is_err());
    }

    proptest! {
        #[test]
        fn toroidal_distance_never_exceeds_euclidean(
            ax in 0.0f64..100.0, ay in 0.0f64..100.0, bx in 0.0f64..100.0, by in 0.0f64..100.0
        ) {
            let t = WorldConfig::toroidal();
            let c = WorldConfig::default();
            let dt = t.distance([ax, ay], [bx, by]);
            let de = c.distance([ax, ay], [bx, by]);
            prop_assert!(dt <= de + 1e-12);
            if (ax - bx).abs() <= 50.0 && (ay - by).abs() <= 50.0 {
                prop_assert!((dt - de).abs() < 1e-12);
            }
        }

        #[test]
        fn angles_stay_in_range(a in -100.0f64..100.0) {
            let w = wrap_angle(a);
            prop_assert!(w > -PI && w <= PI);
            let h = wrap_heading(a);
            prop_assert!((0.0..TAU).contains(&h));
        }
    }
}
