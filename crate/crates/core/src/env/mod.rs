//! Swarm simulator: world geometry, unicycle kinematics, interaction graphs,
//! local observation and communication models, the Voronoi evader and the
//! three task reward functions.

mod config;
mod evader;
mod geometry;
mod graph;
mod observe;
mod reward;
mod swarm;
mod trajectory;

pub use config::{
    ActionBounds, Boundary, Dynamics, FeatureSet, Observability, Task, TaskConfig, WorldConfig,
};
pub use evader::{evader_action, VoronoiGrid};
pub use geometry::{
    apply_boundary, pairwise_geometry, step_kinematics, wall_features, wrap_angle, wrap_heading,
    NeighborFeatures,
};
pub use graph::{shortest_path_to_evader, shortest_paths_to_evader, GraphMode, InteractionGraph};
pub use observe::{
    observation_layout, observe, FeatureField, FeatureKind, ObservationLayout, ObservationSet,
};
pub use reward::{
    mean_pairwise_distance, reward_multi_evader, reward_pursuit, reward_rendezvous,
};
pub use swarm::{StepOutcome, SwarmEnv};
pub use trajectory::{read_trajectory, TrajectoryRecord, TrajectoryWriter};

use serde::{Deserialize, Serialize};

/// Pose and velocities of one agent.
///
/// `v` and `omega` are state under double-integrator dynamics; under single
/// integrator dynamics they hold the most recently applied command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub v: f64,
    pub omega: f64,
}

impl AgentState {
    pub fn at(x: f64, y: f64, phi: f64) -> Self {
        AgentState {
            x,
            y,
            phi,
            v: 0.0,
            omega: 0.0,
        }
    }

    #[inline]
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Velocity vector `v [cos phi, sin phi]`.
    #[inline]
    pub fn velocity(&self) -> [f64; 2] {
        [self.v * self.phi.cos(), self.v * self.phi.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaderState {
    pub x: f64,
    pub y: f64,
}

impl EvaderState {
    #[inline]
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Control input of one agent: `(v, omega)` for single-integrator dynamics,
/// `(a_v, a_omega)` for double-integrator dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub linear: f64,
    pub angular: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        linear: 0.0,
        angular: 0.0,
    };

    pub fn new(linear: f64, angular: f64) -> Self {
        Action { linear, angular }
    }

    pub fn clamped(self, bounds: ActionBounds) -> Self {
        let clamp = |v: f64, b: f64| if v.is_finite() { v.clamp(-b, b) } else { 0.0 };
        Action {
            linear: clamp(self.linear, bounds.linear),
            angular: clamp(self.angular, bounds.angular),
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.linear, self.angular]
    }
}
