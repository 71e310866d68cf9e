use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// The world limits act as walls.
    Closed,
    /// Periodic world; agents leaving one side reappear on the other.
    Toroidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub x_max: f64,
    pub y_max: f64,
    pub boundary: Boundary,
    pub dt: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            x_max: 100.0,
            y_max: 100.0,
            boundary: Boundary::Closed,
            dt: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn toroidal() -> Self {
        WorldConfig {
            boundary: Boundary::Toroidal,
            ..Default::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.x_max > 0.0 && self.x_max.is_finite()) {
            v.push(format!("world.x_max must be positive (got {})", self.x_max));
        }
        if !(self.y_max > 0.0 && self.y_max.is_finite()) {
            v.push(format!("world.y_max must be positive (got {})", self.y_max));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("world.dt must be positive (got {})", self.dt));
        }
        v
    }

    /// Displacement from `a` to `b`, using the minimal image on toroidal worlds.
    #[inline]
    pub fn displacement(&self, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let mut dx = b[0] - a[0];
        let mut dy = b[1] - a[1];
        if self.boundary == Boundary::Toroidal {
            dx -= self.x_max * (dx / self.x_max).round();
            dy -= self.y_max * (dy / self.y_max).round();
        }
        [dx, dy]
    }

    #[inline]
    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let [dx, dy] = self.displacement(a, b);
        dx.hypot(dy)
    }

    pub fn diagonal(&self) -> f64 {
        self.x_max.hypot(self.y_max)
    }

    /// Largest distance two points of the world can have.
    pub fn max_distance(&self) -> f64 {
        match self.boundary {
            Boundary::Closed => self.diagonal(),
            Boundary::Toroidal => 0.5 * self.diagonal(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Rendezvous,
    Pursuit,
    MultiPursuit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    /// Velocity control.
    Single,
    /// Acceleration control.
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observability {
    /// Every agent observes every other agent.
    Global,
    /// Disk proximity graph with cut-off `d_c`.
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Basic,
    Extended,
    Comm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub linear: f64,
    pub angular: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub task: Task,
    pub agents: usize,
    pub evaders: usize,
    pub dynamics: Dynamics,
    pub observability: Observability,
    /// Communication cut-off distance.
    pub d_c: f64,
    /// Evader observation radius.
    pub d_o: f64,
    /// Capture threshold.
    pub d_t: f64,
    pub features: FeatureSet,
    pub episode_len: usize,
    pub v_max: f64,
    pub omega_max: f64,
    pub a_v_max: f64,
    pub a_omega_max: f64,
    /// Evader speed relative to `v_max`.
    pub evader_speed_factor: f64,
    /// Weight of the joint action norm in the rendezvous reward (negative).
    pub action_penalty: f64,
    /// Grid resolution per axis for Voronoi cell estimation.
    pub voronoi_resolution: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            task: Task::Rendezvous,
            agents: 20,
            evaders: 1,
            dynamics: Dynamics::Single,
            observability: Observability::Global,
            d_c: 40.0,
            d_o: 20.0,
            d_t: 3.0,
            features: FeatureSet::Basic,
            episode_len: 512,
            v_max: 0.5,
            omega_max: std::f64::consts::FRAC_PI_4,
            a_v_max: 0.05,
            a_omega_max: std::f64::consts::PI / 16.0,
            evader_speed_factor: 2.0,
            action_penalty: -1e-3,
            voronoi_resolution: 128,
        }
    }
}

impl TaskConfig {
    pub fn rendezvous(agents: usize) -> Self {
        TaskConfig {
            agents,
            ..Default::default()
        }
    }

    pub fn pursuit(agents: usize) -> Self {
        TaskConfig {
            task: Task::Pursuit,
            agents,
            evaders: 1,
            episode_len: 1024,
            ..Default::default()
        }
    }

    pub fn multi_pursuit(agents: usize, evaders: usize) -> Self {
        TaskConfig {
            task: Task::MultiPursuit,
            agents,
            evaders,
            episode_len: 1024,
            ..Default::default()
        }
    }

    pub fn action_bounds(&self) -> ActionBounds {
        match self.dynamics {
            Dynamics::Single => ActionBounds {
                linear: self.v_max,
                angular: self.omega_max,
            },
            Dynamics::Double => ActionBounds {
                linear: self.a_v_max,
                angular: self.a_omega_max,
            },
        }
    }

    pub fn evader_speed(&self) -> f64 {
        self.evader_speed_factor * self.v_max
    }

    pub fn has_evaders(&self) -> bool {
        self.task != Task::Rendezvous
    }

    /// Number of evaders actually simulated.
    pub fn evader_count(&self) -> usize {
        match self.task {
            Task::Rendezvous => 0,
            Task::Pursuit => 1,
            Task::MultiPursuit => self.evaders,
        }
    }

    /// Cut-off used by the rendezvous reward.
    pub fn reward_cutoff(&self, world: &WorldConfig) -> f64 {
        match self.observability {
            Observability::Global => world.x_max.max(world.y_max),
            Observability::Local => self.d_c,
        }
    }

    /// Evader observation radius used by the single-evader reward.
    pub fn reward_radius(&self, world: &WorldConfig) -> f64 {
        match self.observability {
            Observability::Global => world.max_distance(),
            Observability::Local => self.d_o,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.agents < 2 {
            v.push(format!("task.agents must be at least 2 (got {})", self.agents));
        }
        if self.task == Task::MultiPursuit && self.evaders < 1 {
            v.push("task.evaders must be at least 1 for multi-pursuit".into());
        }
        if self.task == Task::Pursuit && self.evaders != 1 {
            v.push(format!(
                "task.evaders must be 1 for single-evader pursuit (got {})",
                self.evaders
            ));
        }
        for (name, value) in [
            ("d_c", self.d_c),
            ("d_o", self.d_o),
            ("d_t", self.d_t),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("a_v_max", self.a_v_max),
            ("a_omega_max", self.a_omega_max),
            ("evader_speed_factor", self.evader_speed_factor),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                v.push(format!("task.{name} must be positive (got {value})"));
            }
        }
        if !self.action_penalty.is_finite() || self.action_penalty > 0.0 {
            v.push(format!(
                "task.action_penalty must be finite and non-positive (got {})",
                self.action_penalty
            ));
        }
        if self.episode_len == 0 {
            v.push("task.episode_len must be positive".into());
        }
        if self.voronoi_resolution < 2 {
            v.push("task.voronoi_resolution must be at least 2".into());
        }
        if self.task == Task::MultiPursuit && self.features == FeatureSet::Comm {
            v.push("the comm feature set is only defined for rendezvous and single-evader pursuit".into());
        }
        v
    }

    pub fn validate(&self, world: &WorldConfig) -> Result<()> {
        let mut v = world.violations();
        v.extend(self.violations());
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}
