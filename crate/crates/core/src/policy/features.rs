use serde::{Deserialize, Serialize};

use crate::env::{
    observation_layout, FeatureField, FeatureKind, Observability, ObservationLayout, ObservationSet,
    TaskConfig, WorldConfig,
};
use crate::numkit::Matrix;
use crate::{Error, Result, Scalar};

/// Which observation fields a policy consumes and how they are scaled before
/// entering the network.
///
/// Lengths are divided by `length_scale`, angles by pi, neighbour counts by
/// `count_scale`, speeds by `speed_scale` and turn rates by `turn_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub layout: ObservationLayout,
    pub length_scale: f64,
    pub count_scale: f64,
    pub speed_scale: f64,
    pub turn_scale: f64,
    /// Upper end of the distance axis of histogram/RBF encoders, in length units.
    pub neighbor_range: f64,
    pub evader_range: f64,
}

impl FeatureSpec {
    pub fn for_task(task: &TaskConfig, world: &WorldConfig) -> Self {
        let (neighbor_range, evader_range) = match task.observability {
            Observability::Global => (world.max_distance(), world.max_distance()),
            Observability::Local => (task.d_c, task.d_o),
        };
        FeatureSpec {
            layout: observation_layout(task, world),
            length_scale: world.max_distance(),
            count_scale: task.agents.saturating_sub(1).max(1) as f64,
            speed_scale: task.v_max,
            turn_scale: task.omega_max,
            neighbor_range,
            evader_range,
        }
    }

    pub fn neighbor_dim(&self) -> usize {
        self.layout.neighbor.len()
    }

    pub fn local_dim(&self) -> usize {
        self.layout.local.len()
    }

    pub fn evader_dim(&self) -> usize {
        self.layout.evader.len()
    }

    pub fn has_evader_set(&self) -> bool {
        !self.layout.evader.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.layout.neighbor.is_empty() {
            v.push("feature spec needs at least one neighbour feature".to_string());
        }
        for (name, s) in [
            ("length_scale", self.length_scale),
            ("count_scale", self.count_scale),
            ("speed_scale", self.speed_scale),
            ("turn_scale", self.turn_scale),
            ("neighbor_range", self.neighbor_range),
            ("evader_range", self.evader_range),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                v.push(format!("feature spec {name} must be positive (got {s})"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Multiplier applied to a raw field value.
    pub fn factor(&self, field: FeatureField) -> f64 {
        match field.kind() {
            FeatureKind::Length => 1.0 / self.length_scale,
            FeatureKind::Angle => std::f64::consts::FRAC_1_PI,
            FeatureKind::Count => 1.0 / self.count_scale,
            FeatureKind::Speed => 1.0 / self.speed_scale,
            FeatureKind::TurnRate => 1.0 / self.turn_scale,
        }
    }

    fn factors<T: Scalar>(&self, fields: &[FeatureField]) -> Vec<T> {
        fields.iter().map(|f| T::lit(self.factor(*f))).collect()
    }

    /// Checks the shapes of `obs` and returns its scaled copy.
    pub fn scale<T: Scalar>(&self, obs: &ObservationSet<T>) -> Result<ScaledObservation<T>> {
        if obs.local.len() != self.local_dim() {
            return Err(Error::shape("local features", self.local_dim(), obs.local.len()));
        }
        if obs.neighbors.cols() != self.neighbor_dim() && !obs.neighbors.is_empty() {
            return Err(Error::shape(
                "neighbour features",
                self.neighbor_dim(),
                obs.neighbors.cols(),
            ));
        }
        if self.has_evader_set()
            && obs.evaders.cols() != self.evader_dim()
            && !obs.evaders.is_empty()
        {
            return Err(Error::shape("evader features", self.evader_dim(), obs.evaders.cols()));
        }
        let local_f: Vec<T> = self.factors(&self.layout.local);
        let local = obs.local.iter().zip(&local_f).map(|(v, f)| *v * *f).collect();
        let neighbors = if obs.neighbors.is_empty() {
            Matrix::empty(self.neighbor_dim())
        } else {
            obs.neighbors.scale_columns(&self.factors(&self.layout.neighbor))
        };
        let evaders = if !self.has_evader_set() || obs.evaders.is_empty() {
            Matrix::empty(self.evader_dim())
        } else {
            obs.evaders.scale_columns(&self.factors(&self.layout.evader))
        };
        Ok(ScaledObservation {
            local,
            neighbors,
            evaders,
        })
    }

    /// Input ranges of a 2-D (distance, bearing) set in scaled units.
    pub(crate) fn planar_ranges(&self, distance_range: f64) -> [(f64, f64); 2] {
        [(0.0, distance_range / self.length_scale), (-1.0, 1.0)]
    }
}

/// Observation set after input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledObservation<T> {
    pub local: Vec<T>,
    pub neighbors: Matrix<T>,
    pub evaders: Matrix<T>,
}
