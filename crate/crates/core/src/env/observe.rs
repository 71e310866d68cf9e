use serde::{Deserialize, Serialize};

use super::{
    pairwise_geometry, shortest_paths_to_evader, wall_features, wrap_angle, AgentState,
    Boundary, Dynamics, EvaderState, FeatureSet, InteractionGraph, Observability, Task,
    TaskConfig, WorldConfig,
};
use crate::numkit::Matrix;
use crate::{Error, Result, Scalar};

/// One scalar an agent can observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureField {
    Distance,
    Bearing,
    Orientation,
    RelativeVelocityX,
    RelativeVelocityY,
    NeighborCount,
    PathToEvader,
    WallDistance,
    WallBearing,
    OwnSpeed,
    OwnTurnRate,
    EvaderDistance,
    EvaderBearing,
    OwnNeighborCount,
    OwnPathToEvader,
}

/// Physical kind of a feature, used for input scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Length,
    Angle,
    Count,
    Speed,
    TurnRate,
}

impl FeatureField {
    pub fn kind(self) -> FeatureKind {
        use FeatureField::*;
        match self {
            Distance | PathToEvader | WallDistance | EvaderDistance | OwnPathToEvader => {
                FeatureKind::Length
            }
            Bearing | Orientation | WallBearing | EvaderBearing => FeatureKind::Angle,
            NeighborCount | OwnNeighborCount => FeatureKind::Count,
            RelativeVelocityX | RelativeVelocityY | OwnSpeed => FeatureKind::Speed,
            OwnTurnRate => FeatureKind::TurnRate,
        }
    }
}

/// Which fields populate each part of an observation, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub neighbor: Vec<FeatureField>,
    pub local: Vec<FeatureField>,
    /// Per-evader rows, only used by the multi-evader task.
    pub evader: Vec<FeatureField>,
}

pub fn observation_layout(task: &TaskConfig, world: &WorldConfig) -> ObservationLayout {
    use FeatureField::*;
    let mut neighbor = vec![Distance, Bearing];
    let mut local = Vec::new();
    let mut evader = Vec::new();
    if task.features != FeatureSet::Basic {
        neighbor.push(Orientation);
        if task.dynamics == Dynamics::Double {
            neighbor.extend([RelativeVelocityX, RelativeVelocityY]);
        }
    }
    if world.boundary == Boundary::Closed {
        local.extend([WallDistance, WallBearing]);
    }
    if task.dynamics == Dynamics::Double {
        local.extend([OwnSpeed, OwnTurnRate]);
    }
    match task.task {
        Task::Rendezvous => {
            if task.features == FeatureSet::Comm {
                neighbor.push(NeighborCount);
                local.push(OwnNeighborCount);
            }
        }
        Task::Pursuit => {
            local.extend([EvaderDistance, EvaderBearing]);
            if task.features == FeatureSet::Comm {
                neighbor.push(PathToEvader);
                local.push(OwnPathToEvader);
            }
        }
        Task::MultiPursuit => {
            evader.extend([EvaderDistance, EvaderBearing]);
        }
    }
    ObservationLayout {
        neighbor,
        local,
        evader,
    }
}

/// Everything agent `i` perceives at one time step.
///
/// Row order of `neighbors` and `evaders` carries no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet<T> {
    pub local: Vec<T>,
    pub neighbors: Matrix<T>,
    pub evaders: Matrix<T>,
}

impl<T: Scalar> ObservationSet<T> {
    pub fn cast<U: Scalar>(&self) -> ObservationSet<U> {
        ObservationSet {
            local: self.local.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            neighbors: self.neighbors.cast(),
            evaders: self.evaders.cast(),
        }
    }
}

/// Per-step quantities shared by every agent's observation.
pub(crate) struct ObservationContext<'a> {
    pub states: &'a [AgentState],
    pub evaders: &'a [EvaderState],
    pub graph: &'a InteractionGraph,
    pub paths: Vec<f64>,
}

impl<'a> ObservationContext<'a> {
    pub fn new(
        states: &'a [AgentState],
        evaders: &'a [EvaderState],
        graph: &'a InteractionGraph,
        task: &TaskConfig,
        world: &WorldConfig,
    ) -> Self {
        let paths = if task.task == Task::Pursuit && task.features == FeatureSet::Comm {
            let (d_c, d_o) = match task.observability {
                Observability::Local => (task.d_c, task.d_o),
                Observability::Global => (f64::INFINITY, f64::INFINITY),
            };
            shortest_paths_to_evader(states, &evaders[0], world, d_c, d_o)
        } else {
            Vec::new()
        };
        ObservationContext {
            states,
            evaders,
            graph,
            paths,
        }
    }
}

fn evader_visible(task: &TaskConfig, d: f64) -> bool {
    task.observability == Observability::Global || d <= task.d_o
}

pub(crate) fn observe_in(
    i: usize,
    ctx: &ObservationContext<'_>,
    task: &TaskConfig,
    world: &WorldConfig,
    layout: &ObservationLayout,
) -> Result<ObservationSet<f64>> {
    use FeatureField::*;
    let me = &ctx.states[i];
    let sentinel = 2.0 * (world.x_max + world.y_max);

    let mut neighbors = Matrix::zeros(ctx.graph.degree(i), layout.neighbor.len());
    for (row, &j) in ctx.graph.neighbors(i).iter().enumerate() {
        let g = pairwise_geometry(me, &ctx.states[j], world);
        for (slot, field) in neighbors.row_mut(row).iter_mut().zip(&layout.neighbor) {
            *slot = match field {
                Distance => g.distance,
                Bearing => g.bearing,
                Orientation => g.orientation,
                RelativeVelocityX => g.relative_velocity[0],
                RelativeVelocityY => g.relative_velocity[1],
                NeighborCount => ctx.graph.degree(j) as f64,
                PathToEvader => ctx.paths[j],
                other => return Err(Error::config(format!("{other:?} is not a neighbour feature"))),
            };
        }
    }

    let evader_geom = |e: &EvaderState| {
        let [dx, dy] = world.displacement(me.position(), e.position());
        let d = dx.hypot(dy);
        let bearing = if d == 0.0 { 0.0 } else { wrap_angle(dy.atan2(dx) - me.phi) };
        (d, bearing)
    };

    let mut local = Vec::with_capacity(layout.local.len());
    let needs_wall = layout.local.iter().any(|f| matches!(f, WallDistance | WallBearing));
    let wall = if needs_wall { Some(wall_features(me, world)?) } else { None };
    let evader0 = ctx.evaders.first().map(evader_geom);
    for field in &layout.local {
        let value = match field {
            WallDistance => wall.expect("wall features computed").0,
            WallBearing => wall.expect("wall features computed").1,
            OwnSpeed => me.v,
            OwnTurnRate => me.omega,
            EvaderDistance | EvaderBearing => {
                let (d, b) = evader0.ok_or(Error::AbsentFeature("evader"))?;
                let visible = evader_visible(task, d);
                match (field, visible) {
                    (EvaderDistance, true) => d,
                    (EvaderDistance, false) => sentinel,
                    (_, true) => b,
                    (_, false) => 0.0,
                }
            }
            OwnNeighborCount => ctx.graph.degree(i) as f64,
            OwnPathToEvader => ctx.paths[i],
            other => return Err(Error::config(format!("{other:?} is not a local feature"))),
        };
        local.push(value);
    }

    let mut evaders = Matrix::empty(layout.evader.len());
    if !layout.evader.is_empty() {
        for e in ctx.evaders {
            let (d, b) = evader_geom(e);
            if evader_visible(task, d) {
                let row: Vec<f64> = layout
                    .evader
                    .iter()
                    .map(|f| if *f == EvaderDistance { d } else { b })
                    .collect();
                evaders.push_row(&row)?;
            }
        }
    }

    Ok(ObservationSet {
        local,
        neighbors,
        evaders,
    })
}

/// Builds agent `i`'s observation set.
pub fn observe(
    i: usize,
    states: &[AgentState],
    evaders: &[EvaderState],
    graph: &InteractionGraph,
    task: &TaskConfig,
    world: &WorldConfig,
) -> Result<ObservationSet<f64>> {
    if task.has_evaders() && evaders.is_empty() {
        return Err(Error::config("pursuit tasks need at least one evader state"));
    }
    let layout = observation_layout(task, world);
    let ctx = ObservationContext::new(states, evaders, graph, task, world);
    observe_in(i, &ctx, task, world, &layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GraphMode;

    #[test]
    fn isolated_agent_has_empty_set() {
        let task = TaskConfig {
            observability: Observability::Local,
            ..TaskConfig::rendezvous(2)
        };
        let w = WorldConfig::default();
        let s = [AgentState::at(10.0, 10.0, 0.0), AgentState::at(90.0, 90.0, 0.0)];
        let g = InteractionGraph::build(&s, &w, GraphMode::Disk(task.d_c));
        let o = observe(0, &s, &[], &g, &task, &w).unwrap();
        assert_eq!(o.neighbors.rows(), 0);
        assert_eq!(o.neighbors.cols(), 2);
        assert_eq!(o.local, vec![10.0, wall_features(&s[0], &w).unwrap().1]);
    }

    #[test]
    fn comm_reports_neighbourhood_sizes() {
        let task = TaskConfig {
            observability: Observability::Local,
            features: FeatureSet::Comm,
            ..TaskConfig::rendezvous(2)
        };
        let w = WorldConfig::default();
        let s = [AgentState::at(40.0, 40.0, 0.0), AgentState::at(50.0, 40.0, 0.0)];
        let g = InteractionGraph::build(&s, &w, GraphMode::Disk(task.d_c));
        let layout = observation_layout(&task, &w);
        for i in 0..2 {
            let o = observe(i, &s, &[], &g, &task, &w).unwrap();
            let col = layout.neighbor.iter().position(|f| *f == FeatureField::NeighborCount).unwrap();
            assert_eq!(o.neighbors.row(0)[col], 1.0);
            assert_eq!(*o.local.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn global_pursuit_sees_distant_evader() {
        let task = TaskConfig::pursuit(2);
        let w = WorldConfig::toroidal();
        let s = [AgentState::at(10.0, 10.0, 0.0), AgentState::at(60.0, 60.0, 0.0)];
        let e = [EvaderState { x: 10.0, y: 40.0 }];
        let g = InteractionGraph::build(&s, &w, GraphMode::Global);
        let o = observe(0, &s, &e, &g, &task, &w).unwrap();
        assert_eq!(o.local.len(), 2);
        assert!((o.local[0] - 30.0).abs() < 1e-12);
        assert!((o.local[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn local_pursuit_gates_evader() {
        let task = TaskConfig {
            observability: Observability::Local,
            ..TaskConfig::pursuit(2)
        };
        let w = WorldConfig::toroidal();
        let s = [AgentState::at(10.0, 10.0, 0.0), AgentState::at(60.0, 60.0, 0.0)];
        let e = [EvaderState { x: 10.0, y: 40.0 }];
        let g = InteractionGraph::build(&s, &w, GraphMode::Disk(task.d_c));
        let o = observe(0, &s, &e, &g, &task, &w).unwrap();
        assert_eq!(o.local, vec![400.0, 0.0]);
    }

    #[test]
    fn extended_double_integrator_layout() {
        let task = TaskConfig {
            dynamics: Dynamics::Double,
            features: FeatureSet::Extended,
            ..TaskConfig::rendezvous(3)
        };
        let l = observation_layout(&task, &WorldConfig::default());
        assert_eq!(l.neighbor.len(), 5);
        assert_eq!(l.local.len(), 4);
    }

    #[test]
    fn multi_evader_rows() {
        let task = TaskConfig::multi_pursuit(2, 3);
        let w = WorldConfig::toroidal();
        let s = [AgentState::at(10.0, 10.0, 0.0), AgentState::at(60.0, 60.0, 0.0)];
        let e = [
            EvaderState { x: 1.0, y: 1.0 },
            EvaderState { x: 30.0, y: 1.0 },
            EvaderState { x: 70.0, y: 10.0 },
        ];
        let g = InteractionGraph::build(&s, &w, GraphMode::Global);
        let o = observe(0, &s, &e, &g, &task, &w).unwrap();
        assert_eq!(o.evaders.rows(), 3);
        assert!(o.local.is_empty());
    }
}
