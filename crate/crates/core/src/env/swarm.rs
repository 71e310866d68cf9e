use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::evader::evader_action_from_grid;
use super::observe::{observe_in, ObservationContext};
use super::{
    apply_boundary, observation_layout, reward_multi_evader, reward_pursuit, reward_rendezvous,
    step_kinematics, Action, AgentState, EvaderState, GraphMode, InteractionGraph, Observability,
    ObservationLayout, ObservationSet, Task, TaskConfig, VoronoiGrid, WorldConfig,
};
use crate::{Error, Result};

const MAX_SPAWN_ATTEMPTS: usize = 10_000;

/// Result of one environment transition.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observations: Vec<ObservationSet<f64>>,
    pub reward: f64,
    pub done: bool,
    /// Some pursuer is within the capture threshold of some evader.
    pub captured: bool,
    /// Per-evader capture flags, evaluated before any respawn.
    pub caught: Vec<bool>,
}

/// A swarm of homogeneous agents plus the evaders of the pursuit tasks.
///
/// Each instance owns its random stream; reset it with a seed to get a
/// reproducible episode.
#[derive(Debug, Clone)]
pub struct SwarmEnv {
    task: TaskConfig,
    world: WorldConfig,
    layout: ObservationLayout,
    rng: ChaCha8Rng,
    states: Vec<AgentState>,
    evaders: Vec<EvaderState>,
    graph: InteractionGraph,
    t: usize,
}

impl SwarmEnv {
    pub fn new(task: TaskConfig, world: WorldConfig, seed: u64) -> Result<Self> {
        task.validate(&world)?;
        let layout = observation_layout(&task, &world);
        let mut env = SwarmEnv {
            task,
            world,
            layout,
            rng: ChaCha8Rng::seed_from_u64(seed),
            states: Vec::new(),
            evaders: Vec::new(),
            graph: InteractionGraph::default(),
            t: 0,
        };
        env.reset(seed)?;
        Ok(env)
    }

    /// Uniform positions, uniform headings and zero velocities; evaders are
    /// resampled until they are farther than `d_t` from every pursuer.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<ObservationSet<f64>>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let (x_max, y_max) = (self.world.x_max, self.world.y_max);
        self.states = (0..self.task.agents)
            .map(|_| {
                let x = self.rng.random_range(0.0..x_max);
                let y = self.rng.random_range(0.0..y_max);
                let phi = self.rng.random_range(0.0..std::f64::consts::TAU);
                AgentState::at(x, y, phi)
            })
            .collect();
        self.evaders = Vec::with_capacity(self.task.evader_count());
        for _ in 0..self.task.evader_count() {
            let e = self.spawn_evader()?;
            self.evaders.push(e);
        }
        self.t = 0;
        self.rebuild_graph();
        self.observations()
    }

    fn spawn_evader(&mut self) -> Result<EvaderState> {
        for _ in 0..MAX_SPAWN_ATTEMPTS {
            let e = EvaderState {
                x: self.rng.random_range(0.0..self.world.x_max),
                y: self.rng.random_range(0.0..self.world.y_max),
            };
            let clear = self
                .states
                .iter()
                .all(|s| self.world.distance(s.position(), e.position()) > self.task.d_t);
            if clear {
                return Ok(e);
            }
        }
        Err(Error::Unsupported(format!(
            "no evader spawn point farther than d_t = {} from every pursuer",
            self.task.d_t
        )))
    }

    fn rebuild_graph(&mut self) {
        let mode = match self.task.observability {
            Observability::Global => GraphMode::Global,
            Observability::Local => GraphMode::Disk(self.task.d_c),
        };
        self.graph = InteractionGraph::build(&self.states, &self.world, mode);
    }

    /// Advances every agent and evader by one time step.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        if actions.len() != self.states.len() {
            return Err(Error::shape("env step actions", self.states.len(), actions.len()));
        }
        let bounds = self.task.action_bounds();
        let actions: Vec<Action> = actions.iter().map(|a| a.clamped(bounds)).collect();

        // evaders react to the pre-step pursuer configuration
        let speed = self.task.evader_speed();
        let evader_velocities: Vec<[f64; 2]> = self
            .evaders
            .iter()
            .map(|e| {
                let grid = VoronoiGrid::from_states(
                    e.position(),
                    &self.states,
                    &self.world,
                    self.task.voronoi_resolution,
                );
                evader_action_from_grid(&grid, e.position(), &self.states, &self.world, speed)
            })
            .collect();

        for (s, a) in self.states.iter_mut().zip(&actions) {
            *s = step_kinematics(s, *a, &self.world, self.task.dynamics, &self.task);
        }
        for (e, v) in self.evaders.iter_mut().zip(&evader_velocities) {
            let (x, y) = apply_boundary(
                e.x + v[0] * self.world.dt,
                e.y + v[1] * self.world.dt,
                &self.world,
            );
            *e = EvaderState { x, y };
        }
        self.t += 1;

        let caught: Vec<bool> = self
            .evaders
            .iter()
            .map(|e| {
                self.states
                    .iter()
                    .any(|s| self.world.distance(s.position(), e.position()) <= self.task.d_t)
            })
            .collect();
        let captured = caught.iter().any(|&c| c);
        let horizon = self.t >= self.task.episode_len;
        let (reward, done) = match self.task.task {
            Task::Rendezvous => (
                reward_rendezvous(&self.states, &actions, &self.task, &self.world),
                horizon,
            ),
            Task::Pursuit => (
                reward_pursuit(&self.states, &self.evaders[0], &self.task, &self.world),
                captured || horizon,
            ),
            Task::MultiPursuit => (
                reward_multi_evader(&self.states, &self.evaders, &self.task, &self.world),
                horizon,
            ),
        };
        if self.task.task == Task::MultiPursuit {
            for k in 0..self.evaders.len() {
                if caught[k] {
                    self.evaders[k] = self.spawn_evader()?;
                }
            }
        }

        self.rebuild_graph();
        Ok(StepOutcome {
            observations: self.observations()?,
            reward,
            done,
            captured,
            caught,
        })
    }

    /// Observation sets of every agent in the current state.
    pub fn observations(&self) -> Result<Vec<ObservationSet<f64>>> {
        let ctx = ObservationContext::new(
            &self.states,
            &self.evaders,
            &self.graph,
            &self.task,
            &self.world,
        );
        (0..self.states.len())
            .map(|i| observe_in(i, &ctx, &self.task, &self.world, &self.layout))
            .collect()
    }

    /// Overwrites the joint state, keeping the time index.
    pub fn set_state(&mut self, states: Vec<AgentState>, evaders: Vec<EvaderState>) -> Result<()> {
        if states.len() != self.task.agents {
            return Err(Error::shape("env agent states", self.task.agents, states.len()));
        }
        if evaders.len() != self.task.evader_count() {
            return Err(Error::shape("env evader states", self.task.evader_count(), evaders.len()));
        }
        self.states = states;
        self.evaders = evaders;
        self.rebuild_graph();
        Ok(())
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn evaders(&self) -> &[EvaderState] {
        &self.evaders
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn num_agents(&self) -> usize {
        self.states.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Dynamics, FeatureSet};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use std::f64::consts::{PI, TAU};

    fn random_actions(env: &SwarmEnv, rng: &mut ChaCha8Rng) -> Vec<Action> {
        let b = env.task().action_bounds();
        (0..env.num_agents())
            .map(|_| {
                Action::new(
                    rng.random_range(-1.5 * b.linear..1.5 * b.linear),
                    rng.random_range(-1.5 * b.angular..1.5 * b.angular),
                )
            })
            .collect()
    }

    #[test]
    fn reset_is_deterministic_and_in_bounds() {
        let world = WorldConfig::default();
        let a = SwarmEnv::new(TaskConfig::rendezvous(20), world, 9).unwrap();
        let b = SwarmEnv::new(TaskConfig::rendezvous(20), world, 9).unwrap();
        assert_eq!(a.states(), b.states());
        assert_eq!(a.states().len(), 20);
        for s in a.states() {
            assert!((0.0..=100.0).contains(&s.x) && (0.0..=100.0).contains(&s.y));
            assert!((0.0..TAU).contains(&s.phi));
            assert_eq!((s.v, s.omega), (0.0, 0.0));
        }
        let c = SwarmEnv::new(TaskConfig::rendezvous(20), world, 10).unwrap();
        assert_ne!(a.states(), c.states());
    }

    #[test]
    fn evader_spawns_clear_of_pursuers() {
        let mut task = TaskConfig::pursuit(50);
        task.d_t = 8.0;
        let mut env = SwarmEnv::new(task, WorldConfig::toroidal(), 0).unwrap();
        for seed in 0..50 {
            env.reset(seed).unwrap();
            let e = env.evaders()[0].position();
            for s in env.states() {
                assert!(env.world().distance(s.position(), e) > 8.0);
            }
        }
    }

    #[test]
    fn rendezvous_done_at_horizon() {
        let mut task = TaskConfig::rendezvous(3);
        task.episode_len = 5;
        let mut env = SwarmEnv::new(task, WorldConfig::default(), 1).unwrap();
        for t in 1..=5 {
            let out = env.step(&[Action::ZERO; 3]).unwrap();
            assert_eq!(out.done, t == 5);
        }
    }

    #[test]
    fn pursuit_capture_ends_episode() {
        let mut env = SwarmEnv::new(TaskConfig::pursuit(2), WorldConfig::default(), 1).unwrap();
        env.set_state(
            vec![AgentState::at(50.0, 50.0, 0.0), AgentState::at(10.0, 10.0, 0.0)],
            vec![EvaderState { x: 52.0, y: 50.0 }],
        )
        .unwrap();
        // stationary pursuers; the evader cannot leave d_t = 3 in a single 1-unit step
        let out = env.step(&[Action::ZERO; 2]).unwrap();
        assert!(out.captured && out.done);
        assert!(out.reward > -1.0 && out.reward <= 0.0);
    }

    #[test]
    fn multi_pursuit_respawns_caught_evader() {
        let task = TaskConfig::multi_pursuit(3, 2);
        let mut env = SwarmEnv::new(task, WorldConfig::toroidal(), 4).unwrap();
        env.set_state(
            vec![
                AgentState::at(50.0, 50.0, 0.0),
                AgentState::at(10.0, 10.0, 0.0),
                AgentState::at(80.0, 20.0, 0.0),
            ],
            vec![EvaderState { x: 51.0, y: 50.0 }, EvaderState { x: 30.0, y: 80.0 }],
        )
        .unwrap();
        let out = env.step(&[Action::ZERO; 3]).unwrap();
        assert_eq!(out.caught, vec![true, false]);
        assert!(out.reward >= 1.0);
        assert!(!out.done);
        let e = env.evaders()[0].position();
        for s in env.states() {
            assert!(env.world().distance(s.position(), e) > env.task().d_t);
        }
    }

    #[test]
    fn action_count_mismatch_errors() {
        let mut env = SwarmEnv::new(TaskConfig::rendezvous(4), WorldConfig::default(), 0).unwrap();
        assert!(matches!(env.step(&[Action::ZERO; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_actions_keep_single_integrator_positions() {
        let mut env = SwarmEnv::new(TaskConfig::rendezvous(10), WorldConfig::default(), 2).unwrap();
        let before: Vec<_> = env.states().iter().map(|s| s.position()).collect();
        env.step(&[Action::ZERO; 10]).unwrap();
        let after: Vec<_> = env.states().iter().map(|s| s.position()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn observation_sizes_follow_graph() {
        let mut task = TaskConfig::rendezvous(12);
        task.observability = Observability::Local;
        task.features = FeatureSet::Comm;
        let env = SwarmEnv::new(task, WorldConfig::default(), 5).unwrap();
        let obs = env.observations().unwrap();
        for (i, o) in obs.iter().enumerate() {
            assert_eq!(o.neighbors.rows(), env.graph().degree(i));
            assert_eq!(o.neighbors.cols(), env.layout().neighbor.len());
            assert_eq!(o.local.len(), env.layout().local.len());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_equivariance(seed in 0u64..1000, double in any::<bool>(), torus in any::<bool>()) {
            let mut task = TaskConfig::rendezvous(7);
            if double {
                task.dynamics = Dynamics::Double;
            }
            let world = if torus { WorldConfig::toroidal() } else { WorldConfig::default() };
            let mut env = SwarmEnv::new(task.clone(), world, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            for s in &mut env.states {
                s.v = rng.random_range(-0.5..0.5);
                s.omega = rng.random_range(-0.7..0.7);
            }
            let actions = random_actions(&env, &mut rng);
            let mut perm: Vec<usize> = (0..7).collect();
            for i in (1..7).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let mut permuted = env.clone();
            permuted.states = perm.iter().map(|&p| env.states[p]).collect();
            let permuted_actions: Vec<Action> = perm.iter().map(|&p| actions[p]).collect();

            let a = env.step(&actions).unwrap();
            let b = permuted.step(&permuted_actions).unwrap();
            for (k, &p) in perm.iter().enumerate() {
                prop_assert_eq!(permuted.states[k], env.states[p]);
            }
            prop_assert!((a.reward - b.reward).abs() < 1e-12);
        }

        #[test]
        fn angles_stay_in_range(seed in 0u64..1000) {
            let mut task = TaskConfig::pursuit(5);
            task.dynamics = Dynamics::Double;
            task.features = FeatureSet::Extended;
            task.voronoi_resolution = 16;
            let mut env = SwarmEnv::new(task, WorldConfig::default(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let actions = random_actions(&env, &mut rng);
                let out = env.step(&actions).unwrap();
                for s in env.states() {
                    prop_assert!((0.0..TAU).contains(&s.phi));
                }
                for o in &out.observations {
                    for r in 0..o.neighbors.rows() {
                        let row = o.neighbors.row(r);
                        prop_assert!(row[1] > -PI && row[1] <= PI);
                        prop_assert!(row[2] > -PI && row[2] <= PI);
                    }
                    prop_assert!(o.local[1] > -PI && o.local[1] <= PI);
                }
                if out.done {
                    env.reset(seed + 1).unwrap();
                }
            }
        }
    }
}
