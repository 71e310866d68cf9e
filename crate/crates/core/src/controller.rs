//! A single interface for everything that can drive the swarm: learned
//! policies and the classical baselines.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{
    consensus_pd_policy, surround_pursuit_actions, voronoi_pursuit_actions, ConsensusReference,
    PdGains,
};
use crate::env::{Action, EvaderState, ObservationSet, SwarmEnv};
use crate::policy::{greedy_action, sample_action, Checkpoint, PolicyNet};
use crate::numkit::DiagGaussian;
use crate::{Error, Result};

pub trait Controller: Send + Sync {
    fn name(&self) -> String;

    /// Joint action for the current state of `env`, given every agent's observation.
    fn act(
        &self,
        env: &SwarmEnv,
        observations: &[ObservationSet<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Action>>;
}

/// Shared-parameter policy executed independently by every agent.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub net: PolicyNet,
    pub params: Vec<f64>,
    /// Sample from the Gaussian instead of acting on its mean.
    pub stochastic: bool,
}

impl LearnedPolicy {
    pub fn new(net: PolicyNet, params: Vec<f64>, stochastic: bool) -> Result<Self> {
        if params.len() != net.num_params() {
            return Err(Error::shape("policy parameters", net.num_params(), params.len()));
        }
        Ok(LearnedPolicy {
            net,
            params,
            stochastic,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, stochastic: bool) -> Result<Self> {
        Self::new(ckpt.policy_net()?, ckpt.policy_params.clone(), stochastic)
    }
}

impl Controller for LearnedPolicy {
    fn name(&self) -> String {
        format!("learned-{}", self.net.spec().embedding.name())
    }

    fn act(
        &self,
        env: &SwarmEnv,
        observations: &[ObservationSet<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Action>> {
        let refs: Vec<&ObservationSet<f64>> = observations.iter().collect();
        let trace = self.net.forward_batch(&self.params, &refs)?;
        let log_std = self.net.log_std(&self.params).to_vec();
        let bounds = env.task().action_bounds();
        (0..refs.len())
            .map(|i| {
                let d = DiagGaussian::new(trace.output().row(i).to_vec(), log_std.clone())?;
                Ok(if self.stochastic {
                    sample_action(&d, bounds, rng)
                } else {
                    greedy_action(&d, bounds)
                })
            })
            .collect()
    }
}

/// Uniformly random actions within the bounds.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomController;

impl Controller for RandomController {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&self, env: &SwarmEnv, _: &[ObservationSet<f64>], rng: &mut ChaCha8Rng) -> Result<Vec<Action>> {
        let b = env.task().action_bounds();
        Ok((0..env.num_agents())
            .map(|_| {
                Action::new(
                    rng.random_range(-b.linear..=b.linear),
                    rng.random_range(-b.angular..=b.angular),
                )
            })
            .collect())
    }
}

/// Every agent applies the zero action.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn name(&self) -> String {
        "zero".into()
    }

    fn act(&self, env: &SwarmEnv, _: &[ObservationSet<f64>], _: &mut ChaCha8Rng) -> Result<Vec<Action>> {
        Ok(vec![Action::ZERO; env.num_agents()])
    }
}

/// Consensus protocol with PD tracking.
#[derive(Debug, Clone, Copy)]
pub struct ConsensusController {
    pub gains: PdGains,
    pub reference: ConsensusReference,
}

impl Default for ConsensusController {
    fn default() -> Self {
        ConsensusController {
            gains: PdGains::CONSENSUS,
            reference: ConsensusReference::Averaged,
        }
    }
}

impl Controller for ConsensusController {
    fn name(&self) -> String {
        "consensus".into()
    }

    fn act(&self, env: &SwarmEnv, _: &[ObservationSet<f64>], _: &mut ChaCha8Rng) -> Result<Vec<Action>> {
        Ok((0..env.num_agents())
            .map(|i| {
                consensus_pd_policy(
                    i,
                    env.states(),
                    env.graph(),
                    &self.gains,
                    self.reference,
                    env.task(),
                    env.world(),
                )
            })
            .collect())
    }
}

/// The evader with the smallest summed distance to the pursuers, used as the common
/// target in multi-evader worlds.
fn target_evader(env: &SwarmEnv) -> Result<EvaderState> {
    let evaders = env.evaders();
    let first = *evaders
        .first()
        .ok_or_else(|| Error::Unsupported("pursuit controllers need an evader".into()))?;
    let w = env.world();
    let total = |e: &EvaderState| -> f64 {
        env.states()
            .iter()
            .map(|s| w.distance(s.position(), e.position()))
            .sum()
    };
    Ok(evaders
        .iter()
        .copied()
        .min_by(|a, b| total(a).total_cmp(&total(b)))
        .unwrap_or(first))
}

/// Shared-boundary Voronoi pursuer.
#[derive(Debug, Clone, Copy, Default)]
pub struct VoronoiPursuitController {
    pub gains: PdGains,
}

impl Controller for VoronoiPursuitController {
    fn name(&self) -> String {
        "voronoi-pursuit".into()
    }

    fn act(&self, env: &SwarmEnv, _: &[ObservationSet<f64>], _: &mut ChaCha8Rng) -> Result<Vec<Action>> {
        let e = target_evader(env)?;
        Ok(voronoi_pursuit_actions(env.states(), &e, &self.gains, env.task(), env.world()))
    }
}

/// Scripted surround-then-close pursuer.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurroundController {
    pub gains: PdGains,
}

impl Controller for SurroundController {
    fn name(&self) -> String {
        "surround".into()
    }

    fn act(&self, env: &SwarmEnv, _: &[ObservationSet<f64>], _: &mut ChaCha8Rng) -> Result<Vec<Action>> {
        let e = target_evader(env)?;
        Ok(surround_pursuit_actions(env.states(), &e, &self.gains, env.task(), env.world()))
    }
}

pub const BASELINE_NAMES: [&str; 5] = ["random", "zero", "consensus", "voronoi-pursuit", "surround"];

/// Builds a baseline controller by name. `gains` overrides the controller's default gains.
pub fn baseline_by_name(name: &str, gains: Option<PdGains>) -> Result<Box<dyn Controller>> {
    Ok(match name {
        "random" => Box::new(RandomController),
        "zero" => Box::new(ZeroController),
        "consensus" => {
            let mut c = ConsensusController::default();
            c.gains = gains.unwrap_or(c.gains);
            Box::new(c)
        }
        "voronoi-pursuit" => Box::new(VoronoiPursuitController {
            gains: gains.unwrap_or_default(),
        }),
        "surround" => Box::new(SurroundController {
            gains: gains.unwrap_or_default(),
        }),
        other => {
            return Err(Error::config(format!(
                "unknown baseline `{other}` (expected random, zero, consensus, voronoi-pursuit or surround)"
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{TaskConfig, WorldConfig};
    use crate::policy::{EmbeddingSpec, FeatureSpec, PolicySpec};
    use rand::SeedableRng;

    #[test]
    fn every_baseline_produces_bounded_actions() {
        let task = TaskConfig::pursuit(6);
        let world = WorldConfig::toroidal();
        let mut env = SwarmEnv::new(task, world, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for name in BASELINE_NAMES {
            let c = baseline_by_name(name, None).unwrap();
            let obs = env.observations().unwrap();
            let actions = c.act(&env, &obs, &mut rng).unwrap();
            assert_eq!(actions.len(), 6);
            let b = env.task().action_bounds();
            for a in &actions {
                assert!(a.linear.abs() <= b.linear && a.angular.abs() <= b.angular);
            }
            env.step(&actions).unwrap();
        }
        assert!(baseline_by_name("nope", None).is_err());
    }

    #[test]
    fn learned_policy_greedy_is_deterministic() {
        let task = TaskConfig::rendezvous(5);
        let world = WorldConfig::default();
        let net = PolicyNet::new(PolicySpec::policy(
            FeatureSpec::for_task(&task, &world),
            EmbeddingSpec::NnMean { hidden: vec![8] },
        ))
        .unwrap();
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let policy = LearnedPolicy::new(net, params, false).unwrap();
        let env = SwarmEnv::new(task, world, 2).unwrap();
        let obs = env.observations().unwrap();
        let a = policy.act(&env, &obs, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = policy.act(&env, &obs, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
    }
}
