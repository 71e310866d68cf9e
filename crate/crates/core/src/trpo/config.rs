use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Environment variable overriding [`TrainerConfig::workers`].
pub const WORKERS_ENV: &str = "SWARMRL_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Parallel rollout workers, each with its own environment.
    pub workers: usize,
    pub steps_per_worker: usize,
    /// Agents whose transitions are kept per worker and iteration.
    pub subsample_agents: usize,
    /// KL bound `delta`.
    pub max_kl: f64,
    pub gamma: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_steps: usize,
    pub backtrack_factor: f64,
    pub value_epochs: usize,
    pub value_lr: f64,
    pub value_minibatch: usize,
    /// Every `fisher_stride`-th transition enters the Fisher-vector products.
    pub fisher_stride: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
    /// Record wall-clock time in the learning curve. Off keeps curves byte-identical across reruns.
    pub log_wall_time: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            workers: 10,
            steps_per_worker: 2048,
            subsample_agents: 8,
            max_kl: 0.01,
            gamma: 0.99,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_steps: 10,
            backtrack_factor: 0.8,
            value_epochs: 5,
            value_lr: 1e-3,
            value_minibatch: 256,
            fisher_stride: 5,
            iterations: 300,
            seed: 0,
            checkpoint_every: 50,
            log_wall_time: false,
        }
    }
}

impl TrainerConfig {
    /// Transitions entering each update for a swarm of `agents`.
    pub fn samples_per_iteration(&self, agents: usize) -> usize {
        self.workers * self.steps_per_worker * self.subsample_agents.min(agents)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, value) in [
            ("workers", self.workers),
            ("steps_per_worker", self.steps_per_worker),
            ("subsample_agents", self.subsample_agents),
            ("cg_iters", self.cg_iters),
            ("backtrack_steps", self.backtrack_steps),
            ("value_minibatch", self.value_minibatch),
            ("fisher_stride", self.fisher_stride),
        ] {
            if value == 0 {
                v.push(format!("trainer.{name} must be positive"));
            }
        }
        for (name, value) in [
            ("max_kl", self.max_kl),
            ("cg_damping", self.cg_damping),
            ("value_lr", self.value_lr),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                v.push(format!("trainer.{name} must be positive (got {value})"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            v.push(format!("trainer.gamma must lie in [0, 1] (got {})", self.gamma));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            v.push(format!(
                "trainer.backtrack_factor must lie in (0, 1) (got {})",
                self.backtrack_factor
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Applies `SWARMRL_WORKERS` if set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(WORKERS_ENV) {
            self.workers = parse_workers(&raw)?;
        }
        Ok(())
    }
}

fn parse_workers(raw: &str) -> Result<usize> {
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::config(format!(
            "{WORKERS_ENV} must be a positive integer (got `{raw}`)"
        ))),
    }
}
