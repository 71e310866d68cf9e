use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{ConsensusReference, PdGains};
use crate::controller::BASELINE_NAMES;
use crate::env::{observation_layout, Task, TaskConfig, WorldConfig};
use crate::policy::{EmbeddingSpec, FeatureSpec, PolicyNet, PolicySpec};
use crate::trpo::TrainerConfig;
use crate::{Error, Result};

/// Network architecture of the learned policy (the value network mirrors it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub embedding: EmbeddingSpec,
    /// Encoder for the evader set; defaults to `embedding`.
    pub evader_embedding: Option<EmbeddingSpec>,
    pub trunk: Vec<usize>,
    pub log_std_init: f64,
    /// Explicit feature specification; derived from the task when absent.
    pub features: Option<FeatureSpec>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embedding: EmbeddingSpec::NnMean { hidden: vec![64] },
            evader_embedding: None,
            trunk: vec![64],
            log_std_init: 0.6f64.ln(),
            features: None,
        }
    }
}

impl PolicyConfig {
    pub fn spec(&self, task: &TaskConfig, world: &WorldConfig) -> PolicySpec {
        let features = self
            .features
            .clone()
            .unwrap_or_else(|| FeatureSpec::for_task(task, world));
        PolicySpec {
            evader_embedding: self.evader_embedding.clone(),
            trunk: self.trunk.clone(),
            log_std_init: self.log_std_init,
            ..PolicySpec::policy(features, self.embedding.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Steps per evaluation episode; 1000 for rendezvous and 1024 for pursuit when absent.
    pub horizon: Option<usize>,
    pub seed: u64,
    /// Episodes whose trajectories are exported.
    pub trajectories: usize,
    /// Sample actions instead of acting on the policy mean.
    pub stochastic: bool,
    /// Swarm sizes for cross-scale evaluation after training.
    pub scales: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 1000,
            horizon: None,
            seed: 0,
            trajectories: 1,
            stochastic: false,
            scales: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn horizon_for(&self, task: &TaskConfig) -> usize {
        self.horizon.unwrap_or(match task.task {
            Task::Rendezvous => 1000,
            Task::Pursuit | Task::MultiPursuit => 1024,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub controller: String,
    /// Overrides the controller's default gains.
    pub gains: Option<PdGains>,
    pub reference: ConsensusReference,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            controller: "consensus".into(),
            gains: None,
            reference: ConsensusReference::default(),
        }
    }
}

/// Everything one experiment needs, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trials: usize,
    /// Trials entering the median of the aggregated learning curve.
    pub top_q: usize,
    pub task: TaskConfig,
    pub world: WorldConfig,
    pub policy: PolicyConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub baseline: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: 1,
            top_q: 5,
            task: TaskConfig::default(),
            world: WorldConfig::default(),
            policy: PolicyConfig::default(),
            trainer: TrainerConfig::default(),
            eval: EvalConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: "config".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Canonical TOML with every field spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse {
            path: "config".into(),
            message: e.to_string(),
        })
    }

    pub fn policy_spec(&self) -> PolicySpec {
        self.policy.spec(&self.task, &self.world)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.world.violations();
        v.extend(self.task.violations());
        v.extend(self.trainer.violations());
        if self.trials == 0 {
            v.push("trials must be positive".into());
        }
        if self.top_q == 0 {
            v.push("top_q must be positive".into());
        }
        if self.trials > 1 && self.top_q > self.trials {
            v.push(format!(
                "top_q ({}) exceeds the number of trials ({})",
                self.top_q, self.trials
            ));
        }
        if self.eval.episodes == 0 {
            v.push("eval.episodes must be positive".into());
        }
        if self.eval.horizon == Some(0) {
            v.push("eval.horizon must be positive".into());
        }
        if self.eval.scales.iter().any(|&n| n < 2) {
            v.push("eval.scales entries must be at least 2".into());
        }
        if !BASELINE_NAMES.contains(&self.baseline.controller.as_str()) {
            v.push(format!(
                "baseline.controller `{}` is not one of {}",
                self.baseline.controller,
                BASELINE_NAMES.join(", ")
            ));
        }
        if let Some(g) = &self.baseline.gains {
            if let Err(Error::Config(e)) = g.validate() {
                v.extend(e.into_iter().map(|m| format!("baseline.{m}")));
            }
        }
        if let Some(f) = &self.policy.features {
            let env = observation_layout(&self.task, &self.world);
            if f.layout != env {
                v.push(format!(
                    "policy.features do not match the environment observation layout \
                     (policy neighbour fields {:?}, environment {:?})",
                    f.layout.neighbor, env.neighbor
                ));
            }
        }
        if v.is_empty() {
            if let Err(e) = PolicyNet::new(self.policy_spec()) {
                match e {
                    Error::Config(list) => v.extend(list.into_iter().map(|m| format!("policy: {m}"))),
                    other => v.push(format!("policy: {other}")),
                }
            }
        }
        v
    }

    /// Checks the whole configuration and reports every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}
