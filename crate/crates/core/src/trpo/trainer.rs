use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{collect_subsampled, compute_returns};
use super::config::TrainerConfig;
use super::update::{trpo_update, UpdateStats};
use super::value::{compute_advantages, fit_value, renormalize, return_statistics, Adam};
use crate::env::{TaskConfig, WorldConfig};
use crate::policy::{Checkpoint, PolicyNet, PolicySpec, ValueNormalization};
use crate::{derive_seed, Error, Result};

const ROLLOUT_STREAM: u64 = 1;
const VALUE_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub samples: usize,
    pub avg_return: f64,
    pub mean_kl: f64,
    pub surrogate_improvement: f64,
    pub value_loss: f64,
    pub wall_time_s: f64,
}

pub const CURVE_HEADER: &str =
    "iter,samples,avg_return,mean_kl,surrogate_improvement,value_loss,wall_time_s";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<IterationRecord>,
}

impl LearningCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r).map_err(csv_error)?;
        }
        if self.records.is_empty() {
            w.write_record(CURVE_HEADER.split(',')).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
        if header.join(",") != CURVE_HEADER {
            return Err(Error::Parse {
                path: "learning curve".into(),
                message: format!("unexpected header `{}`", header.join(",")),
            });
        }
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<IterationRecord>, _>>()
            .map_err(csv_error)?;
        Ok(LearningCurve { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let file = std::fs::File::open(p)?;
        Self::read_csv(file).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: p.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.avg_return).collect()
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Parse {
        path: "csv".into(),
        message: e.to_string(),
    }
}

/// Outcome of one training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub record: IterationRecord,
    pub update: UpdateStats,
    pub value_loss_before: f64,
}

/// Parameter-sharing TRPO loop: one policy and one value network shared by
/// every agent.
pub struct Trainer {
    task: TaskConfig,
    world: WorldConfig,
    config: TrainerConfig,
    policy: PolicyNet,
    value: PolicyNet,
    policy_params: Vec<f64>,
    value_params: Vec<f64>,
    value_norm: ValueNormalization,
    value_opt: Adam,
    iteration: usize,
    started: Instant,
}

impl Trainer {
    /// Fresh networks; the value network copies the policy's features and embedding.
    pub fn new(task: TaskConfig, world: WorldConfig, policy_spec: PolicySpec, config: TrainerConfig) -> Result<Self> {
        task.validate(&world)?;
        config.validate()?;
        let value_spec = PolicySpec {
            evader_embedding: policy_spec.evader_embedding.clone(),
            trunk: policy_spec.trunk.clone(),
            ..PolicySpec::value(policy_spec.features.clone(), policy_spec.embedding.clone())
        };
        let policy = PolicyNet::new(policy_spec)?;
        let value = PolicyNet::new(value_spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[INIT_STREAM]));
        let policy_params = policy.init_params(&mut rng);
        let value_params = value.init_params(&mut rng);
        let value_opt = Adam::new(value.num_params(), config.value_lr);
        Ok(Trainer {
            task,
            world,
            config,
            policy,
            value,
            policy_params,
            value_params,
            value_norm: ValueNormalization::default(),
            value_opt,
            iteration: 0,
            started: Instant::now(),
        })
    }

    /// Continues from a checkpoint; optimizer moments restart from zero.
    pub fn from_checkpoint(ckpt: &Checkpoint, task: TaskConfig, world: WorldConfig, config: TrainerConfig) -> Result<Self> {
        task.validate(&world)?;
        config.validate()?;
        let policy = ckpt.policy_net()?;
        let value = ckpt.value_net()?;
        let value_opt = Adam::new(value.num_params(), config.value_lr);
        Ok(Trainer {
            task,
            world,
            config,
            policy,
            value,
            policy_params: ckpt.policy_params.clone(),
            value_params: ckpt.value_params.clone(),
            value_norm: ckpt.value_normalization,
            value_opt,
            iteration: ckpt.iteration,
            started: Instant::now(),
        })
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn policy_params(&self) -> &[f64] {
        &self.policy_params
    }

    pub fn value(&self) -> &PolicyNet {
        &self.value
    }

    pub fn value_params(&self) -> &[f64] {
        &self.value_params
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            policy_spec: self.policy.spec().clone(),
            value_spec: self.value.spec().clone(),
            policy_params: self.policy_params.clone(),
            value_params: self.value_params.clone(),
            value_normalization: self.value_norm,
            task: Some(self.task.clone()),
            world: Some(self.world),
            iteration: self.iteration,
        }
    }

    /// collect, subsample, returns, value fit, advantages, policy update.
    pub fn step(&mut self) -> Result<IterationReport> {
        let it = self.iteration;
        self.run_iteration().map_err(|e| Error::Iteration {
            iteration: it,
            source: Box::new(e),
        })
    }

    fn run_iteration(&mut self) -> Result<IterationReport> {
        let c = &self.config;
        let seed = derive_seed(c.seed, &[ROLLOUT_STREAM, self.iteration as u64]);
        let mut batch = collect_subsampled(
            &self.task,
            &self.world,
            &self.policy,
            &self.policy_params,
            c,
            seed,
            c.subsample_agents,
        )?;
        compute_returns(&mut batch, c.gamma);

        let norm = return_statistics(&batch.returns, self.value_norm);
        renormalize(&self.value, &mut self.value_params, self.value_norm, norm);
        self.value_norm = norm;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(c.seed, &[VALUE_STREAM, self.iteration as u64]));
        let fit = fit_value(
            &self.value,
            &mut self.value_params,
            norm,
            &batch.observations(),
            &batch.returns,
            c.value_epochs,
            c.value_minibatch,
            &mut self.value_opt,
            &mut rng,
        )?;
        compute_advantages(&self.value, &self.value_params, norm, &mut batch)?;

        let (params, update) = trpo_update(&self.policy, &self.policy_params, &batch, c)?;
        self.policy_params = params;
        self.iteration += 1;
        let record = IterationRecord {
            iter: self.iteration,
            samples: batch.len(),
            avg_return: batch.average_return(),
            mean_kl: update.mean_kl,
            surrogate_improvement: update.surrogate_improvement,
            value_loss: fit.loss_after,
            wall_time_s: if c.log_wall_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        log::info!(
            "iter {:>4}  samples {:>7}  return {:>12.4}  kl {:.5}  surr {:+.5}  vloss {:.4}  {:?}",
            record.iter,
            record.samples,
            record.avg_return,
            record.mean_kl,
            record.surrogate_improvement,
            record.value_loss,
            update.status
        );
        Ok(IterationReport {
            record,
            update,
            value_loss_before: fit.loss_before,
        })
    }

    /// Runs `iterations` more iterations, calling `on_iteration` after each.
    pub fn run<F>(&mut self, iterations: usize, mut on_iteration: F) -> Result<LearningCurve>
    where
        F: FnMut(&Trainer, &IterationReport) -> Result<()>,
    {
        let mut curve = LearningCurve::default();
        for _ in 0..iterations {
            let report = self.step()?;
            on_iteration(self, &report)?;
            curve.records.push(report.record);
        }
        Ok(curve)
    }
}
