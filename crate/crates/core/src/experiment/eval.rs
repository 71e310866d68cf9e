use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{Controller, LearnedPolicy};
use crate::env::{mean_pairwise_distance, SwarmEnv, TaskConfig, TrajectoryWriter, WorldConfig};
use crate::trpo::csv_error;
use crate::{derive_seed, Error, Result};

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Mean pairwise distance at `t = 0..=horizon`; held at its last value after the episode ends.
    pub distance: Vec<f64>,
    /// First step at which some evader was caught.
    pub capture_step: Option<usize>,
    /// Undiscounted team return.
    pub team_return: f64,
    /// Line-delimited JSON trajectory, when requested.
    pub trajectory: Option<Vec<u8>>,
}

/// Aggregate over many evaluation episodes of one controller.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub controller: String,
    pub agents: usize,
    pub episodes: usize,
    pub horizon: usize,
    /// Mean over episodes of the mean pairwise distance at each step.
    pub mean_distance: Vec<f64>,
    /// Fraction of episodes with a capture at or before each step.
    pub capture_fraction: Vec<f64>,
    pub episode_returns: Vec<f64>,
    #[serde(skip)]
    pub trajectories: Vec<Vec<u8>>,
}

impl EvalReport {
    pub fn final_distance(&self) -> f64 {
        *self.mean_distance.last().unwrap_or(&f64::NAN)
    }

    pub fn final_capture(&self) -> f64 {
        *self.capture_fraction.last().unwrap_or(&0.0)
    }

    pub fn mean_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            return f64::NAN;
        }
        self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
    }

    /// Steps `t > after` at which the mean distance grew by more than `tol`.
    pub fn distance_increases_after(&self, after: usize, tol: f64) -> usize {
        self.mean_distance
            .windows(2)
            .enumerate()
            .filter(|(t, w)| t + 1 > after && w[1] > w[0] + tol)
            .count()
    }

    /// Writes `distance.csv`, `capture.csv`, `returns.csv` and `summary.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_series(&dir.join("distance.csv"), "mean_distance", &self.mean_distance)?;
        write_series(&dir.join("capture.csv"), "capture_fraction", &self.capture_fraction)?;
        let mut w = csv::Writer::from_path(dir.join("returns.csv")).map_err(csv_error)?;
        w.write_record(["episode", "return"]).map_err(csv_error)?;
        for (e, r) in self.episode_returns.iter().enumerate() {
            w.write_record([e.to_string(), r.to_string()]).map_err(csv_error)?;
        }
        w.flush()?;
        let summary = serde_json::json!({
            "controller": self.controller,
            "agents": self.agents,
            "episodes": self.episodes,
            "horizon": self.horizon,
            "final_distance": self.final_distance(),
            "final_capture_fraction": self.final_capture(),
            "mean_return": self.mean_return(),
        });
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }

    /// Writes each stored trajectory as `episode_NNN.jsonl` into `dir`.
    pub fn write_trajectories(&self, dir: &Path) -> Result<()> {
        if self.trajectories.is_empty() {
            return Ok(());
        }
        std::fs::create_dir_all(dir)?;
        for (e, bytes) in self.trajectories.iter().enumerate() {
            std::fs::write(dir.join(format!("episode_{e:03}.jsonl")), bytes)?;
        }
        Ok(())
    }
}

fn write_series(path: &Path, column: &str, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["t", column]).map_err(csv_error)?;
    for (t, v) in values.iter().enumerate() {
        w.write_record([t.to_string(), v.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one episode of `horizon` steps. The task's episode length is replaced by `horizon`.
pub fn run_episode(
    controller: &dyn Controller,
    task: &TaskConfig,
    world: &WorldConfig,
    horizon: usize,
    seed: u64,
    record: bool,
) -> Result<EpisodeResult> {
    let task = TaskConfig {
        episode_len: horizon,
        ..task.clone()
    };
    let mut env = SwarmEnv::new(task, *world, derive_seed(seed, &[0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut writer = record.then(|| TrajectoryWriter::new(Vec::new()));
    let no_catch = vec![false; env.evaders().len()];
    if let Some(w) = writer.as_mut() {
        w.write_step(0, env.states(), env.evaders(), 0.0, false, &no_catch)?;
    }

    let mut distance = Vec::with_capacity(horizon + 1);
    distance.push(mean_pairwise_distance(env.states(), world));
    let mut capture_step = None;
    let mut team_return = 0.0;
    let mut obs = env.observations()?;
    for t in 1..=horizon {
        let actions = controller.act(&env, &obs, &mut rng)?;
        let out = env.step(&actions)?;
        team_return += out.reward;
        if out.captured && capture_step.is_none() {
            capture_step = Some(t);
        }
        distance.push(mean_pairwise_distance(env.states(), world));
        if let Some(w) = writer.as_mut() {
            w.write_step(t, env.states(), env.evaders(), out.reward, out.done, &out.caught)?;
        }
        if out.done {
            break;
        }
        obs = out.observations;
    }
    let last = *distance.last().expect("initial distance");
    distance.resize(horizon + 1, last);
    let trajectory = match writer {
        Some(mut w) => {
            w.flush()?;
            Some(w.into_inner())
        }
        None => None,
    };
    Ok(EpisodeResult {
        distance,
        capture_step,
        team_return,
        trajectory,
    })
}

/// Evaluates `controller` over `episodes` independent episodes, in parallel.
///
/// Episode `e` is seeded with `derive_seed(seed, [e])`, so the report does not
/// depend on the number of threads. The first `trajectories` episodes are recorded.
pub fn evaluate(
    controller: &dyn Controller,
    task: &TaskConfig,
    world: &WorldConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
    trajectories: usize,
) -> Result<EvalReport> {
    if episodes == 0 || horizon == 0 {
        return Err(Error::config("evaluation needs at least one episode and one step"));
    }
    let results: Vec<EpisodeResult> = (0..episodes)
        .into_par_iter()
        .map(|e| run_episode(controller, task, world, horizon, derive_seed(seed, &[e as u64]), e < trajectories))
        .collect::<Result<_>>()?;

    let n = episodes as f64;
    let mut mean_distance = vec![0.0; horizon + 1];
    let mut capture_fraction = vec![0.0; horizon + 1];
    for r in &results {
        for (m, d) in mean_distance.iter_mut().zip(&r.distance) {
            *m += d / n;
        }
        if let Some(c) = r.capture_step {
            for f in &mut capture_fraction[c..] {
                *f += 1.0;
            }
        }
    }
    capture_fraction.iter_mut().for_each(|f| *f /= n);
    let episode_returns = results.iter().map(|r| r.team_return).collect();
    let trajectories = results.into_iter().filter_map(|r| r.trajectory).collect();
    Ok(EvalReport {
        controller: controller.name(),
        agents: task.agents,
        episodes,
        horizon,
        mean_distance,
        capture_fraction,
        episode_returns,
        trajectories,
    })
}

/// Evaluates one learned policy at several swarm sizes without retraining.
///
/// Fails for encoders whose input size depends on the neighbour count
/// (concatenation) when a size differs from the one it was built for.
pub fn cross_scale_eval(
    policy: &LearnedPolicy,
    task: &TaskConfig,
    world: &WorldConfig,
    sizes: &[usize],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let spec = &policy.net.spec().embedding;
    sizes
        .iter()
        .map(|&n| {
            if spec.is_concat() && n != task.agents {
                return Err(Error::Unsupported(format!(
                    "the concatenation encoder is tied to {} agents and cannot run with {n}",
                    task.agents
                )));
            }
            let t = TaskConfig {
                agents: n,
                ..task.clone()
            };
            evaluate(policy, &t, world, episodes, horizon, seed, 0)
        })
        .collect()
}

/// Writes a set of scale reports as `n,final_distance,final_capture_fraction,mean_return`.
pub fn write_scale_table<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["agents", "final_distance", "final_capture_fraction", "mean_return"])
        .map_err(csv_error)?;
    for r in reports {
        w.write_record([
            r.agents.to_string(),
            r.final_distance().to_string(),
            r.final_capture().to_string(),
            r.mean_return().to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
