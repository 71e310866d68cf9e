use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainerConfig;
use crate::env::{Action, ObservationSet, SwarmEnv, TaskConfig, WorldConfig};
use crate::numkit::DiagGaussian;
use crate::policy::PolicyNet;
use crate::{derive_seed, Error, Result};

/// One agent's experience at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: ObservationSet<f64>,
    /// Unclamped sample from the behaviour policy; the environment saw its clamped version.
    pub action: [f64; 2],
    pub log_prob: f64,
    pub reward: f64,
    pub done: bool,
    pub t: usize,
    pub agent: usize,
    pub worker: usize,
    /// Worker-local episode counter.
    pub episode: usize,
}

/// Transitions of one sampling phase plus the quantities derived from them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub transitions: Vec<Transition>,
    /// Discounted returns, filled by [`compute_returns`].
    pub returns: Vec<f64>,
    /// Standardized advantages, filled by [`compute_advantages`](super::compute_advantages).
    pub advantages: Vec<f64>,
    /// Undiscounted team return of every episode that terminated during sampling.
    pub episode_returns: Vec<f64>,
    /// Undiscounted team reward accumulated by episodes cut off at the end of sampling.
    pub partial_returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn observations(&self) -> Vec<&ObservationSet<f64>> {
        self.transitions.iter().map(|t| &t.observation).collect()
    }

    /// Average undiscounted return over completed episodes, or over the
    /// truncated ones when no episode finished.
    pub fn average_return(&self) -> f64 {
        let src = if self.episode_returns.is_empty() {
            &self.partial_returns
        } else {
            &self.episode_returns
        };
        if src.is_empty() {
            0.0
        } else {
            src.iter().sum::<f64>() / src.len() as f64
        }
    }

    fn concat(parts: Vec<Batch>) -> Batch {
        let mut out = Batch::default();
        for p in parts {
            out.transitions.extend(p.transitions);
            out.episode_returns.extend(p.episode_returns);
            out.partial_returns.extend(p.partial_returns);
        }
        out
    }
}

/// Sorted `k`-subset of `0..n` drawn without replacement; all of `0..n` when `k >= n`.
pub fn choose_agents<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut ids = index::sample(rng, n, k).into_vec();
    ids.sort_unstable();
    ids
}

fn worker_seed(seed: u64, worker: usize) -> u64 {
    derive_seed(seed, &[worker as u64])
}

/// Runs every worker for `steps_per_worker` environment steps and records one
/// transition per agent per step. Each worker starts a fresh episode and
/// resets whenever an episode ends. Deterministic in `seed`.
pub fn collect_rollouts(
    task: &TaskConfig,
    world: &WorldConfig,
    net: &PolicyNet,
    params: &[f64],
    config: &TrainerConfig,
    seed: u64,
) -> Result<Batch> {
    collect(task, world, net, params, config, seed, None)
}

/// Like [`collect_rollouts`] but each worker only records the transitions of
/// `k` agents drawn up front. Keeps exactly the transitions that
/// [`subsample_agents`] would keep from the full batch with the same draws.
pub fn collect_subsampled(
    task: &TaskConfig,
    world: &WorldConfig,
    net: &PolicyNet,
    params: &[f64],
    config: &TrainerConfig,
    seed: u64,
    k: usize,
) -> Result<Batch> {
    collect(task, world, net, params, config, seed, Some(k))
}

fn collect(
    task: &TaskConfig,
    world: &WorldConfig,
    net: &PolicyNet,
    params: &[f64],
    config: &TrainerConfig,
    seed: u64,
    keep: Option<usize>,
) -> Result<Batch> {
    if params.len() != net.num_params() {
        return Err(Error::shape("policy parameters", net.num_params(), params.len()));
    }
    let parts = (0..config.workers)
        .into_par_iter()
        .map(|w| {
            let kept = keep.map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[w as u64, u64::MAX]));
                choose_agents(task.agents, k, &mut rng)
            });
            run_worker(task, world, net, params, config.steps_per_worker, seed, w, kept.as_deref())
                .map_err(|e| Error::Worker {
                    worker: w,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch::concat(parts))
}

#[allow(clippy::too_many_arguments)]
fn run_worker(
    task: &TaskConfig,
    world: &WorldConfig,
    net: &PolicyNet,
    params: &[f64],
    steps: usize,
    seed: u64,
    worker: usize,
    kept: Option<&[usize]>,
) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(seed, worker));
    let mut env = SwarmEnv::new(task.clone(), *world, rng.random())?;
    let mut obs = env.observations()?;
    let n = env.num_agents();
    let log_std = net.log_std(params).to_vec();
    let bounds = task.action_bounds();
    let mut record = vec![kept.is_none(); n];
    if let Some(ids) = kept {
        for &i in ids {
            record[i] = true;
        }
    }

    let mut out = Batch::default();
    let mut episode = 0;
    let mut episode_reward = 0.0;
    for _ in 0..steps {
        let refs: Vec<&ObservationSet<f64>> = obs.iter().collect();
        let trace = net.forward_batch(params, &refs)?;
        let mut raw = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let d = DiagGaussian::new(trace.output().row(i).to_vec(), log_std.clone())?;
            let a = d.sample(&mut rng);
            let lp = d.log_prob(&a)?;
            actions.push(Action::new(a[0], a[1]).clamped(bounds));
            raw.push(([a[0], a[1]], lp));
        }
        let t = env.time();
        let outcome = env.step(&actions)?;
        if !outcome.reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        episode_reward += outcome.reward;
        for (i, (o, (a, lp))) in std::mem::take(&mut obs).into_iter().zip(raw).enumerate() {
            if record[i] {
                out.transitions.push(Transition {
                    observation: o,
                    action: a,
                    log_prob: lp,
                    reward: outcome.reward,
                    done: outcome.done,
                    t,
                    agent: i,
                    worker,
                    episode,
                });
            }
        }
        if outcome.done {
            out.episode_returns.push(episode_reward);
            episode_reward = 0.0;
            episode += 1;
            obs = env.reset(rng.random())?;
        } else {
            obs = outcome.observations;
        }
    }
    if env.time() > 0 {
        out.partial_returns.push(episode_reward);
    }
    Ok(out)
}

/// Keeps all transitions of `k` uniformly drawn agents per worker. Workers are
/// visited in ascending id order, each drawing from `rng`.
pub fn subsample_agents<R: Rng + ?Sized>(batch: &Batch, k: usize, agents: usize, rng: &mut R) -> Batch {
    let mut workers: Vec<usize> = batch.transitions.iter().map(|t| t.worker).collect();
    workers.sort_unstable();
    workers.dedup();
    let keep: BTreeMap<usize, Vec<usize>> = workers
        .into_iter()
        .map(|w| (w, choose_agents(agents, k, rng)))
        .collect();
    filter_agents(batch, &keep)
}

/// The subset of `batch` made of the listed agents of each worker.
pub fn filter_agents(batch: &Batch, keep: &BTreeMap<usize, Vec<usize>>) -> Batch {
    let mut out = Batch {
        episode_returns: batch.episode_returns.clone(),
        partial_returns: batch.partial_returns.clone(),
        ..Batch::default()
    };
    let has = |t: &Transition| keep.get(&t.worker).is_some_and(|ids| ids.binary_search(&t.agent).is_ok());
    for (i, t) in batch.transitions.iter().enumerate() {
        if has(t) {
            out.transitions.push(t.clone());
            if let Some(g) = batch.returns.get(i) {
                out.returns.push(*g);
            }
            if let Some(a) = batch.advantages.get(i) {
                out.advantages.push(*a);
            }
        }
    }
    out
}

/// Discounted Monte-Carlo returns `G_t = sum_{tau >= t} gamma^(tau - t) r_tau`
/// within each (worker, agent, episode) trajectory.
pub fn compute_returns(batch: &mut Batch, gamma: f64) {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in batch.transitions.iter().enumerate() {
        groups.entry((t.worker, t.agent, t.episode)).or_default().push(i);
    }
    let mut returns = vec![0.0; batch.len()];
    for idx in groups.values_mut() {
        idx.sort_by_key(|&i| batch.transitions[i].t);
        let mut g = 0.0;
        for &i in idx.iter().rev() {
            g = batch.transitions[i].reward + gamma * g;
            returns[i] = g;
        }
    }
    batch.returns = returns;
}

/// Shifts and scales `values` to mean 0 and standard deviation 1; leaves them
/// centred only when their variance vanishes.
pub fn standardize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std > 1e-12 {
            *v /= std;
        }
    }
}
