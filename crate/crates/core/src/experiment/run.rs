use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{top_q_median, write_aggregate};
use super::config::{BaselineConfig, ExperimentConfig};
use super::eval::{cross_scale_eval, evaluate, write_scale_table, EvalReport};
use crate::baselines::{ConsensusReference, PdGains};
use crate::controller::{baseline_by_name, ConsensusController, Controller, LearnedPolicy};
use crate::env::{TaskConfig, WorldConfig};
use crate::policy::Checkpoint;
use crate::trpo::{csv_error, IterationRecord, LearningCurve, Trainer, TrainerConfig};
use crate::{derive_seed, Result};

pub const CONFIG_SNAPSHOT: &str = "config.snapshot.toml";
pub const CURVE_FILE: &str = "curve.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Builds the controller described by a baseline configuration.
pub fn build_baseline(cfg: &BaselineConfig) -> Result<Box<dyn Controller>> {
    if cfg.controller == "consensus" {
        let mut c = ConsensusController {
            reference: cfg.reference,
            ..ConsensusController::default()
        };
        if let Some(g) = cfg.gains {
            c.gains = g;
        }
        return Ok(Box::new(c));
    }
    baseline_by_name(&cfg.controller, cfg.gains)
}

/// Directory of trial `k`; the output root itself when there is one trial.
pub fn trial_dir(out: &Path, trials: usize, k: usize) -> PathBuf {
    if trials == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("trial_{k:02}"))
    }
}

/// Trainer seed of trial `k`; the configured seed itself when there is one trial.
pub fn trial_seed(seed: u64, trials: usize, k: usize) -> u64 {
    if trials == 1 {
        seed
    } else {
        derive_seed(seed, &[k as u64])
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub dir: PathBuf,
    pub curve: LearningCurve,
    pub eval: EvalReport,
}

/// Trains every trial of `cfg` under `out`, evaluates the final policies and,
/// for several trials, writes the top-q median curve to `out/curve.csv`.
///
/// `progress` is called after every iteration with the trial index.
pub fn train<F>(cfg: &ExperimentConfig, out: &Path, mut progress: F) -> Result<Vec<TrialOutcome>>
where
    F: FnMut(usize, &IterationRecord),
{
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_SNAPSHOT), cfg.to_toml()?)?;

    let mut outcomes = Vec::with_capacity(cfg.trials);
    for k in 0..cfg.trials {
        let dir = trial_dir(out, cfg.trials, k);
        let trainer_cfg = TrainerConfig {
            seed: trial_seed(cfg.trainer.seed, cfg.trials, k),
            ..cfg.trainer.clone()
        };
        outcomes.push(train_trial(cfg, trainer_cfg, &dir, |r| progress(k, r))?);
    }

    if cfg.trials > 1 {
        let curves: Vec<LearningCurve> = outcomes.iter().map(|o| o.curve.clone()).collect();
        let rows = top_q_median(&curves, cfg.top_q.min(cfg.trials))?;
        write_aggregate(&rows, BufWriter::new(File::create(out.join(CURVE_FILE))?))?;
    }
    Ok(outcomes)
}

fn train_trial<F>(cfg: &ExperimentConfig, trainer_cfg: TrainerConfig, dir: &Path, mut progress: F) -> Result<TrialOutcome>
where
    F: FnMut(&IterationRecord),
{
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let every = trainer_cfg.checkpoint_every;
    let iterations = trainer_cfg.iterations;
    let mut trainer = Trainer::new(cfg.task.clone(), cfg.world, cfg.policy_spec(), trainer_cfg)?;
    let curve = trainer.run(iterations, |t, report| {
        progress(&report.record);
        if every > 0 && t.iteration() % every == 0 {
            t.checkpoint()
                .save(ckpt_dir.join(format!("iter_{:05}.ckpt", t.iteration())))?;
        }
        Ok(())
    })?;
    curve.save(dir.join(CURVE_FILE))?;
    let ckpt = trainer.checkpoint();
    ckpt.save(dir.join(FINAL_CHECKPOINT))?;

    let policy = LearnedPolicy::from_checkpoint(&ckpt, cfg.eval.stochastic)?;
    let eval = evaluate_into(&policy, &cfg.task, &cfg.world, cfg, dir)?;
    Ok(TrialOutcome {
        dir: dir.to_path_buf(),
        curve,
        eval,
    })
}

/// Evaluates `controller` with the settings in `cfg.eval` and writes `eval/`,
/// `traj/` and, for learned policies with scales set, `eval/scales.csv`.
pub fn evaluate_into(
    controller: &dyn Controller,
    task: &TaskConfig,
    world: &WorldConfig,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<EvalReport> {
    let e = &cfg.eval;
    let horizon = e.horizon_for(task);
    let report = evaluate(controller, task, world, e.episodes, horizon, e.seed, e.trajectories)?;
    report.write_dir(&dir.join("eval"))?;
    report.write_trajectories(&dir.join("traj"))?;
    Ok(report)
}

/// Loads a checkpoint and evaluates it, including the cross-scale table when
/// `cfg.eval.scales` is set.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    task: &TaskConfig,
    world: &WorldConfig,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<EvalReport> {
    let policy = LearnedPolicy::from_checkpoint(ckpt, cfg.eval.stochastic)?;
    let report = evaluate_into(&policy, task, world, cfg, out)?;
    if !cfg.eval.scales.is_empty() {
        let e = &cfg.eval;
        let reports = cross_scale_eval(&policy, task, world, &e.scales, e.episodes, e.horizon_for(task), e.seed)?;
        write_scale_table(&reports, BufWriter::new(File::create(out.join("eval").join("scales.csv"))?))?;
    }
    Ok(report)
}

/// Runs the configured baseline controller and writes its evaluation to `out`.
pub fn run_baseline(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_SNAPSHOT), cfg.to_toml()?)?;
    let controller = build_baseline(&cfg.baseline)?;
    evaluate_into(controller.as_ref(), &cfg.task, &cfg.world, cfg, out)
}

/// Candidate consensus gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainGrid {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub d2: Vec<f64>,
}

impl Default for GainGrid {
    fn default() -> Self {
        GainGrid {
            k1: vec![0.25, 0.5, 1.0, 2.0],
            k2: vec![0.25, 0.5, 1.0],
            d2: vec![0.5, 1.0, 2.0],
        }
    }
}

impl GainGrid {
    pub fn candidates(&self) -> Vec<PdGains> {
        let mut out = Vec::new();
        for &k1 in &self.k1 {
            for &k2 in &self.k2 {
                for &d2 in &self.d2 {
                    out.push(PdGains { k1, k2, d2 });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainResult {
    pub k1: f64,
    pub k2: f64,
    pub d2: f64,
    pub final_distance: f64,
    /// Steps after `t = 100` at which the mean distance grew.
    pub increases_after_100: usize,
}

/// Grid search over consensus gains; results sorted by final distance, then by
/// the number of late increases.
pub fn tune_gains(
    task: &TaskConfig,
    world: &WorldConfig,
    grid: &GainGrid,
    reference: ConsensusReference,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<GainResult>> {
    let candidates = grid.candidates();
    for g in &candidates {
        g.validate()?;
    }
    let mut results: Vec<GainResult> = candidates
        .par_iter()
        .map(|&gains| {
            let c = ConsensusController { gains, reference };
            let r = evaluate(&c, task, world, episodes, horizon, seed, 0)?;
            Ok(GainResult {
                k1: gains.k1,
                k2: gains.k2,
                d2: gains.d2,
                final_distance: r.final_distance(),
                increases_after_100: r.distance_increases_after(100, 1e-9),
            })
        })
        .collect::<Result<_>>()?;
    results.sort_by(|a, b| {
        a.final_distance
            .total_cmp(&b.final_distance)
            .then(a.increases_after_100.cmp(&b.increases_after_100))
    });
    Ok(results)
}

pub fn write_gain_results(results: &[GainResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in results {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
