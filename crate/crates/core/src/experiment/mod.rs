//! Experiment orchestration: configuration files, training runs with
//! checkpoints, evaluation, multi-trial aggregation and gain search.
//!
//! A training run writes
//!
//! ```text
//! out/
//!   config.snapshot.toml
//!   curve.csv                 per-iteration record (top-q median for several trials)
//!   final.ckpt
//!   checkpoints/iter_NNNNN.ckpt
//!   eval/{distance,capture,returns}.csv, eval/summary.json
//!   traj/episode_NNN.jsonl
//! ```
//!
//! With several trials each one gets its own `trial_NN/` directory.

mod aggregate;
mod config;
mod eval;
mod run;

pub use aggregate::{median, select_top_q, top_q_median, write_aggregate};
pub use config::{BaselineConfig, EvalConfig, ExperimentConfig, PolicyConfig};
pub use eval::{cross_scale_eval, evaluate, run_episode, write_scale_table, EpisodeResult, EvalReport};
pub use run::{
    build_baseline, evaluate_checkpoint, evaluate_into, run_baseline, train, trial_dir, trial_seed,
    tune_gains, write_gain_results, GainGrid, GainResult, TrialOutcome, CONFIG_SNAPSHOT, CURVE_FILE,
    FINAL_CHECKPOINT,
};
