//! Parameter-sharing trust-region policy optimization.
//!
//! Every agent runs the same stochastic policy. Workers sample in parallel,
//! a random subset of agents per worker feeds the update, and the step solves
//! `F s = g` with conjugate gradients before a backtracking line search under
//! the KL bound.

mod batch;
mod config;
mod trainer;
mod update;
mod value;

pub use batch::{
    choose_agents, collect_rollouts, collect_subsampled, compute_returns, filter_agents, standardize,
    subsample_agents, Batch, Transition,
};
pub use config::{TrainerConfig, WORKERS_ENV};
pub(crate) use trainer::csv_error;
pub use trainer::{IterationRecord, IterationReport, LearningCurve, Trainer, CURVE_HEADER};
pub use update::{
    fisher_vector_product, mean_kl, mean_kl_gradient, network_outputs, surrogate_gradient, surrogate_loss,
    trpo_update, FisherOperator, UpdateStats, UpdateStatus,
};
pub use value::{compute_advantages, fit_value, predict_returns, renormalize, return_statistics, Adam, ValueFit};
