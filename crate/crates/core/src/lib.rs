//! Multi-agent reinforcement learning for homogeneous swarms.
//!
//! The crate bundles a swarm simulator (rendezvous and pursuit evasion on
//! unicycle agents), permutation-invariant set encoders used as policy inputs,
//! a parameter-sharing trust-region policy optimizer and a handful of classical
//! controllers that serve as baselines.
//!
//! The numerical core ([`numkit`]) and the set encoders ([`policy`]) are generic
//! over the scalar type through [`Scalar`]; the simulator, trainer and
//! experiment layers run in `f64` and use the aliases exported here.

pub mod baselines;
pub mod controller;
pub mod env;
pub mod error;
pub mod experiment;
pub mod numkit;
pub mod policy;
mod scalar;
mod seed;
pub mod trpo;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use seed::derive_seed;

/// Dense matrix in the default precision.
pub type Matrix = numkit::Matrix<f64>;
/// Diagonal Gaussian in the default precision.
pub type DiagGaussian = numkit::DiagGaussian<f64>;
/// Flat parameter vector in the default precision.
pub type FlatParams = numkit::FlatParams<f64>;
/// Observation set as produced by the simulator.
pub type ObservationSet = env::ObservationSet<f64>;
