//! Numerical toolkit for the ergodic control of multi-class M/M/N+M
//! queues in the Halfin–Whitt regime.
//!
//! - [`model`]: rates, the limiting diffusion and the running cost.
//! - [`queue`]: the prelimit CTMC, its scheduling policies and an exact
//!   stationary solver for small instances.
//! - [`hjb`]: the ergodic/discounted HJB on a grid via a monotone
//!   Markov-chain approximation, with spatial truncation and ε-perturbation.
//! - [`diffusion`]: Euler–Maruyama estimates of the ergodic cost.
//! - [`stability`]: Lyapunov certificates for the limiting drift.
//! - [`experiments`]: config-driven runs that write CSV artifacts.

// `!(a < b)` is used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod hjb;
pub mod model;
pub mod queue;
pub mod stability;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    build_limit_model, ClassParams, ConstantControl, DiffusionModel, HTilde, MarkovControl,
    QueueSystem, RunningCost, SimplexControl,
};
pub use stats::CostEstimate;
