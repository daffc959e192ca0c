//! Actor-critic reinforcement learning whose exploration is driven by DDP
//! trajectory optimization, with a critic trained on both cost-to-go targets
//! and the value gradients produced by the DDP backward pass.
//!
//! Module map:
//!
//! * [`task`]: benchmark dynamics and costs with analytic derivatives.
//! * [`ddp`]: the trajectory optimizer and value-gradient extraction.
//! * [`net`]: dense networks, Sobolev/actor losses, Adam, checkpoints.
//! * [`buffer`]: replay buffer of TD(L) transitions.
//! * [`trainer`]: the episode/update loop.
//! * [`eval`]: hard-region evaluation and the activation comparison.
//! * [`config`] and [`cli`]: run configuration and command-line driver.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod rng;
pub mod task;
pub mod ddp;
pub mod net;
pub mod buffer;
pub mod trainer;
pub mod eval;
pub mod gradcheck;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
