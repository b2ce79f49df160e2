//! Core of a black-box evasion attack testbed for grid contingency detectors.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numerical piece
//! of the pipeline:
//!
//! - [`trace`]: labeled per-bus voltage traces from a damped voltage-sag model.
//! - [`gabor`]: Gabor kernels, sparse-convolution noise fields and the mapping
//!   from a measurement frame to per-bus perturbations.
//! - [`nn`]: a small fully-connected network engine with hand-written
//!   backpropagation and Adam.
//! - [`detector`]: the sliding-window contingency classifier.
//! - [`env`]: the attack MDP (constraint projection, misdirection, reward).
//! - [`ddpg`]: the actor-critic agent that picks the kernel hyper-parameters.
//! - [`eval`]: episode rollouts and attack metrics.
//!
//! File formats, configuration and the command-line front end live in the
//! `gabor-evasion` companion crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ddpg;
pub mod detector;
pub mod env;
pub mod error;
pub mod eval;
pub mod gabor;
pub mod nn;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
