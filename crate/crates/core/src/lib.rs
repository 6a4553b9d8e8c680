//! Active simulation-based inference.
//!
//! A sequential, likelihood-free parameter estimator for black-box
//! simulators: each round trains an action-conditioned mixture density
//! network on simulations drawn from the current prior, picks the action
//! with the largest Monte-Carlo information-gain estimate, executes it on the
//! target environment, and turns the network's conditional density at the
//! real observation into the next prior.

pub mod cli;
pub mod density;
pub mod error;
pub mod inference;
pub mod math;
pub mod mdn;
pub mod metrics;
pub mod seed;
pub mod simproto;
pub mod simulators;

pub use error::{Error, Result};
