//! Engine for training a classifier on a mix of real and generated data while
//! estimating, online, how much each batch of generated samples actually helps.
//!
//! The pipeline: a synthetic long-tailed world ([`datastream`]) feeds a small
//! MLP ([`model`]); per-batch contribution scores ([`estimator`]) drive an
//! accept/reject gate ([`gate`]); the runners in [`trainer`] tie it together
//! into streaming, baseline, random-dropout, and offline-filter experiments.

pub mod datastream;
pub mod error;
pub mod estimator;
pub mod gate;
pub mod model;
pub mod numerics;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{GradientVector, ParameterVector};
