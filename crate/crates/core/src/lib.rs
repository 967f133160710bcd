//! Confidence estimation trained by virtual training and testing.
//!
//! A small network scores whether a fixed task model's prediction is correct.
//! Training alternates between episodes that shift the correctness-label
//! balance and episodes that shift the input distribution, and updates the
//! estimator through a second-order meta-gradient.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod datagen;
pub mod episodes;
pub mod error;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Activation, Architecture, Batch, FeatureStatsVector, ParamVector};
