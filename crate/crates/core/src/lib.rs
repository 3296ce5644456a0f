//! Similarity-based edge reconstruction against GNN node representations,
//! and the noisy-aggregation and edge randomized-response defenses.

pub mod attack;
pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod defense;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod graph;
pub mod linalg;
pub mod matrix;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
