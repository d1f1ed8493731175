//! Separation-utility frontiers on the information plane.
//!
//! The crate covers exact information quantities on finite joints, brute-force
//! frontier oracles, plug-in conditional mutual information estimators,
//! CMI-regularized training of a small MLP, and the fairness metrics used to
//! evaluate it.

pub mod error;
pub mod finite_dist;

pub use error::{Error, Result};
pub mod data;
pub mod estimators;
pub mod frontier;
pub mod metrics;
pub mod neural;
pub mod seeding;
pub mod trainer;
