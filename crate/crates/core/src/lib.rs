//! Shapley effect estimation for regression via random forests.
//!
//! The pipeline: fit a CART forest, read variable-subset occurrence
//! frequencies off its paths, sample informative subsets, estimate each
//! subset's explained output variance by projecting the forest onto the
//! subset, then recover Shapley effects as the solution of a constrained
//! weighted least-squares problem over the sampled subsets.

pub mod combinatorics;
pub mod data;
pub mod error;
pub mod estimators;
pub mod forest;
pub mod ground_truth;
pub mod projection;
pub mod rng;
pub mod runner;
pub mod solver;
pub mod subsets;

pub use error::{Error, Result};
