//! Unbalanced Haar wavelet trees: greedy and Bayesian fitting on grids,
//! tensors and the sphere, with boosting, forests and quantile intervals.

pub mod bayes;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod partition;
pub mod rng;
pub mod sphere;
pub mod stats;
pub mod synth;
pub mod verify;

pub use error::{Result, UhwtError};
