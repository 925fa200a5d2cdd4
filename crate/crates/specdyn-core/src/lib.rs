//! Estimation of low-rank Markov transition kernels from trajectory data.
//!
//! The pipeline: simulate (or load) a time series, expand states in an
//! orthogonalized random-feature basis, accumulate the feature-space
//! projection matrix of the joint law of consecutive states, denoise it by
//! rank truncation, derive a spectral state embedding whose Euclidean
//! geometry matches diffusion distance, and cluster the embedded states
//! into metastable sets. Brute-force finite-state and quadrature oracles
//! back the test suite.

pub mod clustering;
pub mod embedding;
pub mod error;
pub mod estimator;
pub mod features;
pub mod numerics;
pub mod oracle;
pub mod simulator;

pub use error::{Error, Result};
