//! Randomized low-rank projected optimization.
//!
//! Each step sketches the gradient estimate from the left (`H_B G`) with
//! probability `p` or from the right (`G H_A`) otherwise, and moves
//! `W <- W - gamma * sketch`. Estimators range from plain gradients to
//! variance-reduced and compressed multi-client schemes.

pub mod compression;
pub mod config;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod federated;
pub mod linalg;
pub mod optimizer;
pub mod output;
pub mod problems;
pub mod rng;
pub mod sketch;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::ParamMatrix;
