//! Importance-sampled and multiple-importance-sampled mini-batch gradient
//! estimation for a small built-in multilayer perceptron.

pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod importance;
pub mod linalg;
pub mod metric;
pub mod net;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
