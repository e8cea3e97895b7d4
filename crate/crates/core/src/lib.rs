//! Deep linear matrix sensing: trace-of-Hessian machinery, induced
//! regularizers, RIP estimation, label-noise SGD and convex baselines.

pub mod error;
pub mod linalg;
pub mod measurements;
pub mod metrics;
pub mod network;
pub mod regularizers;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use linalg::Mat;
