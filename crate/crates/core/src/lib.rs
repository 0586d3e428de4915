//! Two-stage pixel active learning for semantic segmentation under tiny
//! annotation budgets.
//!
//! A round first narrows the unlabeled pixels to a diverse candidate pool by
//! greedy kernel-coverage maximization (per image, then globally), then ranks
//! the candidates by an uncertainty score computed from a small classifier
//! head over stochastic feature draws. See the `examples/` directory for one
//! runnable program per capability.

pub mod acquisition;
pub mod config;
pub mod coverage;
pub mod error;
pub mod experiment;
pub mod feature_pool;
pub mod head;
pub mod kernel;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod seed;

pub use error::{Error, Result};
