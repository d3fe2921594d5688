//! Training, evaluation, ablation and gradient checks for the cascade
//! amplifier regression network.

pub mod ablation;
pub mod config;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod train;

pub use config::{ExperimentConfig, LossVariant};
pub use error::{HarnessError, Result};
