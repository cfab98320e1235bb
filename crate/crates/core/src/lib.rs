//! Future-guided learning for chaotic time-series forecasting.
//!
//! A teacher trained on next-step prediction is frozen and its temperature
//! softened output distribution supervises a student that forecasts further
//! ahead. Targets are discretized into equal-width bins so both networks
//! emit categorical distributions of the same dimension.
//!
//! The crate bundles the data generator ([`mackey_glass`]), the binning
//! ([`quantizer`]), a small recurrent network with hand-written
//! backpropagation ([`neural`]), the distillation loss and training protocol
//! ([`fgl`]), Page–Hinkley drift adaptation ([`drift`]), evaluation metrics
//! ([`metrics`]), a scalar predictive-coding simulator ([`pcoding`]), file
//! formats ([`dataio`]) and the experiment grid driver ([`harness`]).

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod drift;
pub mod error;
pub mod fgl;
pub mod harness;
pub mod mackey_glass;
pub mod metrics;
pub mod neural;
pub mod parallel;
pub mod pcoding;
pub mod quantizer;

pub use error::{FglError, Result};

/// Toolkit version recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
