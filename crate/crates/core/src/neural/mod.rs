//! Recurrent forecaster with hand-written gradients.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod rnn;

pub use adam::{AdamConfig, AdamState};
pub use loss::{cross_entropy, kl_div, softmax_t};
pub use rnn::{ForecastModel, ForwardTrace, GradientSet, ModelConfig, Parameters};
