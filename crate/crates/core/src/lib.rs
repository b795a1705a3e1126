//! Streaming online action detection with a circular window history.
//!
//! The core runs without `std`; enable the `parallel` feature for
//! multi-threaded matrix products.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cascade;
pub mod config;
pub mod cost;
pub mod decoder;
pub mod engine;
pub mod error;
pub mod history;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trend;
pub mod weights;

pub use cascade::{CascadeInput, CascadeRefiner};
pub use config::{default_config, ConfigError, ModelConfig, Violation};
pub use engine::{batch_forward, batch_forward_many, BatchOutput, Counters, Engine, RingSnapshot, SlidingBaseline, StepResult};
pub use error::ModelError;
pub use history::{CompressedBank, HistoryEncoder, HistoryWindow};
pub use model::{Model, Predictions};
pub use tensor::{AttentionMask, Matrix};
pub use trend::{build_shifted_banks, ProbabilitySequence, TrendEncoder, TrendWindow};
pub use weights::{init_weights, Tensor, WeightStore};
