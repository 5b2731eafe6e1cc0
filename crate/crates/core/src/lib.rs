//! Persona fusion for multi-turn response selection: corpus handling,
//! recurrent and transformer matchers, and the training/evaluation harness.

pub mod corpus;
pub mod encoders;
mod error;
pub mod fusion;
pub mod harness;
pub mod matchers;
pub mod rng;

pub use error::{Error, Result};
pub use ndcore;

pub type Model64 = matchers::Model<f64>;
pub type Model32 = matchers::Model<f32>;
pub type TrainOutcome64 = harness::TrainOutcome<f64>;
pub type TrainOutcome32 = harness::TrainOutcome<f32>;
