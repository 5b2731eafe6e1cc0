//! Reverse-mode differentiation over dense row-major tensors, with the fused
//! layer primitives used by the matching models: embedding lookup, character
//! convolution, LSTM recurrence, masked softmax, max/last pooling, layer
//! normalisation, dropout and the usual losses. Also ships an Adam optimizer
//! and a finite-difference gradient checker.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*64` and `*32`
//! aliases below name the concrete instantiations.

mod adam;
mod conv;
mod error;
mod gradcheck;
pub mod kernels;
mod lstm;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, LrSchedule};
pub use error::{NdError, Result};
pub use gradcheck::{gradient_check, gradient_check_params, GradCheckReport};
pub use lstm::LstmParams;
pub use params::{glorot_matrix, glorot_uniform, uniform, Param, ParamId, ParamStore};
pub use scalar::{lit, DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type AdamState64 = AdamState<f64>;
pub type AdamState32 = AdamState<f32>;
