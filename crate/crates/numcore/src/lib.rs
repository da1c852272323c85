//! Dense f64 tensors, a reverse-mode tape, Adam, and finite-difference checks.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NumError, Result};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use nn::{glorot, Activation, Linear, Mlp};
pub use params::{ParamId, ParamStore};
pub use rng::RngStreams;
pub use tape::{sigmoid, Gradients, Op, ParamGrads, Tape, Var, MASKED_LOGIT};
pub use tensor::Tensor;
