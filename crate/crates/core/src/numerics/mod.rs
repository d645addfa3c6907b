//! Dense-tensor math with hand-written gradients: 1D convolution, affine
//! layers, ReLU, AdamW and a warmup + cosine learning-rate schedule.
//!
//! Everything runs in `f64`. Matrix products go through `matrixmultiply`.

mod conv;
mod dense;
pub mod gradcheck;
mod optim;
mod schedule;
mod tensor;

pub use conv::{conv1d_forward, Conv1d, Conv1dGeometry, ConvGrads};
pub use dense::{affine_forward, relu_forward, Affine, AffineGrads, Relu};
pub use optim::{AdamW, ParamId, ParamStore};
pub use schedule::LrSchedule;
pub use tensor::Tensor2;
