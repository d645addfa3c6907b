//! Latent-space compression of high-frequency robot action chunks.
//!
//! The crate is organised bottom-up:
//!
//! - [`types`] and [`metrics`]: action chunks, profiles and the trajectory
//!   metrics (deviation, acceleration, jerk, exceed count, overlap diff,
//!   boundary gap).
//! - [`numerics`]: a small dense-tensor toolkit with hand-written gradients,
//!   AdamW and a warmup + cosine schedule.
//! - [`codec`]: the 1D-conv encoder / MLP decoder VAE over action chunks.
//! - [`synth`]: synthetic demonstration corpus and policy emulators.
//! - [`continuity`]: chunk-switching strategies, including Reuse-then-Refine.
//! - [`sim`]: a deterministic tick-level simulator of asynchronous execution.

pub mod codec;
pub mod continuity;
pub mod csvio;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod sim;
pub mod synth;
pub mod types;

pub use codec::{GaussianLatent, SampleMode, TrainHyper, VaeConfig, VaeModel};
pub use continuity::{Strategy, TransitionContext};
pub use error::{Error, Result};
pub use metrics::{ChannelSet, GroupPair, MetricReport, TimeUnit};
pub use numerics::Tensor2;
pub use synth::{NoiseKind, NoiseModel, TaskKind, TaskSpec};
pub use types::{ActionChunk, ActionProfile, LatentChunk, Trajectory};
