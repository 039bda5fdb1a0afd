//! Video violence classification with a spatio-temporal transformer.
//!
//! The crate is split into four layers:
//!
//! * [`tensor`]: dense tensors, a reverse-mode gradient tape, finite
//!   difference checking and the checkpoint format.
//! * [`vision`]: frame sampling, letterboxing, per-clip augmentation, the
//!   synthetic dataset and the `.vclip` container.
//! * [`model`]: tubelet embedding, the pre-norm encoder and the head.
//! * [`train`]: loss, optimizer, training loop and evaluation metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). Training and
//! inference normally run in `f32`; gradient checks use `f64`.
//!
//! ```
//! use vividet::{Model32, ModelConfig, SyntheticSpec, generate_synthetic};
//!
//! let spec = SyntheticSpec { clips_per_class: 1, frame_count: 8, height: 16, width: 16, ..Default::default() };
//! let clips = generate_synthetic(&spec).unwrap();
//! let model = Model32::new(ModelConfig::tiny(), 0).unwrap();
//! let p = model.classify(&clips[0]).unwrap();
//! assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
//! ```

// Range checks are written `!(x >= lo)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bytes;
pub mod error;
pub mod model;
pub mod rng;
mod scalar;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelParams};
pub use scalar::Scalar;
pub use tensor::{GradTape, Tensor};
pub use train::{evaluate, train, EvalReport, TrainConfig};
pub use vision::{generate_synthetic, AugmentSpec, Label, SyntheticSpec, VideoClip};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
