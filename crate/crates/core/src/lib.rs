//! Single-pass elevation estimation from SAR amplitude and phase with a
//! fully-convolutional encoder-decoder, implemented from scratch on CPU.
//!
//! Modules, bottom-up: [`tensor`] storage and GEMM, [`ops`] layer primitives
//! with hand-written backward passes, [`model`] for the network and
//! checkpoints, [`optim`] for Adam, [`data`] for raster tiles and windows,
//! [`metrics`], [`synth`] for synthetic terrain, and [`train`].

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Architecture, Checkpoint, DemNet, Mode, ModelParams};
pub use optim::{AdamConfig, AdamState};
pub use tensor::{Scalar, Tensor};
pub use train::{TrainConfig, Trainer};
