//! YPose: yoga pose recognition from single RGB images.
//!
//! A compound-scaled EfficientNet (or MobileNet-V2) backbone, a stack of dense
//! refinement units and one softmax head per level of the pose hierarchy, all
//! built on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod blocks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod resample;
pub mod roi;
pub mod scaling;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{CheckpointError, Error, Result, TensorError};
pub use model::{Model, ModelSpec};
pub use tensor::{PrecisionMode, Tensor};
