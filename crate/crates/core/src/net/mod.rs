//! A small 1-D CNN engine: tensors, layers, the time-distributed sleep
//! staging model, Adam training with a plateau scheduler, gradient checking
//! and the `SSW1` weight format.
//!
//! Activations use the `[batch, time, channels]` layout, row-major. Everything
//! is generic over [`Scalar`] so training runs in `f32` while gradient checks
//! run the same code in `f64`.

mod gradcheck;
mod io;
mod model;
mod ops;
mod optim;
mod tensor;
mod train;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;
use std::path::PathBuf;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport};
pub use io::{decode_ssw, encode_ssw, load_weights, save_weights, SSW_MAGIC};
pub use model::{ConvSpec, HeadConfig, Mode, Model, ModelConfig, ModelWeights};
pub use ops::{conv1d, dense, global_maxpool, maxpool1d, softmax_xent, spatial_dropout, Activation, Padding};
pub use optim::{adam_step, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
pub use tensor::Tensor;
pub use train::{evaluate, fit, predict_set, EpochLog, SequenceSet, TrainConfig, TrainHistory};

/// Floating-point element type of tensors.
pub trait Scalar: Float + FromPrimitive + Default + Debug + Display + Send + Sync + Sum + AddAssign + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 converts to every Scalar")
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("loss diverged at epoch {epoch}, batch {batch}{}", dump.as_ref().map(|p| format!("; weights dumped to {}", p.display())).unwrap_or_default())]
    DivergenceDetected {
        epoch: usize,
        batch: usize,
        dump: Option<PathBuf>,
    },
    #[error("not an SSW1 file")]
    BadMagic,
    #[error("truncated weight file: {0}")]
    TruncatedFile(&'static str),
    #[error("weights do not match config: {0}")]
    ShapeMismatchWithConfig(String),
    #[error("non-finite value in tensor {0}")]
    NonFiniteWeight(String),
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {0} out of range")]
    LabelOutOfRange(u8),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
