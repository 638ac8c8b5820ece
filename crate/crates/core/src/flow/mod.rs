//! Conditional rectified-flow generator.
//!
//! Training regresses a vector field onto `endpoint - x0` along the linear
//! interpolation path; sampling integrates that field backward from a
//! prior-blended initialization. Every gradient in here is hand-derived and
//! validated against central finite differences.

mod checkpoint;
mod featurize;
mod gradcheck;
mod layers;
mod loss;
mod mat;
mod model;
mod sampler;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use featurize::{featurize_image, GrayImage};
pub use gradcheck::{grad_check, GradCheckReport, GradCheckable, LinearField};
pub use layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use loss::{cfm_loss, cfm_loss_and_grads, forward_interpolate, CfmExample, ExactField, VectorField};
pub use mat::Mat;
pub use model::{DualBlock, FlowConfig, FlowModel, ModelGrads};
pub use sampler::{sample, sample_field};
pub use train::{train, LossTrace, PriorContext, TrainItem, TrainSchedule};

use thiserror::Error;

use crate::latent::LatentError;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite values in {location}")]
    NonFinite { location: String },
    #[error("condition token set is empty")]
    EmptyCondition,
    #[error("timestep {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("sampler needs steps >= 1")]
    ZeroSteps,
    #[error("training diverged at step {step}: loss {loss} vs initial {initial}")]
    TrainingDiverged {
        step: usize,
        loss: f64,
        initial: f64,
    },
    #[error("image dims {width}x{height} not divisible by patch {patch}")]
    IndivisiblePatch { width: u32, height: u32, patch: u32 },
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

/// Where a condition stream came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionSource {
    Top,
    Frontal,
}

/// A non-empty, finite sequence of condition token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTokens {
    pub tokens: Mat,
    pub source: ConditionSource,
}

impl ConditionTokens {
    pub fn new(tokens: Mat, source: ConditionSource) -> Result<Self, FlowError> {
        if tokens.rows == 0 || tokens.cols == 0 {
            return Err(FlowError::EmptyCondition);
        }
        if !tokens.is_finite() {
            return Err(FlowError::NonFinite {
                location: "condition tokens".into(),
            });
        }
        Ok(ConditionTokens { tokens, source })
    }

    pub fn top(tokens: Mat) -> Result<Self, FlowError> {
        Self::new(tokens, ConditionSource::Top)
    }

    pub fn frontal(tokens: Mat) -> Result<Self, FlowError> {
        Self::new(tokens, ConditionSource::Frontal)
    }
}
