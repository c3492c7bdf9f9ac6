//! Late-fusion depth completion networks, the auxiliary pose network,
//! their training loop and inference.
//!
//! Layer layouts live in [`arch`] as data; [`network`] builds them on a
//! [`Graph`](crate::diffgraph::Graph). [`train`] runs Adam on the
//! unsupervised objective and [`infer`] refines a scaffold with a trained
//! checkpoint.

pub mod arch;
pub mod infer;
pub mod network;
pub mod optim;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffgraph::checkpoint::CheckpointError;
use crate::diffgraph::GraphError;
pub(crate) use crate::parallel::parallel_map;

pub use arch::{audit, ArchitectureTable, LayerAudit, LayerKind, LayerSpec, TableAudit};
pub use infer::{infer, Predictor};
pub use network::{DepthNetwork, PoseNetwork};
pub use optim::{Adam, LrSchedule};
pub use train::{train, PoseSource, StepRecord, TrainConfig, TrainReport, TrainingSample, TrainingSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad resolution {width}×{height}: both sides must be positive multiples of 32")]
    BadResolution { width: usize, height: usize },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("loss diverged at step {step}")]
    DivergedLoss {
        step: usize,
        /// JSON diagnostic: loss terms and per-parameter value/gradient norms.
        dump: String,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    Vgg11,
    Vgg8,
}

impl EncoderVariant {
    pub fn table(self) -> &'static ArchitectureTable {
        match self {
            EncoderVariant::Vgg11 => &arch::VGG11_ENCODER,
            EncoderVariant::Vgg8 => &arch::VGG8_ENCODER,
        }
    }
}

/// How the pose network's three rotation outputs become a rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseParameterization {
    /// Exponential coordinates through the SO(3) exponential map.
    Exponential,
    /// Euler angles composed as `Rz · Ry · Rx`.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderVariant,
    pub pose: PoseParameterization,
    pub height: usize,
    pub width: usize,
}

impl ModelConfig {
    pub fn new(encoder: EncoderVariant, pose: PoseParameterization, height: usize, width: usize) -> Self {
        Self { encoder, pose, height, width }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_resolution(self.height, self.width)
    }
}

/// Five stride-2 stages require both sides to be multiples of 32.
pub fn check_resolution(height: usize, width: usize) -> Result<(), ModelError> {
    if height == 0 || width == 0 || !height.is_multiple_of(32) || !width.is_multiple_of(32) {
        return Err(ModelError::BadResolution { width, height });
    }
    Ok(())
}
