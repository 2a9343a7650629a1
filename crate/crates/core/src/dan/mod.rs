//! Diffusion-adversarial imputation model: a normalized, attention-equipped
//! generator trained against a discriminator that only ever sees samples
//! perturbed by the forward diffusion process.

mod checkpoint;
mod discriminator;
mod features;
mod generator;
mod loss;
mod train;

use thiserror::Error;

pub use checkpoint::{Checkpoint, ModelMetadata, Region, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use discriminator::{DiscOutput, Discriminator, DiscriminatorConfig, DISCRIMINATOR_GROUP};
pub use features::{trajectory_windows, usable_records, FeatureSpec, FeatureVector, TIME_FEATURES};
pub use generator::{Generator, GeneratorConfig, Scaler, GENERATOR_GROUP};
pub use loss::{d_loss, d_loss_tape, feature_matching_tape, g_loss, g_loss_tape, mse_tape, GLossParts};
pub(crate) use train::pack;
pub use train::{
    discriminator_inputs,
    feature_spec_for, train, train_with, Ablation, EpochStats, History, NoiseDraw, TrainConfig, TrainedModel,
};

use crate::gdc::GdcError;
use crate::revin::RevinError;
use crate::scheduler::ScheduleError;

#[derive(Debug, Error)]
pub enum DanError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("normalizer statistics are missing or non-finite")]
    UnfittedNormalizer,
    #[error("non-finite model input")]
    NonFiniteInput,
    #[error("model produced a non-finite output")]
    NonFiniteOutput,
    #[error("record lacks covariate `{0}`")]
    MissingCovariate(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training set has no usable records")]
    EmptyTrainingSet,
    #[error("loss diverged at epoch {epoch}, batch {batch}: L_D = {d_loss}, L_G = {g_loss}")]
    DivergedLoss {
        epoch: usize,
        batch: usize,
        d_loss: f64,
        g_loss: f64,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Revin(#[from] RevinError),
    #[error(transparent)]
    Gdc(#[from] GdcError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
