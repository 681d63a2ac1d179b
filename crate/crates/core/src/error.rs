use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("at least {required} labels are required, got {got}")]
    EmptyLabels { required: usize, got: usize },

    #[error("non-finite label at index {0}")]
    NonFiniteLabel(usize),

    #[error("automatic bandwidth is undefined: all labels are identical")]
    DegenerateBandwidth,

    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(f64),

    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("non-finite input at index {0}")]
    NonFiniteInput(usize),

    #[error("invalid soft-sort epsilon: {0}")]
    InvalidEpsilon(f64),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty input")]
    EmptyInput,

    #[error("zero-variance input: correlation is undefined")]
    ConstantInput,

    #[error("mean occurrence probability of the sample is zero")]
    ZeroMeanProbability,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),

    #[error("backward requires a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph")]
    DoubleBackward,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    DivergenceDetected { epoch: usize, batch: usize, loss: f64 },

    #[error("signal has zero standard deviation")]
    ConstantSignal,

    #[error("labels are constant: residual regression is undefined")]
    ConstantLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing checkpoint for arm `{arm}` at {path}")]
    MissingCheckpoint { arm: String, path: PathBuf },

    #[error("no dataset at {0}; run `generate` first")]
    MissingDataset(PathBuf),

    #[error("{path} does not match the current configuration: {reason}")]
    Stale { path: PathBuf, reason: String },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
