use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors emitted by the numeric core, losses, models, and attacks.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A tensor or operation received a shape it cannot work with.
    InvalidDimension { context: &'static str, detail: String },
    /// Two tensors that must agree in shape do not.
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A NaN or infinity reached a place that requires finite values.
    NonFinite { context: &'static str },
    /// A class label lies outside the valid range.
    InvalidLabel { label: usize, classes: usize },
    /// A rank window violates 1 <= j <= k <= classes.
    InvalidWindow { j: usize, k: usize, classes: usize },
    /// Per-position logits and labels differ in length.
    InvalidSequence { logits: usize, labels: usize },
    /// An input does not match the model spec it was paired with.
    InvalidInput { context: &'static str, detail: String },
    /// A configuration value violates its invariant.
    InvalidConfig { context: &'static str, detail: String },
    /// A parameter name was inserted twice.
    DuplicateParameter { name: String },
    /// A parameter name is missing from the store.
    UnknownParameter { name: String },
    /// Training produced a non-finite loss.
    TrainingFailure { epoch: usize, detail: String },
    /// An attack produced a non-finite loss.
    AttackFailure { round: usize, detail: String },
    /// Checkpoint file carries an unsupported format version.
    CheckpointVersion { expected: u32, got: u32 },
    /// Checkpoint payload does not match its recorded digest.
    CheckpointChecksum,
    /// Checkpoint file ended before the declared payload.
    CheckpointTruncated,
    /// Checkpoint payload is structurally malformed.
    CheckpointFormat { detail: String },
    /// Underlying I/O failure, carried as a message to stay cloneable.
    Io { detail: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::InvalidDimension { context, detail } => {
                write!(f, "invalid dimension in {context}: {detail}")
            }
            CoreError::ShapeMismatch { context, left, right } => {
                write!(f, "shape mismatch in {context}: {left:?} vs {right:?}")
            }
            CoreError::NonFinite { context } => write!(f, "non-finite value in {context}"),
            CoreError::InvalidLabel { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            CoreError::InvalidWindow { j, k, classes } => {
                write!(f, "rank window ({j}, {k}) invalid for {classes} classes")
            }
            CoreError::InvalidSequence { logits, labels } => {
                write!(f, "sequence length mismatch: {logits} logit rows vs {labels} labels")
            }
            CoreError::InvalidInput { context, detail } => {
                write!(f, "invalid input for {context}: {detail}")
            }
            CoreError::InvalidConfig { context, detail } => {
                write!(f, "invalid config for {context}: {detail}")
            }
            CoreError::DuplicateParameter { name } => write!(f, "duplicate parameter '{name}'"),
            CoreError::UnknownParameter { name } => write!(f, "unknown parameter '{name}'"),
            CoreError::TrainingFailure { epoch, detail } => {
                write!(f, "training failed at epoch {epoch}: {detail}")
            }
            CoreError::AttackFailure { round, detail } => {
                write!(f, "attack failed at round {round}: {detail}")
            }
            CoreError::CheckpointVersion { expected, got } => {
                write!(f, "checkpoint version {got} unsupported (expected {expected})")
            }
            CoreError::CheckpointChecksum => write!(f, "checkpoint checksum mismatch"),
            CoreError::CheckpointTruncated => write!(f, "checkpoint file truncated"),
            CoreError::CheckpointFormat { detail } => write!(f, "malformed checkpoint: {detail}"),
            CoreError::Io { detail } => write!(f, "i/o error: {detail}"),
        }
    }
}

impl std::error::Error for CoreError {}

impl From<std::io::Error> for CoreError {
    fn from(err: std::io::Error) -> Self {
        if err.kind() == std::io::ErrorKind::UnexpectedEof {
            CoreError::CheckpointTruncated
        } else {
            CoreError::Io { detail: err.to_string() }
        }
    }
}
