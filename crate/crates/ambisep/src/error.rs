use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// An operation received tensors whose shapes do not fit together.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Backward was requested from a non-scalar node.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// Spherical-harmonic degree/mode out of range.
    #[error("invalid spherical harmonic indices: l={l}, m={m}")]
    InvalidShIndex { l: i64, m: i64 },

    /// A plane-wave grid produced a rank-deficient encoding matrix.
    #[error("plane-wave matrix is rank deficient (condition {cond:.3e}); choose a different grid")]
    RankDeficientGrid { cond: f64 },

    /// Room/source geometry violates the simulator's constraints.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// A silent (zero-power) source or reference signal where power is required.
    #[error("zero-power signal: {0}")]
    ZeroPower(String),

    /// Configuration values out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training diverged; carries enough context to reproduce the batch.
    #[error("non-finite loss at epoch {epoch}, step {step} (batch seed {batch_seed})")]
    NonFiniteLoss { epoch: usize, step: usize, batch_seed: u64 },

    /// Checkpoint container malformed or of an unsupported version.
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    /// Audio file handling.
    #[error("audio error: {0}")]
    Audio(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
