//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the simulator, data pipeline, attacks, and detector.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or index mismatch (wrong vector length, qubit out of range, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// Input violates a mathematical precondition (empty batch, all-zero vector, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration (dangling parameter index, out-of-range fraction, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed file contents (bad IDX magic, unparsable field).
    #[error("format error: {0}")]
    Format(String),

    /// File or buffer shorter than its header promises.
    #[error("length error: {0}")]
    Length(String),

    /// Data matrix is rank-deficient for the requested decomposition.
    #[error("rank error: covariance rank < {required}, deficient at dimension {deficient}")]
    Rank { required: usize, deficient: usize },

    /// A parameterized gate outside the RX/RY/RZ family was differentiated.
    #[error("unsupported gate for gradient: {0}")]
    UnsupportedGate(String),

    /// Training diverged (loss became non-finite).
    #[error("training error: loss diverged at epoch {epoch}")]
    Training { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
