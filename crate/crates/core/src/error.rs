use thiserror::Error;

/// Errors raised by bound evaluation, network handling and verification.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation
    /// (non-finite logits, a point outside its box, a zero probability).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was requested in a configuration it does not support
    /// (e.g. the two-class bound on a box with K != 2).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    /// The verification program could not be built or solved; this points at
    /// unsound intermediate bounds rather than a property of the network.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
