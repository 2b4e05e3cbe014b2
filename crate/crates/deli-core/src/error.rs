use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum DeliError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index:?} out of bounds for shape {shape:?}")]
    IndexOutOfBounds { index: Vec<usize>, shape: Vec<usize> },

    #[error("rank error: {0}")]
    RankError(String),

    #[error("capacity exceeded: tensor with {entries} entries is over the {limit} entry guard")]
    CapacityExceeded { entries: u128, limit: u128 },

    #[error("coherence is undefined for the zero matrix")]
    UndefinedCoherence,

    #[error("sample range error: {0}")]
    SampleRange(String),

    #[error("degenerate slices: {0}")]
    DegenerateSlices(String),

    #[error("eigenvalue pairing failed for indices {unpaired:?} (tolerance {tolerance})")]
    PairingFailure { unpaired: Vec<usize>, tolerance: f64 },

    #[error("ill-conditioned eigenproblem: |imag| = {imag} exceeds tolerance at eigenvalue {index}")]
    Conditioning { index: usize, imag: f64 },

    #[error("rank overflow: basis grew past the target rank {target} (low-rank assumption violated)")]
    RankOverflow { target: usize },

    #[error("conflicting observations at index {index:?}: {a} vs {b}")]
    ConflictingObservation { index: Vec<usize>, a: f64, b: f64 },

    #[error("over-rank component pool: {found} distinct components exceed target rank {target}")]
    OverRank { found: usize, target: usize },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("linear algebra backend error: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for DeliError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        DeliError::Linalg(e.to_string())
    }
}
