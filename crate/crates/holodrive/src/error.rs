use thiserror::Error;

/// Unified error type for the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hilbert layout: {0}")]
    InvalidLayout(String),
    #[error("operator is not hermitian (max |A - A^dag| = {max_dev:.3e})")]
    NotHermitian { max_dev: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("state is not normalized (norm = {norm:.6e})")]
    NotNormalized { norm: f64 },
    #[error("unknown factor label `{0}`")]
    UnknownLabel(String),
    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("eigenvalue group structure changed across the finite-difference stencil at t = {t}: {detail}")]
    LevelCrossing { t: f64, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("control loop does not close: dark frame at the end deviates from the start by {deviation:.3e}")]
    OpenLoop { deviation: f64 },
    #[error("laser program infeasible: {0}")]
    Infeasible(String),
    #[error("integration failure: {0}")]
    IntegrationFailure(String),
    #[error("linear algebra backend failure: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
