//! Error types. Validation errors map to CLI exit code 2, numerical
//! failures to exit code 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- validation ---
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },
    #[error("kernel wraps: support radius {support} exceeds half-period {half_period}")]
    KernelWraps { support: f64, half_period: f64 },
    #[error("grid cells per axis must be a power of two >= 4, got {0}")]
    NotPowerOfTwo(usize),
    #[error("component count mismatch: field has {field}, map expects {map}")]
    KappaMismatch { field: usize, map: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("d out of range: {0} (must be 1, 2 or 3)")]
    DimOutOfRange(usize),

    // --- numerical ---
    #[error("cg failed to converge: residual {residual:.3e} after {iterations} iterations")]
    CgNoConvergence { residual: f64, iterations: usize },
    #[error("eigensolver stagnated: {0}")]
    EigenStagnation(String),
    #[error("sign undetermined: reference nearly M-orthogonal to eigenvector (|<g,Mr>| = {0:.3e})")]
    SignUndetermined(f64),
    #[error("repeated eigenvalue at index {0}: spectral inversion undefined")]
    RepeatedEigenvalue(usize),
    #[error("nonzero-mean right-hand side for periodic Poisson problem: mean {0:.3e}")]
    NonzeroMeanRhs(f64),
    #[error("degenerate element in mesh: {0}")]
    DegenerateElement(String),
    #[error("degenerate eigenvalue index {0}: flagged as numerically multiple")]
    DegenerateIndex(usize),
    #[error("singular covariance: condition estimate {0:.3e}")]
    SingularCovariance(f64),
    #[error("too many realization failures: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },
    #[error("numerical error: {0}")]
    Numerical(String),

    // --- io ---
    #[error("bad magic: expected \"SHOM\"")]
    BadMagic,
    #[error("unsupported field file version {0}")]
    BadVersion(u8),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("csv header mismatch: {0}")]
    HeaderMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// CLI exit code class: 2 validation, 3 numerical/io.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. }
            | Error::KernelWraps { .. }
            | Error::NotPowerOfTwo(_)
            | Error::KappaMismatch { .. }
            | Error::GridMismatch(_)
            | Error::SizeMismatch(_)
            | Error::DimOutOfRange(_) => 2,
            _ => 3,
        }
    }
}
