use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),

    #[error("{algorithm} failed to converge within {sweeps} sweeps")]
    NoConvergence { algorithm: &'static str, sweeps: usize },

    #[error("matrix norm {0:e} exceeds the exponential's accepted range")]
    ExpOverflow(f64),

    #[error("matrix is singular")]
    Singular,

    #[error("columns are not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("vector lies on the null cone (|x^T A x| = {value:e} < {threshold:e})")]
    NearNullCone { value: f64, threshold: f64 },

    #[error("reflection direction is null (|w^T A w| = {value:e} < {threshold:e})")]
    NearNullDirection { value: f64, threshold: f64 },

    #[error("quadratic form is the zero matrix")]
    ZeroForm,

    #[error("quadratic form is singular; an invertible form is required")]
    SingularForm,

    #[error("alignment precondition failed: {0}")]
    AlignmentPrecondition(String),

    #[error("pseudonorms differ: {0} vs {1}")]
    NormMismatch(f64, f64),

    #[error("group membership certification failed (residual {0:e})")]
    NotMember(f64),

    #[error("autodiff: {0}")]
    Graph(String),

    #[error("training diverged at epoch {epoch}: loss is NaN (null-cone guard fired: {guard_fired})")]
    NanLoss { epoch: usize, guard_fired: bool },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
