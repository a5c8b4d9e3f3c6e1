use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (max |A - A^H| = {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error("matrix has eigenvalue {value:.3e} below the allowed floor {floor:.3e}")]
    NegativeEigenvalue { value: f64, floor: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Hilbert-space dimension {dim} exceeds dense limit {limit}")]
    DenseLimit { dim: usize, limit: usize },

    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("trace violation at t = {t}: |Tr(rho) - 1| = {deviation:.3e}")]
    TraceViolation { t: f64, deviation: f64 },

    #[error("rank control exhausted its retry budget at t = {t}: {reason}")]
    RetryBudget { t: f64, reason: String },

    #[error("truncation threshold {eps_max:.3e} unreachable (best error {best:.3e})")]
    TruncationUnreachable { eps_max: f64, best: f64 },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn dim_mismatch(
    context: &'static str,
    expected: impl std::fmt::Debug,
    got: impl std::fmt::Debug,
) -> Error {
    Error::DimensionMismatch {
        context,
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}
