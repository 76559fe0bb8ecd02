use thiserror::Error;

/// Errors raised by the analysis, synthesis and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("system has no strict relative degree r <= {n}")]
    NoRelativeDegree { n: usize },

    #[error("symmetric part of the high-gain matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("basis completion for the Byrnes-Isidori transform failed")]
    DegenerateCompletion,

    #[error("internal dynamics are not Hurwitz (max real part {max_re:e})")]
    NotHurwitz { max_re: f64 },

    #[error("auxiliary error e_{index} has norm {norm} >= 1; the funnel is violated")]
    AlphaDomain { index: usize, norm: f64 },

    #[error("initial auxiliary error e_{index} has norm {norm} >= 1")]
    InitialConditionViolated { index: usize, norm: f64 },

    #[error("ZoH feedback called with vanishing error norm {0:e}")]
    DivisionByZero(f64),

    #[error("sequence of length {len} is too short for depth {depth}")]
    TooShort { len: usize, depth: usize },

    #[error("data is not persistently exciting of order {required}")]
    InsufficientPe { required: usize },

    #[error("regularized KKT matrix could not be factorized")]
    SingularKkt,

    #[error("funnel violated at t = {t}: {detail}")]
    FunnelViolation { t: f64, detail: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("trace format error: {0}")]
    Trace(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
