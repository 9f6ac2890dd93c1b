use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("finite-difference gradient is NaN at coordinate {0}")]
    FdNan(usize),

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NotConverged { estimate: f64, iterations: usize },

    #[error("activation is not twice differentiable at {0}")]
    NonSmooth(f64),

    #[error("operation requires a smooth activation")]
    NonSmoothModel,

    #[error("loss overflow: log F = {0}")]
    Overflow(f64),

    #[error("zero weights: margin is undefined")]
    ZeroWeights,

    #[error("invalid parameter `{key}`: {reason}")]
    Invalid { key: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("loss is zero at point {0}; ratio undefined")]
    ZeroLoss(usize),

    #[error("gradient is zero; strong-growth ratio undefined")]
    ZeroGradient,

    #[error("leave-one-out objective is empty (n = 1)")]
    DegenerateLeaveOneOut,

    #[error("model is not convex in its parameters")]
    NonConvexModel,

    #[error("flow step rejected after {0} halvings")]
    StepRejected(usize),

    #[error("at sample point {index}: {source}")]
    AtPoint { index: usize, source: Box<Error> },

    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl Error {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_point(index: usize) -> impl FnOnce(Error) -> Error {
        move |source| Error::AtPoint {
            index,
            source: Box::new(source),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            reason: err.to_string(),
        }
    }
}
