use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PkbError>;

/// Coarse classification of failures, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum PkbError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("gene weights sum to zero over the genes of {0}")]
    DegenerateWeights(String),

    #[error("pathway {0} has no genes present in the data")]
    EmptyPathway(String),

    #[error("no usable pathways")]
    NoPathways,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate outcome: {0}")]
    DegenerateOutcome(String),

    #[error("clinical design is ill-conditioned (Z'HZ is singular)")]
    IllConditionedClinical,

    #[error("hessian could not be factorized even with jitter {0:e}")]
    HessianFactorization(f64),

    #[error("L1 solver did not converge within {0} sweeps")]
    SolverConvergence(usize),

    #[error("c-index is undefined: no permissible pairs")]
    UndefinedCIndex,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PkbError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PkbError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        PkbError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use PkbError::*;
        match self {
            InvalidConfig(_) => ErrorClass::Usage,
            NonFinite(_)
            | IllConditionedClinical
            | HessianFactorization(_)
            | SolverConvergence(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
