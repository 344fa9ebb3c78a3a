use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("volatility matrix is singular")]
    SingularSigma,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite feature value {value} (feature {feature})")]
    NonFiniteFeature { feature: usize, value: f64 },

    #[error("log-objective {0} is outside the representable range")]
    Overflow(f64),

    /// The sample admits an in-sample arbitrage at this rebalance step.
    #[error("optimization at step {step} is unbounded (one-sided increments); increase N")]
    UnboundedStep { step: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("optimizer did not converge at step {step} after {iterations} iterations")]
    NotConverged { step: usize, iterations: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("certainty equivalents come from different markets or risk aversions")]
    MixedProvenance,

    #[error("expected utility must be strictly negative, got {0}")]
    NonNegativeUtility(f64),

    #[error("empty sample (need at least {0} observations)")]
    EmptySample(usize),

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse classification used for process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Stage { source, .. } => source.kind(),
            Error::Io(_) => ErrorKind::Io,
            Error::UnboundedStep { .. }
            | Error::DegenerateData(_)
            | Error::NotConverged { .. }
            | Error::Overflow(_)
            | Error::NonFiniteFeature { .. }
            | Error::NonNegativeUtility(_) => ErrorKind::Numerical,
            _ => ErrorKind::Config,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
