use thiserror::Error;

use crate::datasets::ParseError;
use crate::harness::ConfigError;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("graph not connected")]
    NotConnected,
    #[error("unconnectable configuration: n={n}, p={p} failed {attempts} resamples")]
    Unconnectable { n: usize, p: f64, attempts: usize },
    #[error(
        "target lambda {target} unreachable for n={n}: achieved range [{min_achieved}, {max_achieved}], closest {closest}"
    )]
    TargetUnreachable {
        n: usize,
        target: f64,
        min_achieved: f64,
        max_achieved: f64,
        closest: f64,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
    #[error("no unique optimum: average matrix is not positive definite")]
    NoUniqueOptimum,
    #[error("optimum unknown for this cost ensemble")]
    OptimumUnknown,
    #[error("no dataset: mini-batch sampling needs a dataset-backed ensemble")]
    NoDataset,
    #[error("too few samples: {samples} rows cannot be split across {agents} agents")]
    TooFewSamples { samples: usize, agents: usize },
    #[error("insufficient samples: {got} < {required}")]
    InsufficientSamples { got: usize, required: usize },
    #[error("insufficient tail data: {0} positive points in window (need 5)")]
    InsufficientTailData(usize),
    #[error("step-size precondition violated: {0}")]
    StepSize(String),
    #[error("run aborted at iteration {t}, agent {agent}: {reason}")]
    Diverged { t: usize, agent: usize, reason: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
