use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),

    #[error("{op} is not twice differentiable; the gradient penalty path requires smooth ops (use tanh or softplus activations in the critic)")]
    NotTwiceDifferentiable { op: &'static str },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGrad(String),

    #[error("non-finite loss at step {step} ({which}); last batch stats: {stats}")]
    NonFiniteLoss {
        step: u64,
        which: &'static str,
        stats: String,
    },

    #[error("generator index {index} out of range for {count} generators")]
    BadGeneratorIndex { index: usize, count: usize },

    #[error("class index {index} invalid: class 0 is reserved for real samples and fake classes run 1..={count}")]
    BadClassIndex { index: usize, count: usize },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("covariance matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
