use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("batch carries no logits; gradients are taken with respect to logits")]
    MissingLogits,

    #[error("class `{0}` has zero annotations; its inverse-frequency weight is undefined")]
    ZeroCountClass(String),

    #[error("operation requires the {expected} manifold but parameters live on {got}")]
    ManifoldMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("retraction step landed at the origin; reduce the learning rate")]
    ZeroNormAfterStep,

    #[error("objective evaluated to a non-finite value at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("variance must be strictly positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("dataset contains no scenes")]
    EmptyDataset,

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    DivergenceDetected { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Debug,
        got: impl std::fmt::Debug,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }

    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}
