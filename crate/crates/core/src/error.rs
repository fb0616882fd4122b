use crate::sources::SourceLabel;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A protocol or parameter set violates one of its structural constraints.
    /// The message always names the constraint.
    #[error("validation failed ({constraint}): {detail}")]
    Validation {
        constraint: &'static str,
        detail: String,
    },

    #[error("source ordering undefined: {0}")]
    OrderingUndefined(String),

    #[error("unknown source {0}")]
    UnknownSource(SourceLabel),

    /// Too few counts for a fluctuation bound, or an empty feasible region.
    #[error("infeasible statistics: {0}")]
    InfeasibleStatistics(String),

    /// No usable decoy pair (or similar) exists to bound a quantity.
    #[error("analysis infeasible: {0}")]
    AnalysisInfeasible(String),
}

impl Error {
    pub(crate) fn validation(constraint: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            constraint,
            detail: detail.into(),
        }
    }

    /// True for errors caused by the data rather than by the inputs' shape.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleStatistics(_) | Error::AnalysisInfeasible(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
