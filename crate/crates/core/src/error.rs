use std::fmt;

use thiserror::Error;

/// Pipeline stage a synthesis failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validation,
    DrawGains,
    TreeGain,
    Verification,
    Placement,
    ChannelController,
    Assembly,
    SpectrumCheck,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Validation => "validation",
            Stage::DrawGains => "draw_gains",
            Stage::TreeGain => "tree_gain",
            Stage::Verification => "verification",
            Stage::Placement => "placement",
            Stage::ChannelController => "channel_controller",
            Stage::Assembly => "assembly",
            Stage::SpectrumCheck => "spectrum_check",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("synthesis failed at stage {stage}: {message}")]
    Synthesis { stage: Stage, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(
        context: impl Into<String>,
        expected: impl fmt::Display,
        actual: impl fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn synthesis(stage: Stage, msg: impl Into<String>) -> Self {
        Error::Synthesis {
            stage,
            message: msg.into(),
        }
    }

    /// Tags an error with a stage, keeping synthesis errors that already carry one.
    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Synthesis { .. } => e,
            e @ (Error::InvalidInput(_) | Error::DimensionMismatch { .. }) => e,
            other => Error::synthesis(stage, other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
