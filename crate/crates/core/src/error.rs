//! Crate-wide error type for the pipeline stages above the computation
//! and data layers.

use thiserror::Error;

use crate::diff::DiffError;
use crate::posedata::DataError;

#[derive(Debug, Error)]
pub enum AqaError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Invalid(String),
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AqaError>,
    },
}

impl AqaError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        AqaError::Invalid(msg.into())
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn at_stage(stage: &'static str, err: impl Into<AqaError>) -> Self {
        AqaError::Stage {
            stage,
            source: Box::new(err.into()),
        }
    }
}
