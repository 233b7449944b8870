use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the de-identification engine.
///
/// Every message carries the name of the stage that produced it so a failing
/// pipeline run can be traced back without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("imagecore: cannot access {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("imagecore: {0}")]
    Image(String),

    #[error("facemask: {0}")]
    Mask(String),

    #[error("diffmodel: {0}")]
    Model(String),

    #[error("latentopt: {0}")]
    Optimize(String),

    #[error("latentopt: non-finite loss at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Vec<crate::latentopt::TraceEntry>,
    },

    #[error("blend: {0}")]
    Blend(String),

    #[error("metrics: {0}")]
    Metric(String),

    #[error("evalharness: {0}")]
    Eval(String),

    #[error("{context}: shape mismatch, expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl std::fmt::Debug,
        found: impl std::fmt::Debug,
    ) -> Self {
        Error::Shape {
            context,
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
