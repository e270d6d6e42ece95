use thiserror::Error;

use crate::map::LinearModel;
use crate::types::ExampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("unknown example id {0}")]
    UnknownExample(ExampleId),

    /// The observed response has zero probability under the current belief.
    #[error("response {response} on example {x} is impossible under the current belief")]
    Contradiction { x: ExampleId, response: String },

    /// An enumeration guard was exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// The MAP optimizer hit its iteration cap. Carries the last iterate.
    #[error("MAP fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        last: Box<LinearModel>,
    },

    #[error("no unqueried examples left")]
    Exhausted,

    /// A response arrived for something other than the outstanding query.
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("labeler failed: {0}")]
    Labeler(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
