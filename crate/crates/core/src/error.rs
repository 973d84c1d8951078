use std::fmt;

use thiserror::Error;

use crate::types::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One violated configuration constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {}", join(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),

    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),

    #[error("trace format error at byte {offset}: {reason}")]
    TraceFormat { offset: u64, reason: String },

    #[error("empty input")]
    EmptyInput,

    #[error("rank window is empty")]
    EmptyWindow,

    #[error("negative input at index {0}")]
    NegativeInput(usize),

    #[error("budget {budget} is smaller than the protected count {protected}")]
    BudgetTooSmall { budget: usize, protected: usize },

    #[error("no merge targets available")]
    NoMergeTargets,

    #[error("token {0} is not present in the cache")]
    MissingToken(TokenId),

    #[error("score vector of length {found} does not match a layout of {expected} tokens")]
    GridMismatch { expected: usize, found: usize },

    #[error("frame {frame}, layer {layer}: {source}")]
    AtLayer {
        frame: usize,
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join(violations: &[ConfigViolation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn at_layer(self, frame: usize, layer: usize) -> Self {
        match self {
            e @ Error::AtLayer { .. } => e,
            e => Error::AtLayer {
                frame,
                layer,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error with layer context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLayer { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 trace format, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::InvalidConfig(_) | Error::ConfigParse(_) => 2,
            Error::TraceFormat { .. } => 3,
            _ => 4,
        }
    }
}
