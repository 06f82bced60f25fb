use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants split along the CLI exit-code contract: constraint, parse and
/// IO problems are caller mistakes (exit 1), numerical failures are exit 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("support too large ({size} index sets, budget {budget}), use Monte Carlo estimation")]
    SupportTooLarge { size: f64, budget: usize },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn constraint(msg: impl Into<String>) -> Self {
        Error::Constraint(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a description of what was running.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for this error: 2 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Constraint(msg()))
    }
}
