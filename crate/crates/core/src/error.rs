use std::fmt;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("resource limit: {what} needs {required} scalars, budget is {budget}")]
    Resource {
        what: String,
        required: usize,
        budget: usize,
    },
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("corrupt store: {0}")]
    Corruption(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shape(_) => ErrorKind::Shape,
            Error::Domain(_) => ErrorKind::Domain,
            Error::Contract(_) => ErrorKind::Contract,
            Error::Config(_) => ErrorKind::Config,
            Error::Parse { .. } => ErrorKind::Parse,
            Error::Resource { .. } => ErrorKind::Resource,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Corruption(_) => ErrorKind::Corruption,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Shape,
    Domain,
    Contract,
    Config,
    Parse,
    Resource,
    Numeric,
    Corruption,
    Io,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Shape => "shape",
            ErrorKind::Domain => "domain",
            ErrorKind::Contract => "contract",
            ErrorKind::Config => "config",
            ErrorKind::Parse => "parse",
            ErrorKind::Resource => "resource",
            ErrorKind::Numeric => "numeric",
            ErrorKind::Corruption => "corruption",
            ErrorKind::Io => "io",
        };
        f.write_str(s)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
