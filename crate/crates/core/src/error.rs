use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the valid domain of an operation.
    #[error("{what} = {value} is outside the valid range: {bound}")]
    Range {
        what: &'static str,
        value: f64,
        bound: String,
    },

    /// A configuration or model parameter violates its constraints.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A numeric contract (positive definiteness, log-domain, ...) was violated.
    #[error("numeric contract violated: {0}")]
    Numeric(String),

    /// Not enough data for the requested estimate.
    #[error("underdetermined: {0}")]
    Underdetermined(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file; `line` is 1-based when known.
    #[error("parse error in {path}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<usize>,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn range(what: &'static str, value: f64, bound: impl Into<String>) -> Self {
        Error::Range {
            what,
            value,
            bound: bound.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl AsRef<std::path::Path>,
        line: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }
}
