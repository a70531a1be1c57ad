use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates its declared invariant.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A state or argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A certificate's preconditions do not hold.
    #[error("{certificate} refused: {violated}")]
    CertificateRefused {
        certificate: &'static str,
        violated: String,
    },

    /// Both ends of a bisection bracket produced the same outcome.
    #[error("bracket [{lo}, {hi}] does not straddle a boundary (both ends {outcome})")]
    Bracket { lo: f64, hi: f64, outcome: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error in `{key}`: {message}")]
    ConfigSemantic { key: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn refused(certificate: &'static str, violated: impl Into<String>) -> Self {
        Error::CertificateRefused {
            certificate,
            violated: violated.into(),
        }
    }

    pub(crate) fn semantic(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigSemantic {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
