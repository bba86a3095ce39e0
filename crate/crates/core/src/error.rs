use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    #[error("unsupported layer `{name}`: {reason}")]
    UnsupportedLayer { name: String, reason: String },

    #[error("composition error: {0}")]
    Composition(String),

    #[error("format error at offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("length error: {0}")]
    Length(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// Configuration problems exit with 2, everything that is wrong with the
    /// data on disk (or in memory) exits with 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Composition(_)
            | Error::UnsupportedLayer { .. } => 2,
            _ => 3,
        }
    }
}
