use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fvv_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Usage(String),

    /// The output directory holds a run made with a different configuration.
    #[error("resume refused: {0}")]
    Resume(String),

    /// A frame needed for decoding is absent from the stream.
    #[error("missing packet: {0}")]
    MissingPacket(String),

    #[error("plot error: {0}")]
    Plot(String),
}

impl CliError {
    /// Short machine-parseable class name printed on failure.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::Resume(_) => "resume",
            CliError::MissingPacket(_) => "missing-packet",
            CliError::Plot(_) => "plot",
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
