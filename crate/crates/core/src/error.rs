use std::path::PathBuf;

/// Errors raised anywhere in the conversion pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty waveform")]
    EmptyWaveform,

    #[error("unvoiced utterance")]
    UnvoicedUtterance,

    #[error("empty utterance")]
    EmptyUtterance,

    #[error("unknown speaker '{0}'")]
    UnknownSpeaker(String),

    #[error("missing statistics for speaker '{0}'")]
    MissingStats(String),

    #[error("unsupported wav: {0}")]
    UnsupportedWav(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyWaveform => "empty_waveform",
            Error::UnvoicedUtterance => "unvoiced_utterance",
            Error::EmptyUtterance => "empty_utterance",
            Error::UnknownSpeaker(_) => "unknown_speaker",
            Error::MissingStats(_) => "missing_stats",
            Error::UnsupportedWav(_) => "unsupported_wav",
            Error::Corrupt { .. } => "corrupt",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Wav { .. } => "wav",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $err:expr) => {
        if !$cond {
            return Err($err);
        }
    };
}
pub(crate) use ensure;
