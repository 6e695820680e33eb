use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed wav: {0}")]
    MalformedWav(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("sample rate {found} Hz, expected 8000 Hz (enable resampling to convert)")]
    WrongSampleRate { found: u32 },
    #[error("stream has {found} samples, need at least {needed} for one window")]
    StreamTooShort { needed: usize, found: usize },
    #[error("invalid signal spec: {0}")]
    InvalidSignal(String),
    #[error("wrong window kind: expected {expected}, got {found}")]
    WrongWindowKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("training data contains a single class; missing class `{missing}`")]
    SingleClass { missing: String },
    #[error("feature index {index} not present in summary of length {len}")]
    MissingFeature { index: usize, len: usize },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("missing model for stage `{0}`")]
    MissingModel(String),
    #[error("model bundle exceeds dsp code budget: {used} > {budget} bytes")]
    CodeBudgetExceeded { used: u64, budget: u64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("inconsistent trace: {0}")]
    InconsistentTrace(String),
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("conversation is still open")]
    ConversationOpen,
    #[error("csv error: {0}")]
    Csv(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad configuration rather than bad data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::MissingModel(_) | Error::CodeBudgetExceeded { .. }
        )
    }
}
