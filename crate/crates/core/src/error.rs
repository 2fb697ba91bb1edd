use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Network,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Data => 2,
            ErrorClass::Network => 3,
            ErrorClass::Internal => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid embedding container: {0}")]
    Format(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("vocabulary has no attributes or no objects")]
    EmptyVocabulary,
    #[error("malformed corpus record at line {line}: {reason}")]
    CorpusFormat { line: usize, reason: String },
    #[error("LLM transport failure after {attempts} attempt(s): {message}")]
    LlmTransport { attempts: usize, message: String },
    #[error("unparseable LLM response line for attribute {attribute:?}: {line:?}")]
    LlmParse { attribute: String, line: String },
    #[error("no LLM score for {} pair(s), first: {:?}", pairs.len(), pairs.first())]
    MissingScore { pairs: Vec<(String, String)> },
    #[error("negative compatibility score {0}")]
    NegativeScore(f64),
    #[error("unknown placeholder {0:?} in template")]
    UnknownPlaceholder(String),
    #[error("pool exhausted: every candidate image is excluded")]
    PoolExhausted,
    #[error("no precomputed query embedding for {0:?}")]
    MissingQueryEmbedding(String),
    #[error("degenerate statistics: sigma = {0:e}")]
    DegenerateStatistics(f64),
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("not implemented: {0}")]
    NotImplemented(&'static str),
    #[error("cache is empty")]
    EmptyCache,
    #[error("cache has no hard labels")]
    MissingHardLabels,
    #[error("degenerate score row {0}")]
    DegenerateRow(usize),
    #[error("row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("no positive labels after masking")]
    NoPositives,
    #[error("scores and annotations are misaligned: {0}")]
    Misalignment(String),
    #[error("every attribute was skipped (no positives)")]
    AllAttributesSkipped,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run manifest does not match: {0}")]
    ReplayMismatch(String),
    #[error("missing input file {}", .0.display())]
    MissingPath(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::AlphaOutOfRange(_) | Error::UnknownPlaceholder(_) => {
                ErrorClass::Config
            }
            Error::ReplayMismatch(_) => ErrorClass::Config,
            Error::LlmTransport { .. } => ErrorClass::Network,
            Error::NotImplemented(_) => ErrorClass::Internal,
            _ => ErrorClass::Data,
        }
    }
}
