use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("zero valid records in {0}")]
    ZeroValidRecords(PathBuf),

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("empty vocabulary after thresholding at min_freq={0}")]
    EmptyVocabulary(u64),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty co-occurrence")]
    EmptyCooccurrence,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in slice {slice}")]
    NonFinite { slice: usize },

    #[error("singular system in slice {slice}")]
    Singular { slice: usize },

    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("checksum mismatch")]
    BadChecksum,

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("vocabulary fingerprint mismatch")]
    FingerprintMismatch,

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("unprojectable document {0:?}")]
    UnprojectableDocument(String),

    #[error("no prior experience for creator {0:?}")]
    NoPriorExperience(String),

    #[error("zero vector")]
    ZeroVector,

    #[error("team needs at least {needed} members, got {got}")]
    TeamTooSmall { needed: usize, got: usize },

    #[error("degenerate homogeneous team")]
    DegenerateTeam,

    #[error("empty category set")]
    EmptyCategories,

    #[error("empty embedding slice")]
    EmptySlice,

    #[error("too few points for clustering: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("no projectable project documents")]
    NoProjectDocs,

    #[error("constant series: correlation undefined")]
    ConstantSeries,

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("no eligible creators")]
    NoEligibleCreators,

    #[error("config error: {0}")]
    Config(String),

    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(PathBuf),

    #[error("output directory locked: {0}")]
    Locked(PathBuf),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            detail: detail.into(),
        }
    }

    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::ChecksumMismatch(_) | Error::BadChecksum => "checksum",
            Error::Locked(_) => "lock",
            Error::BadMagic | Error::BadVersion(_) | Error::Truncated { .. } | Error::Malformed { .. } => {
                "format"
            }
            Error::NonFinite { .. } | Error::Singular { .. } | Error::RankDeficient => "numeric",
            Error::Stage { source, .. } => source.category(),
            _ => "data",
        }
    }
}
