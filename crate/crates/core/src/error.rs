use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate doc_id {0}")]
    DuplicateDocId(String),

    #[error("duplicate user id {0}")]
    DuplicateUserId(String),

    #[error("missing required column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("undefined divergence operand: empty distribution")]
    EmptyDistribution,

    #[error("empty distribution operand: summary for user {user_id} on {doc_id} has no tokens")]
    EmptySummary { doc_id: String, user_id: String },

    #[error("missing generated summary for model={model_id} style={style} user={user_id} doc={doc_id}")]
    MissingGeneration {
        model_id: String,
        style: String,
        user_id: String,
        doc_id: String,
    },

    #[error("instance {doc_id} has {found} users; at least 2 are required")]
    TooFewUsers { doc_id: String, found: usize },

    #[error("no scoreable instances for model={model_id} style={style}")]
    NoScoreableInstances { model_id: String, style: String },

    #[error("missing similarity ratings for {} pair(s): {}", .0.len(), .0.join(", "))]
    MissingRatings(Vec<String>),

    #[error("rating {rating} out of range 1..=6 for {key}")]
    RatingOutOfRange { key: String, rating: i64 },

    #[error("invalid metric config: {0}")]
    InvalidConfig(String),

    #[error("unknown prompt style `{0}`")]
    UnknownStyle(String),

    #[error("cannot render {style} prompt for {doc_id}: {reason}")]
    Render {
        style: String,
        doc_id: String,
        reason: String,
    },

    #[error("template error: {0}")]
    Template(String),

    #[error("adversarial pool too small: {0}")]
    PoolTooSmall(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("score table error: {0}")]
    ScoreTable(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("collection interrupted after {completed} of {total} prompts: {reason}")]
    Interrupted {
        completed: usize,
        total: usize,
        reason: String,
    },

    #[error("malformed input {path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
