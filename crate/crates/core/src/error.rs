use chrono::NaiveDate;
use thiserror::Error;

use crate::model::{ProfileError, RecommendationError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },

    #[error("{0}")]
    Invalid(String),

    #[error("invalid profile: {}", join_errors(.0))]
    Profile(Vec<ProfileError>),

    #[error(transparent)]
    Recommendation(#[from] RecommendationError),

    #[error("{0}")]
    Conflict(String),

    #[error("authentication required")]
    Unauthorized,

    #[error("{0}")]
    Forbidden(String),

    #[error("job `{job}` already ran for {date}")]
    JobAlreadyRan { job: String, date: NaiveDate },

    #[error("job `{job}` for {date} is already running")]
    JobRunning { job: String, date: NaiveDate },

    #[error("submission window for {0} is still open")]
    WindowOpen(NaiveDate),

    #[error("config: {0}")]
    Config(String),

    #[error("database `{0}` is locked by another process")]
    Locked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("email: {0}")]
    Email(String),
}

impl Error {
    pub fn not_found(kind: &'static str, id: impl ToString) -> Self {
        Error::NotFound { kind, id: id.to_string() }
    }
}

fn join_errors(errors: &[ProfileError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
