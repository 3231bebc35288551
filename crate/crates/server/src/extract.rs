use axum::extract::{FromRequest, FromRequestParts, Request};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use chrono::{DateTime, Utc};
use litlab_core::model::{ExperimentalSystem, UserId};
use litlab_core::{accounts, Platform};
use serde::de::DeserializeOwned;

use crate::error::ApiError;

pub const API_KEY_HEADER: &str = "api-key";
pub const SESSION_COOKIE: &str = "session";

/// The authenticated experimental system behind a request.
#[derive(Debug, Clone)]
pub struct ApiRequestContext {
    pub system: ExperimentalSystem,
    pub received_at: DateTime<Utc>,
}

pub fn authenticate_system(platform: &Platform, key: Option<&str>) -> Result<ApiRequestContext, ApiError> {
    let key =
        key.filter(|k| !k.is_empty()).ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing api key"))?;
    let system = platform
        .store()
        .read(|db| db.system_by_key(key).cloned())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown api key"))?;
    if !system.active {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "system is deactivated"));
    }
    Ok(ApiRequestContext { system, received_at: platform.now() })
}

impl FromRequestParts<Platform> for ApiRequestContext {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, platform: &Platform) -> Result<Self, ApiError> {
        let key = parts.headers.get(API_KEY_HEADER).and_then(|v| v.to_str().ok());
        authenticate_system(platform, key)
    }
}

/// Session token from `Authorization: Bearer` or the session cookie.
pub fn session_token(parts: &Parts) -> Option<String> {
    let bearer = parts
        .headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_owned());
    bearer.or_else(|| {
        parts
            .headers
            .get_all(header::COOKIE)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .flat_map(|v| v.split(';'))
            .find_map(|kv| {
                let (k, v) = kv.trim().split_once('=')?;
                (k == SESSION_COOKIE).then(|| v.to_owned())
            })
    })
}

/// A valid session token and its user.
#[derive(Debug, Clone)]
pub struct UserSession {
    pub token: String,
    pub user_id: UserId,
}

impl FromRequestParts<Platform> for UserSession {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, platform: &Platform) -> Result<Self, ApiError> {
        let token = session_token(parts).ok_or_else(ApiError::unauthorized)?;
        let user_id = accounts::authenticate(platform, &token).map_err(|_| ApiError::unauthorized())?;
        Ok(UserSession { token, user_id })
    }
}

/// JSON body whose rejections render as 400 `{"error": ...}`.
pub struct JsonBody<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(JsonBody(v)),
            Err(e) => Err(ApiError::bad_request(format!("malformed request body: {}", e.body_text()))),
        }
    }
}
