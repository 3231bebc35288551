//! Endpoints used by the end-user web client, under `/user`.

use std::collections::HashMap;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use litlab_core::accounts::{self, FeedPage, FeedbackInput, Registration, TopicAction, TopicState, UserAction};
use litlab_core::model::{ImpressionId, RawProfile, UserId, UserProfile};
use litlab_core::storage::{RecordOutcome, UserExport};
use litlab_core::Platform;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ApiError, ApiResult};
use crate::extract::{JsonBody, UserSession, SESSION_COOKIE};

pub fn routes() -> Router<Platform> {
    Router::new()
        .route("/user/register", post(register))
        .route("/user/login", post(login))
        .route("/user/logout", post(logout))
        .route("/user/profile", get(profile).put(update_profile))
        .route("/user/feed", get(feed))
        .route("/user/action", post(action))
        .route("/user/feedback", post(feedback))
        .route("/user/topics", get(topics))
        .route("/user/topics/action", post(topic_action))
        .route("/user/export", get(export))
        .route("/user/account", delete(delete_account))
}

#[derive(Debug, Serialize)]
struct Registered {
    user_id: UserId,
}

async fn register(State(p): State<Platform>, JsonBody(reg): JsonBody<Registration>) -> ApiResult<Response> {
    let user_id = accounts::register(&p, reg)?;
    Ok((StatusCode::CREATED, Json(Registered { user_id })).into_response())
}

#[derive(Debug, Deserialize)]
struct Credentials {
    email: String,
    password: String,
}

#[derive(Debug, Serialize)]
struct LoggedIn {
    token: String,
    user_id: UserId,
    expires_at: DateTime<Utc>,
}

async fn login(State(p): State<Platform>, JsonBody(c): JsonBody<Credentials>) -> ApiResult<Response> {
    let s = accounts::login(&p, &c.email, &c.password)
        .map_err(|_| ApiError::new(StatusCode::UNAUTHORIZED, "invalid credentials"))?;
    let cookie = format!("{SESSION_COOKIE}={}; Path=/; HttpOnly; SameSite=Lax", s.token);
    let body = LoggedIn { token: s.token, user_id: s.user_id, expires_at: s.expires_at };
    Ok(([(header::SET_COOKIE, cookie)], Json(body)).into_response())
}

async fn logout(session: UserSession, State(p): State<Platform>) -> ApiResult<StatusCode> {
    accounts::logout(&p, &session.token)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn profile(session: UserSession, State(p): State<Platform>) -> ApiResult<Json<UserProfile>> {
    Ok(Json(accounts::profile(&p, &session.token)?))
}

async fn update_profile(
    session: UserSession,
    State(p): State<Platform>,
    JsonBody(raw): JsonBody<RawProfile>,
) -> ApiResult<Json<UserProfile>> {
    Ok(Json(accounts::update_profile(&p, &session.token, raw)?))
}

async fn feed(
    session: UserSession,
    State(p): State<Platform>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<FeedPage>> {
    let page = match q.get("page") {
        None => 0,
        Some(s) => s.parse().map_err(|_| ApiError::bad_request("`page` must be a non-negative integer"))?,
    };
    Ok(Json(accounts::feed(&p, &session.token, page)?))
}

#[derive(Debug, Deserialize)]
struct ActionRequest {
    impression_id: ImpressionId,
    item_id: String,
    action: UserAction,
}

async fn action(
    session: UserSession,
    State(p): State<Platform>,
    JsonBody(req): JsonBody<ActionRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let outcome: RecordOutcome =
        accounts::record_action(&p, &session.token, &req.impression_id, &req.item_id, req.action)?;
    Ok(Json(json!({ "outcome": outcome })))
}

async fn feedback(
    session: UserSession,
    State(p): State<Platform>,
    JsonBody(input): JsonBody<FeedbackInput>,
) -> ApiResult<StatusCode> {
    accounts::submit_feedback(&p, &session.token, input)?;
    Ok(StatusCode::CREATED)
}

async fn topics(session: UserSession, State(p): State<Platform>) -> Json<TopicState> {
    Json(p.store().read(|db| accounts::topic_state(db, &session.user_id)))
}

#[derive(Debug, Deserialize)]
struct TopicRequest {
    #[serde(default)]
    topic: String,
    action: TopicAction,
}

async fn topic_action(
    session: UserSession,
    State(p): State<Platform>,
    JsonBody(req): JsonBody<TopicRequest>,
) -> ApiResult<Json<TopicState>> {
    Ok(Json(accounts::topic_action(&p, &session.token, &req.topic, req.action)?))
}

async fn export(session: UserSession, State(p): State<Platform>) -> ApiResult<Json<UserExport>> {
    Ok(Json(accounts::export_data(&p, &session.token)?))
}

async fn delete_account(session: UserSession, State(p): State<Platform>) -> ApiResult<StatusCode> {
    accounts::delete_account(&p, &session.token)?;
    Ok(StatusCode::NO_CONTENT)
}
