//! HTTP front end: the system API, the user API, email tracking routes and
//! the admin leaderboard.

use std::collections::HashMap;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::NaiveDate;
use litlab_core::admin::{self, LeaderboardRow};
use litlab_core::digest::{resolve_tracking, EmailSink, TrackingResolution, PIXEL_GIF};
use litlab_core::evaluation::Period;
use litlab_core::model::ItemKind;
use litlab_core::Platform;
use tracing::{info, warn};

pub mod error;
pub mod extract;
pub mod system_api;
pub mod user_api;

pub use error::{ApiError, ApiResult};
pub use extract::{ApiRequestContext, API_KEY_HEADER, SESSION_COOKIE};

/// The full application router.
pub fn router(platform: Platform) -> Router {
    Router::new()
        .merge(system_api::routes())
        .merge(user_api::routes())
        .route("/t/click/{token}", get(track_click))
        .route("/t/pixel/{token}", get(track_pixel))
        .route("/admin/leaderboard", get(leaderboard))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such route") })
        .with_state(platform)
}

async fn track_click(State(p): State<Platform>, Path(token): Path<String>) -> ApiResult<Response> {
    match resolve_tracking(&p, &token)? {
        TrackingResolution::Redirect { url, .. } => Ok(Redirect::to(&url).into_response()),
        TrackingResolution::Pixel { .. } => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown click token")),
    }
}

async fn track_pixel(State(p): State<Platform>, Path(token): Path<String>) -> ApiResult<Response> {
    match resolve_tracking(&p, &token)? {
        TrackingResolution::Pixel { .. } => {
            Ok(([(header::CONTENT_TYPE, "image/gif"), (header::CACHE_CONTROL, "no-store")], PIXEL_GIF).into_response())
        }
        TrackingResolution::Redirect { .. } => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown pixel token")),
    }
}

fn date_param(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<NaiveDate>> {
    q.get(key).map(|s| s.parse().map_err(|_| ApiError::bad_request(format!("`{key}` must be YYYY-MM-DD")))).transpose()
}

async fn leaderboard(
    ctx: ApiRequestContext,
    State(p): State<Platform>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<LeaderboardRow>>> {
    let to = date_param(&q, "to")?.unwrap_or_else(|| p.today());
    let from = date_param(&q, "from")?.unwrap_or(NaiveDate::MIN);
    let kind = match q.get("kind").map(String::as_str) {
        None => None,
        Some("articles" | "article") => Some(ItemKind::Article),
        Some("topics" | "topic") => Some(ItemKind::Topic),
        Some(other) => return Err(ApiError::bad_request(format!("unknown kind `{other}`"))),
    };
    let period = Period::new(from, to).ok_or_else(|| ApiError::bad_request("`from` is after `to`"))?;
    let board = admin::compute_leaderboard(&p, period, kind);
    Ok(Json(admin::pseudonymized(&p, &board, Some(&ctx.system.system_id))))
}

/// Runs the daily jobs for each new day once its submission window closed.
pub async fn daily_scheduler(platform: Platform, sink: std::sync::Arc<dyn EmailSink>) {
    let mut ticker = tokio::time::interval(Duration::from_secs(60));
    loop {
        ticker.tick().await;
        let today = platform.today();
        if platform.now() < platform.settings().submission_window.end_on(today) {
            continue;
        }
        let p = platform.clone();
        let sink = sink.clone();
        let result = tokio::task::spawn_blocking(move || admin::run_all(&p, today, sink.as_ref())).await;
        match result {
            Ok(Ok(report)) if report.skipped.len() < 4 => info!(%today, ?report, "daily jobs finished"),
            Ok(Ok(_)) => {}
            Ok(Err(e)) => warn!(%today, error = %e, "daily jobs failed"),
            Err(e) => warn!(%today, error = %e, "daily job task panicked"),
        }
    }
}

/// Serves `router(platform)` until the listener fails.
pub async fn serve(platform: Platform, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    info!(addr = ?listener.local_addr()?, "listening");
    axum::serve(listener, router(platform)).await
}
