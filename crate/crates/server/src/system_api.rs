//! Endpoints used by experimental systems, authenticated by the `api-key` header.

use std::collections::{BTreeMap, HashMap};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use litlab_core::ingestion::candidate_pool;
use litlab_core::model::{
    validate_recommendation, ApiSettings, Article, ArticleId, ItemKind, RawRecommendation, Topic, TopicRecommendation,
    UserId,
};
use litlab_core::Platform;
use serde::Serialize;
use serde_json::Value;

use crate::error::{ApiError, ApiResult};
use crate::extract::{ApiRequestContext, JsonBody};

pub fn routes() -> Router<Platform> {
    Router::new()
        .route("/", get(settings))
        .route("/users", get(list_users))
        .route("/user_info", get(user_info))
        .route("/articles", get(articles))
        .route("/article_data", get(article_data))
        .route("/user_feedback/articles", get(shown_articles))
        .route("/user_feedback/topics", get(shown_topics))
        .route("/recommendations/articles", post(post_articles))
        .route("/recommendations/topics", post(post_topics))
}

async fn settings(_ctx: ApiRequestContext, State(p): State<Platform>) -> Json<ApiSettings> {
    Json(p.settings())
}

#[derive(Debug, Serialize)]
pub struct UserPage {
    pub user_ids: Vec<UserId>,
    pub total: usize,
    pub next_offset: Option<usize>,
}

async fn list_users(
    _ctx: ApiRequestContext,
    State(p): State<Platform>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<UserPage>> {
    let from = match q.get("from") {
        None => 0,
        Some(s) => {
            let n: i64 = s.trim().parse().map_err(|_| ApiError::bad_request("`from` must be an integer"))?;
            usize::try_from(n).map_err(|_| ApiError::bad_request("`from` must not be negative"))?
        }
    };
    let batch = p.settings().user_batch_size;
    let page = p.store().read(|db| {
        let all: Vec<UserId> = db.active_users().map(|u| u.user_id.clone()).collect();
        let user_ids: Vec<UserId> = all.iter().skip(from).take(batch).cloned().collect();
        let end = from.saturating_add(user_ids.len());
        UserPage { next_offset: (!user_ids.is_empty() && end < all.len()).then_some(end), total: all.len(), user_ids }
    });
    Ok(Json(page))
}

/// Splits a comma-separated id list, ignoring blanks.
fn id_list(q: &HashMap<String, String>, key: &str, max: usize) -> ApiResult<Vec<String>> {
    let raw = q.get(key).ok_or_else(|| ApiError::bad_request(format!("missing `{key}`")))?;
    let ids: Vec<String> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect();
    if ids.len() > max {
        return Err(ApiError::bad_request(format!("at most {max} ids per request, got {}", ids.len())));
    }
    Ok(ids)
}

#[derive(Debug, Serialize)]
pub struct UserInfo {
    pub topics: Vec<String>,
    pub external_links: Vec<String>,
    pub registered_at: DateTime<Utc>,
}

async fn user_info(
    _ctx: ApiRequestContext,
    State(p): State<Platform>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<BTreeMap<UserId, UserInfo>>> {
    let ids = id_list(&q, "ids", p.settings().user_batch_size)?;
    let info = p.store().read(|db| {
        ids.into_iter()
            .filter_map(|id| {
                let u = db.user(&UserId::new(id)).filter(|u| u.active)?;
                Some((
                    u.user_id.clone(),
                    UserInfo {
                        topics: u.topics.iter().map(|t| t.text().to_owned()).collect(),
                        external_links: u.external_links.iter().cloned().collect(),
                        registered_at: u.registered_at,
                    },
                ))
            })
            .collect()
    });
    Ok(Json(info))
}

#[derive(Debug, Serialize)]
pub struct Candidates {
    pub date: NaiveDate,
    pub article_ids: Vec<ArticleId>,
}

async fn articles(_ctx: ApiRequestContext, State(p): State<Platform>) -> Json<Candidates> {
    let date = p.today();
    let window = p.settings().candidate_window_days;
    let article_ids = p.store().read(|db| candidate_pool(db, date, window)).into_iter().collect();
    Json(Candidates { date, article_ids })
}

async fn article_data(
    _ctx: ApiRequestContext,
    State(p): State<Platform>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<BTreeMap<ArticleId, Article>>> {
    let ids = id_list(&q, "article_id", p.settings().recommendation_batch_max)?;
    let data = p.store().read(|db| {
        ids.into_iter()
            .filter_map(|id| db.article(&ArticleId::new(id)).map(|a| (a.article_id.clone(), a.clone())))
            .collect()
    });
    Ok(Json(data))
}

fn shown(p: &Platform, q: &HashMap<String, String>, kind: ItemKind) -> ApiResult<Json<BTreeMap<UserId, Vec<String>>>> {
    let ids = id_list(q, "user_id", p.settings().user_batch_size)?;
    let map = p.store().read(|db| {
        ids.into_iter()
            .map(UserId::new)
            .filter(|u| db.user(u).is_some())
            .map(|u| {
                let items = db.shown_items(&u, kind).into_iter().collect();
                (u, items)
            })
            .collect()
    });
    Ok(Json(map))
}

async fn shown_articles(
    _ctx: ApiRequestContext,
    State(p): State<Platform>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<BTreeMap<UserId, Vec<String>>>> {
    shown(&p, &q, ItemKind::Article)
}

async fn shown_topics(
    _ctx: ApiRequestContext,
    State(p): State<Platform>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<BTreeMap<UserId, Vec<String>>>> {
    shown(&p, &q, ItemKind::Topic)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedItem {
    pub user_id: String,
    pub item: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SubmissionReport {
    pub accepted: usize,
    /// Valid items dropped because they were already shown to the user.
    pub ignored: usize,
    pub rejected: Vec<RejectedItem>,
}

/// Checks the window and batch cap, returning the per-user item lists.
fn parse_submission(ctx: &ApiRequestContext, p: &Platform, body: &Value) -> ApiResult<Vec<(String, Value)>> {
    let settings = p.settings();
    if !settings.submission_window.contains(ctx.received_at) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "outside the submission window"));
    }
    let recs = body
        .get("recommendations")
        .and_then(Value::as_object)
        .ok_or_else(|| ApiError::bad_request("expected an object `recommendations` mapping user ids to lists"))?;
    let mut items = Vec::new();
    for (user, list) in recs {
        let list = list
            .as_array()
            .ok_or_else(|| ApiError::bad_request(format!("recommendations for `{user}` must be a list")))?;
        items.extend(list.iter().map(|v| (user.clone(), v.clone())));
    }
    if items.len() > settings.recommendation_batch_max {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("at most {} items per batch, got {}", settings.recommendation_batch_max, items.len()),
        ));
    }
    Ok(items)
}

/// Accepts numbers and the strings "NaN"/"inf"/... so that non-finite scores
/// can be reported as such.
fn score_of(item: &Value) -> Result<f64, String> {
    match item.get("score") {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| "malformed score".to_owned()),
        Some(Value::String(s)) => s.trim().parse::<f64>().map_err(|_| "malformed score".to_owned()),
        Some(Value::Null) => Ok(f64::NAN),
        Some(_) => Err("malformed score".to_owned()),
        None => Err("missing score".to_owned()),
    }
}

fn str_field<'a>(item: &'a Value, key: &str) -> Result<&'a str, String> {
    item.get(key).and_then(Value::as_str).ok_or_else(|| format!("missing `{key}`"))
}

async fn post_articles(
    ctx: ApiRequestContext,
    State(p): State<Platform>,
    JsonBody(body): JsonBody<Value>,
) -> ApiResult<Json<SubmissionReport>> {
    let items = parse_submission(&ctx, &p, &body)?;
    let today = ctx.received_at.date_naive();
    let window = p.settings().candidate_window_days;
    let report = p.store().write(|db| {
        let mut report = SubmissionReport::default();
        let mut valid = Vec::new();
        for (user, item) in items {
            let article = item.get("article_id").and_then(Value::as_str).map(str::to_owned);
            let checked = (|| {
                let article_id = str_field(&item, "article_id")?;
                let score = score_of(&item)?;
                let explanation = match item.get("explanation") {
                    None | Some(Value::Null) => None,
                    Some(Value::String(s)) => Some(s.clone()),
                    Some(_) => return Err("explanation must be a string".to_owned()),
                };
                let user_id = UserId::new(user.clone());
                if db.user(&user_id).is_none_or(|u| !u.active) {
                    return Err("unknown user".to_owned());
                }
                let a = db.article(&ArticleId::new(article_id)).ok_or("unknown article")?;
                if !a.in_window(today, window) {
                    return Err("article is not a current candidate".to_owned());
                }
                validate_recommendation(RawRecommendation {
                    system_id: ctx.system.system_id.clone(),
                    user_id,
                    article_id: ArticleId::new(article_id),
                    score,
                    explanation,
                    submitted_at: ctx.received_at,
                })
                .map_err(|e| e.to_string())
            })();
            match checked {
                Ok(rec) => valid.push(rec),
                Err(reason) => report.rejected.push(RejectedItem { user_id: user, item: article, reason }),
            }
        }
        let pushed = db.push_recommendations(valid);
        report.accepted = pushed.accepted;
        report.ignored = pushed.ignored;
        Ok(report)
    })?;
    Ok(Json(report))
}

async fn post_topics(
    ctx: ApiRequestContext,
    State(p): State<Platform>,
    JsonBody(body): JsonBody<Value>,
) -> ApiResult<Json<SubmissionReport>> {
    let items = parse_submission(&ctx, &p, &body)?;
    let report = p.store().write(|db| {
        let mut report = SubmissionReport::default();
        let mut valid = Vec::new();
        for (user, item) in items {
            let topic_text = item.get("topic").and_then(Value::as_str).map(str::to_owned);
            let checked = (|| {
                let topic = Topic::parse(str_field(&item, "topic")?).map_err(|e| e.to_string())?;
                let score = score_of(&item)?;
                if !score.is_finite() {
                    return Err("non-finite score".to_owned());
                }
                let user_id = UserId::new(user.clone());
                if db.user(&user_id).is_none_or(|u| !u.active) {
                    return Err("unknown user".to_owned());
                }
                Ok(TopicRecommendation {
                    system_id: ctx.system.system_id.clone(),
                    user_id,
                    topic,
                    score,
                    submitted_at: ctx.received_at,
                })
            })();
            match checked {
                Ok(rec) => valid.push(rec),
                Err(reason) => report.rejected.push(RejectedItem { user_id: user, item: topic_text, reason }),
            }
        }
        let pushed = db.push_topic_recommendations(valid);
        report.accepted = pushed.accepted;
        report.ignored = pushed.ignored;
        Ok(report)
    })?;
    Ok(Json(report))
}
