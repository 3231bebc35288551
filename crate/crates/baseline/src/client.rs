//! The daily client protocol against the broker's system API.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;

use litlab_core::model::{ApiSettings, Article, ArticleId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::debug;

use crate::index::Bm25Index;
use crate::scoring::{explain, top_k_for_user};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("{0}")]
    Network(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

/// Carries authenticated requests to the broker. `path` includes the query.
pub trait Transport {
    fn get(&self, path: &str) -> impl Future<Output = Result<Value, TransportError>> + Send;
    fn post(&self, path: &str, body: Value) -> impl Future<Output = Result<Value, TransportError>> + Send;
}

/// A transport over HTTP.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::Client,
    base: String,
    key: String,
}

impl HttpTransport {
    pub fn new(base: impl Into<String>, key: impl Into<String>) -> Self {
        HttpTransport {
            client: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_owned(),
            key: key.into(),
        }
    }

    async fn finish(resp: Result<reqwest::Response, reqwest::Error>) -> Result<Value, TransportError> {
        let resp = resp.map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status { status: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Decode(e.to_string()))
    }
}

impl Transport for HttpTransport {
    async fn get(&self, path: &str) -> Result<Value, TransportError> {
        let resp = self.client.get(format!("{}{path}", self.base)).header("api-key", &self.key).send().await;
        Self::finish(resp).await
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value, TransportError> {
        let resp =
            self.client.post(format!("{}{path}", self.base)).header("api-key", &self.key).json(&body).send().await;
        Self::finish(resp).await
    }
}

/// Protocol steps, numbered as the broker documents them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Settings = 1,
    UserBatch = 2,
    UserInfo = 3,
    Candidates = 4,
    ArticleData = 5,
    ShownFilter = 6,
    Generate = 7,
    Submit = 8,
    Repeat = 9,
}

impl Step {
    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Error)]
#[error("step {} ({step:?}): {source}", step.number())]
pub struct ClientError {
    pub step: Step,
    #[source]
    pub source: TransportError,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CycleReport {
    pub users_seen: usize,
    pub candidates: usize,
    pub recommendations_generated: usize,
    pub accepted: usize,
    pub ignored: usize,
    pub rejected: usize,
    pub batches_posted: usize,
    /// Steps in the order they ran.
    pub trace: Vec<Step>,
}

impl CycleReport {
    pub fn completed_steps(&self) -> BTreeSet<u8> {
        self.trace.iter().map(|s| s.number()).collect()
    }
}

#[derive(Debug, Deserialize)]
struct UserPage {
    user_ids: Vec<String>,
    next_offset: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct UserInfo {
    topics: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Candidates {
    article_ids: Vec<ArticleId>,
}

fn decode<T: DeserializeOwned>(step: Step, v: Value) -> Result<T, ClientError> {
    serde_json::from_value(v).map_err(|e| ClientError { step, source: TransportError::Decode(e.to_string()) })
}

async fn call_get<T: DeserializeOwned>(t: &impl Transport, step: Step, path: &str) -> Result<T, ClientError> {
    let v = t.get(path).await.map_err(|source| ClientError { step, source })?;
    decode(step, v)
}

/// Runs one full daily cycle: fetch settings, page through users, score the
/// current candidates per user with BM25, and upload the results in batches.
pub async fn run_client_cycle(t: &impl Transport) -> Result<CycleReport, ClientError> {
    let mut report = CycleReport::default();
    let settings: ApiSettings = call_get(t, Step::Settings, "/").await?;
    report.trace.push(Step::Settings);

    let mut index: Option<(Vec<ArticleId>, Bm25Index)> = None;
    let mut pending: Vec<(String, Value)> = Vec::new();
    let mut from = Some(0);
    while let Some(offset) = from {
        let page: UserPage = call_get(t, Step::UserBatch, &format!("/users?from={offset}")).await?;
        report.trace.push(Step::UserBatch);
        from = page.next_offset;
        if page.user_ids.is_empty() {
            break;
        }
        report.users_seen += page.user_ids.len();

        let info: BTreeMap<String, UserInfo> =
            call_get(t, Step::UserInfo, &format!("/user_info?ids={}", page.user_ids.join(","))).await?;
        report.trace.push(Step::UserInfo);

        let cands: Candidates = call_get(t, Step::Candidates, "/articles").await?;
        report.trace.push(Step::Candidates);
        report.candidates = cands.article_ids.len();
        if cands.article_ids.is_empty() {
            debug!("no candidates, nothing to recommend");
            return Ok(report);
        }

        if index.as_ref().is_none_or(|(ids, _)| *ids != cands.article_ids) {
            let mut articles: Vec<Article> = Vec::new();
            for chunk in cands.article_ids.chunks(settings.recommendation_batch_max.max(1)) {
                let ids: Vec<&str> = chunk.iter().map(ArticleId::as_str).collect();
                let data: BTreeMap<ArticleId, Article> =
                    call_get(t, Step::ArticleData, &format!("/article_data?article_id={}", ids.join(","))).await?;
                articles.extend(data.into_values());
            }
            index = Some((cands.article_ids.clone(), Bm25Index::build(&articles)));
        }
        report.trace.push(Step::ArticleData);
        let (cand_ids, idx) = index.as_ref().expect("index built above");

        let shown: BTreeMap<String, Vec<ArticleId>> =
            call_get(t, Step::ShownFilter, &format!("/user_feedback/articles?user_id={}", page.user_ids.join(",")))
                .await?;
        report.trace.push(Step::ShownFilter);

        for user in &page.user_ids {
            let Some(u) = info.get(user) else { continue };
            let seen: BTreeSet<&ArticleId> = shown.get(user).into_iter().flatten().collect();
            let fresh = cand_ids.iter().filter(|a| !seen.contains(a));
            for scored in top_k_for_user(idx, &u.topics, fresh, settings.top_k) {
                let Some(explanation) = explain(&scored) else { continue };
                pending.push((
                    user.clone(),
                    json!({"article_id": scored.article_id, "score": scored.total_score, "explanation": explanation}),
                ));
                report.recommendations_generated += 1;
            }
        }
        report.trace.push(Step::Generate);

        submit(t, &settings, &mut pending, &mut report, false).await?;
        report.trace.push(Step::Submit);
        report.trace.push(Step::Repeat);
    }
    submit(t, &settings, &mut pending, &mut report, true).await?;
    Ok(report)
}

/// Posts full batches; with `flush`, also the remainder.
async fn submit(
    t: &impl Transport,
    settings: &ApiSettings,
    pending: &mut Vec<(String, Value)>,
    report: &mut CycleReport,
    flush: bool,
) -> Result<(), ClientError> {
    let max = settings.recommendation_batch_max.max(1);
    while pending.len() >= max || (flush && !pending.is_empty()) {
        let n = pending.len().min(max);
        let mut by_user: BTreeMap<String, Vec<Value>> = BTreeMap::new();
        for (u, item) in pending.drain(..n) {
            by_user.entry(u).or_default().push(item);
        }
        let resp = t
            .post("/recommendations/articles", json!({ "recommendations": by_user }))
            .await
            .map_err(|source| ClientError { step: Step::Submit, source })?;
        report.batches_posted += 1;
        report.accepted += resp["accepted"].as_u64().unwrap_or(0) as usize;
        report.ignored += resp["ignored"].as_u64().unwrap_or(0) as usize;
        report.rejected += resp["rejected"].as_array().map_or(0, Vec::len);
    }
    Ok(())
}
