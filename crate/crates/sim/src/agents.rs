//! Simulated experimental systems talking to the system API.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use litlab_baseline::{run_client_cycle, Transport, TransportError};
use litlab_core::model::{ApiSettings, ArticleId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{Quality, SystemSpec};
use crate::http::SystemClient;
use crate::population::SyntheticUser;
use crate::SimError;

/// What the simulation knows that systems would have to learn.
pub struct World<'a> {
    pub user_index: &'a HashMap<String, usize>,
    /// Relevance of each article to each user, in `user_index` order.
    pub relevance: &'a HashMap<ArticleId, Vec<f64>>,
}

impl World<'_> {
    pub fn relevance(&self, user: usize, article: &ArticleId) -> f64 {
        self.relevance.get(article).map_or(0.0, |r| r[user])
    }
}

pub fn relevance_row(users: &[&SyntheticUser], terms: &BTreeSet<String>) -> Vec<f64> {
    users.iter().map(|u| u.relevance(terms)).collect()
}

pub struct Agent {
    pub spec: SystemSpec,
    pub client: SystemClient,
    pub rng: ChaCha8Rng,
    pub noise_sd: f64,
}

#[derive(Debug, Deserialize)]
struct UserPage {
    user_ids: Vec<String>,
    next_offset: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct Candidates {
    article_ids: Vec<ArticleId>,
}

fn api_err(step: &str) -> impl Fn(TransportError) -> SimError + '_ {
    move |e| SimError::Api(format!("{step}: {e}"))
}

impl Agent {
    /// Uploads today's recommendations; returns the number accepted.
    pub async fn submit_day(&mut self, world: &World<'_>) -> Result<usize, SimError> {
        if self.spec.quality == Quality::Bm25 {
            let report = run_client_cycle(&self.client).await.map_err(|e| SimError::Api(e.to_string()))?;
            return Ok(report.accepted);
        }
        let c = &self.client;
        let settings: ApiSettings = c.get_as("/").await.map_err(api_err("settings"))?;
        let cands: Candidates = c.get_as("/articles").await.map_err(api_err("articles"))?;
        let noise =
            Normal::new(0.0, self.noise_sd.max(f64::MIN_POSITIVE)).map_err(|e| SimError::Config(e.to_string()))?;

        let mut pending: Vec<(String, Value)> = Vec::new();
        let mut accepted = 0;
        let mut from = Some(0);
        while let Some(offset) = from {
            let page: UserPage = c.get_as(&format!("/users?from={offset}")).await.map_err(api_err("users"))?;
            from = page.next_offset;
            if page.user_ids.is_empty() {
                break;
            }
            let shown: BTreeMap<String, BTreeSet<ArticleId>> = c
                .get_as(&format!("/user_feedback/articles?user_id={}", page.user_ids.join(",")))
                .await
                .map_err(api_err("shown"))?;
            for uid in &page.user_ids {
                let Some(&user) = world.user_index.get(uid) else { continue };
                let seen = shown.get(uid);
                let mut scored: Vec<(f64, &ArticleId)> = cands
                    .article_ids
                    .iter()
                    .filter(|a| seen.is_none_or(|s| !s.contains(*a)))
                    .map(|a| {
                        let rel = world.relevance(user, a);
                        let score = match self.spec.quality {
                            Quality::Oracle => rel,
                            Quality::Noisy => rel + noise.sample(&mut self.rng),
                            _ => self.rng.random::<f64>(),
                        };
                        (score, a)
                    })
                    .collect();
                scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(y.1)));
                for (score, a) in scored.into_iter().take(settings.top_k) {
                    pending.push((
                        uid.clone(),
                        json!({"article_id": a, "score": score, "explanation": format!("Picked by **{}**", self.spec.name)}),
                    ));
                }
                if pending.len() >= settings.recommendation_batch_max {
                    accepted += self.flush(&mut pending, settings.recommendation_batch_max).await?;
                }
            }
        }
        while !pending.is_empty() {
            accepted += self.flush(&mut pending, settings.recommendation_batch_max).await?;
        }
        Ok(accepted)
    }

    async fn flush(&self, pending: &mut Vec<(String, Value)>, max: usize) -> Result<usize, SimError> {
        let n = pending.len().min(max.max(1));
        let mut by_user: BTreeMap<String, Vec<Value>> = BTreeMap::new();
        for (u, item) in pending.drain(..n) {
            by_user.entry(u).or_default().push(item);
        }
        let resp = self
            .client
            .post("/recommendations/articles", json!({ "recommendations": by_user }))
            .await
            .map_err(api_err("submit"))?;
        Ok(resp["accepted"].as_u64().unwrap_or(0) as usize)
    }
}

/// Suggests frequent title terms of the user's saved articles that are not
/// yet profile topics.
pub async fn submit_topics(
    client: &SystemClient,
    saved_titles: &BTreeMap<String, Vec<String>>,
    profile_topics: &BTreeMap<String, BTreeSet<String>>,
) -> Result<usize, SimError> {
    let mut recs: BTreeMap<&String, Vec<Value>> = BTreeMap::new();
    for (user, titles) in saved_titles {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for t in titles.iter().flat_map(|t| litlab_baseline::tokenize(t)) {
            *freq.entry(t).or_default() += 1;
        }
        let known = profile_topics.get(user);
        let mut ranked: Vec<(String, usize)> =
            freq.into_iter().filter(|(t, _)| known.is_none_or(|k| !k.contains(t))).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let items: Vec<Value> =
            ranked.into_iter().take(5).map(|(t, n)| json!({"topic": t, "score": n as f64})).collect();
        if !items.is_empty() {
            recs.insert(user, items);
        }
    }
    let mut accepted = 0;
    let mut batch: BTreeMap<&String, Vec<Value>> = BTreeMap::new();
    let mut size = 0;
    let entries: Vec<_> = recs.into_iter().collect();
    for (i, (user, items)) in entries.iter().enumerate() {
        size += items.len();
        batch.insert(user, items.clone());
        let last = i + 1 == entries.len();
        if size >= 90 || last {
            let resp = client
                .post("/recommendations/topics", json!({ "recommendations": batch }))
                .await
                .map_err(api_err("submit topics"))?;
            accepted += resp["accepted"].as_u64().unwrap_or(0) as usize;
            batch.clear();
            size = 0;
        }
    }
    Ok(accepted)
}
