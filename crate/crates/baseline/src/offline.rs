//! Scoring a local corpus without a broker.

use std::collections::BTreeMap;

use litlab_core::model::Article;
use serde::Serialize;

use crate::index::Bm25Index;
use crate::scoring::{explain, top_k_for_user};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineRecommendation {
    pub article_id: String,
    pub score: f64,
    pub explanation: String,
}

/// Top-`k` recommendations for each user over the whole corpus.
pub fn score_corpus(
    corpus: &[Article],
    users: &BTreeMap<String, Vec<String>>,
    k: usize,
) -> BTreeMap<String, Vec<OfflineRecommendation>> {
    let index = Bm25Index::build(corpus);
    let ids: Vec<_> = index.article_ids().cloned().collect();
    users
        .iter()
        .map(|(user, topics)| {
            let recs = top_k_for_user(&index, topics, &ids, k)
                .into_iter()
                .filter_map(|s| {
                    Some(OfflineRecommendation {
                        explanation: explain(&s)?,
                        article_id: s.article_id.to_string(),
                        score: s.total_score,
                    })
                })
                .collect();
            (user.clone(), recs)
        })
        .collect()
}
