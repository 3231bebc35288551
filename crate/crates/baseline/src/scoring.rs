use std::cmp::Ordering;
use std::collections::BTreeMap;

use litlab_core::model::{ArticleId, MAX_EXPLANATION_CHARS};
use num_traits::Float;
use serde::Serialize;

use crate::index::InvertedIndex;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredArticle<F> {
    pub article_id: ArticleId,
    pub total_score: F,
    pub per_topic_scores: BTreeMap<String, F>,
}

/// Sums the article's BM25 score over all topics; `None` for unknown articles.
pub fn score_article_for_user<F: Float>(
    index: &InvertedIndex<F>,
    topics: &[String],
    article: &ArticleId,
) -> Option<ScoredArticle<F>> {
    let mut per_topic_scores = BTreeMap::new();
    let mut total = F::zero();
    for t in topics {
        let s = index.bm25_topic_score(t, article)?;
        per_topic_scores.insert(t.clone(), s);
        total = total + s;
    }
    Some(ScoredArticle { article_id: article.clone(), total_score: total, per_topic_scores })
}

/// The `k` best candidates with a positive score, best first, ties by id.
/// Candidates missing from the index are skipped.
pub fn top_k_for_user<'a, F: Float>(
    index: &InvertedIndex<F>,
    topics: &[String],
    candidates: impl IntoIterator<Item = &'a ArticleId>,
    k: usize,
) -> Vec<ScoredArticle<F>> {
    let mut scored: Vec<_> = candidates
        .into_iter()
        .filter_map(|a| score_article_for_user(index, topics, a))
        .filter(|s| s.total_score > F::zero())
        .collect();
    scored.sort_by(|x, y| {
        y.total_score
            .partial_cmp(&x.total_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| x.article_id.cmp(&y.article_id))
    });
    scored.dedup_by(|a, b| a.article_id == b.article_id);
    scored.truncate(k);
    scored
}

const TEMPLATE_PREFIX: &str = "This article seems to be about ";

/// Names the (up to) three best-matching topics, or `None` if no topic
/// matched at all.
pub fn explain<F: Float>(scored: &ScoredArticle<F>) -> Option<String> {
    let mut topics: Vec<(&String, F)> =
        scored.per_topic_scores.iter().filter(|(_, s)| **s > F::zero()).map(|(t, s)| (t, *s)).collect();
    topics.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    // Asterisks inside a topic would break the bold markup.
    let bold: Vec<String> = topics.iter().take(3).map(|(t, _)| format!("**{}**", t.replace('*', ""))).collect();
    (1..=bold.len())
        .rev()
        .map(|n| format!("{TEMPLATE_PREFIX}{}", join_topics(&bold[..n])))
        .find(|e| e.chars().count() <= MAX_EXPLANATION_CHARS)
}

fn join_topics(bold: &[String]) -> String {
    match bold {
        [] => String::new(),
        [a] => a.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(pairs: &[(&str, f64)]) -> ScoredArticle<f64> {
        ScoredArticle {
            article_id: ArticleId::new("a"),
            total_score: pairs.iter().map(|p| p.1).sum(),
            per_topic_scores: pairs.iter().map(|(t, s)| (t.to_string(), *s)).collect(),
        }
    }

    #[test]
    fn three_topic_template() {
        let s = scored(&[("ml", 1.0), ("ir", 3.0), ("nlp", 2.0), ("db", 0.5)]);
        assert_eq!(explain(&s).unwrap(), "This article seems to be about **ir**, **nlp** and **ml**");
    }

    #[test]
    fn fewer_topics() {
        assert_eq!(
            explain(&scored(&[("ir", 2.0), ("nlp", 1.0), ("db", 0.0)])).unwrap(),
            "This article seems to be about **ir** and **nlp**"
        );
        assert_eq!(explain(&scored(&[("ir", 2.0), ("db", 0.0)])).unwrap(), "This article seems to be about **ir**");
        assert_eq!(explain(&scored(&[("db", 0.0)])), None);
    }

    #[test]
    fn tie_at_third_place_prefers_smaller_topic() {
        let s = scored(&[("a", 3.0), ("b", 2.0), ("zeta", 1.0), ("eta", 1.0)]);
        assert_eq!(explain(&s).unwrap(), "This article seems to be about **a**, **b** and **eta**");
    }

    #[test]
    fn long_topics_drop_to_fit() {
        let long = "x".repeat(190);
        let s = scored(&[(&long, 3.0), ("b", 2.0), (&"y".repeat(190), 1.0)]);
        let e = explain(&s).unwrap();
        assert!(e.chars().count() <= MAX_EXPLANATION_CHARS);
        assert_eq!(e, format!("This article seems to be about **{long}** and **b**"));
    }
}
