//! Brute-force BM25 computed straight from the document text.
#![allow(dead_code)]

use litlab_core::model::Article;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct FixtureCorpus {
    pub name: String,
    pub articles: Vec<Article>,
    pub topics: Vec<String>,
}

pub fn fixture_corpora() -> Vec<FixtureCorpus> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../baseline/tests/fixtures/corpora.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Score of `query` for document `target`, looping over every document for
/// every statistic.
pub fn bm25(docs: &[Vec<String>], target: usize, query: &str) -> f64 {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let dl = docs[target].len() as f64;
    let mut score = 0.0;
    for q in words(query) {
        let tf = docs[target].iter().filter(|w| **w == q).count() as f64;
        if tf == 0.0 {
            continue;
        }
        let df = docs.iter().filter(|d| d.contains(&q)).count() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
    }
    score
}

pub fn doc_words(articles: &[Article]) -> Vec<Vec<String>> {
    articles.iter().map(|a| words(&format!("{} {}", a.title, a.abstract_text))).collect()
}
