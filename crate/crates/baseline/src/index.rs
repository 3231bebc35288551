use std::collections::{BTreeMap, HashMap};

use litlab_core::model::{Article, ArticleId};
use num_traits::Float;

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// The indexed field of an article.
pub fn article_text(a: &Article) -> String {
    format!("{} {}", a.title, a.abstract_text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params<F> {
    pub k1: F,
    pub b: F,
}

impl<F: Float> Default for Bm25Params<F> {
    fn default() -> Self {
        Bm25Params { k1: F::from(1.2).unwrap(), b: F::from(0.75).unwrap() }
    }
}

#[derive(Debug, Clone)]
struct Doc {
    id: ArticleId,
    len: usize,
    tf: HashMap<String, u32>,
}

/// Term statistics over a fixed article set.
#[derive(Debug, Clone)]
pub struct InvertedIndex<F> {
    docs: Vec<Doc>,
    by_id: HashMap<ArticleId, usize>,
    /// term → (doc, tf), docs in index order.
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    avgdl: F,
    params: Bm25Params<F>,
}

impl<F: Float> InvertedIndex<F> {
    pub fn build<'a>(articles: impl IntoIterator<Item = &'a Article>) -> Self {
        Self::with_params(articles, Bm25Params::default())
    }

    /// Later duplicates of an article id replace earlier ones.
    pub fn with_params<'a>(articles: impl IntoIterator<Item = &'a Article>, params: Bm25Params<F>) -> Self {
        let mut docs: Vec<Doc> = Vec::new();
        let mut by_id = HashMap::new();
        for a in articles {
            let tokens = tokenize(&article_text(a));
            let mut tf = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_insert(0) += 1;
            }
            let doc = Doc { id: a.article_id.clone(), len: tokens.len(), tf };
            match by_id.get(&a.article_id) {
                Some(&i) => docs[i] = doc,
                None => {
                    by_id.insert(a.article_id.clone(), docs.len());
                    docs.push(doc);
                }
            }
        }
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        for (i, d) in docs.iter().enumerate() {
            for (t, &n) in &d.tf {
                postings.entry(t.clone()).or_default().push((i, n));
            }
        }
        let total: usize = docs.iter().map(|d| d.len).sum();
        let avgdl = if docs.is_empty() { F::zero() } else { F::from(total).unwrap() / F::from(docs.len()).unwrap() };
        InvertedIndex { docs, by_id, postings, avgdl, params }
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avgdl(&self) -> F {
        self.avgdl
    }

    pub fn doc_len(&self, id: &ArticleId) -> Option<usize> {
        self.by_id.get(id).map(|&i| self.docs[i].len)
    }

    pub fn contains(&self, id: &ArticleId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn article_ids(&self) -> impl Iterator<Item = &ArticleId> {
        self.docs.iter().map(|d| &d.id)
    }

    pub fn idf(&self, term: &str) -> F {
        let n = F::from(self.docs.len()).unwrap();
        let df = F::from(self.doc_freq(term)).unwrap();
        let half = F::from(0.5).unwrap();
        (F::one() + (n - df + half) / (df + half)).ln()
    }

    fn term_score(&self, term: &str, doc: &Doc) -> F {
        let Some(&tf) = doc.tf.get(term) else {
            return F::zero();
        };
        let Bm25Params { k1, b } = self.params;
        let tf = F::from(tf).unwrap();
        let dl = F::from(doc.len).unwrap();
        let norm = F::one() - b + b * dl / self.avgdl;
        self.idf(term) * (tf * (k1 + F::one())) / (tf + k1 * norm)
    }

    /// BM25 of `topic` (as a query) against one article; `None` if the
    /// article is not indexed.
    pub fn bm25_topic_score(&self, topic: &str, article: &ArticleId) -> Option<F> {
        let doc = &self.docs[*self.by_id.get(article)?];
        Some(tokenize(topic).iter().fold(F::zero(), |acc, t| acc + self.term_score(t, doc)))
    }
}

pub type Bm25Index = InvertedIndex<f64>;

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;

    fn doc(id: &str, title: &str, abs: &str) -> Article {
        Article {
            article_id: ArticleId::new(id),
            title: title.into(),
            abstract_text: abs.into(),
            authors: vec![],
            categories: vec![],
            published_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
        }
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("BM25 Ranking"), ["bm25", "ranking"]);
        assert_eq!(tokenize("  Learning-to-rank, (LTR)!  "), ["learning", "to", "rank", "ltr"]);
        assert!(tokenize(" -- ").is_empty());
    }

    #[test]
    fn one_document_terms() {
        let idx = Bm25Index::build(&[doc("a", "BM25 Ranking", "")]);
        assert_eq!(idx.terms().collect::<Vec<_>>(), ["bm25", "ranking"]);
        assert_eq!(idx.doc_count(), 1);
    }

    #[test]
    fn empty_corpus() {
        let idx = Bm25Index::build(&[]);
        assert_eq!(idx.doc_count(), 0);
        assert_eq!(idx.avgdl(), 0.0);
    }

    #[test]
    fn avgdl_by_hand() {
        // 2 + 3, 1 + 0, 4 + 2 tokens.
        let idx = Bm25Index::build(&[
            doc("a", "neural ranking", "with bm25 features"),
            doc("b", "graphs", ""),
            doc("c", "a b c d", "e-f"),
        ]);
        assert_eq!(idx.doc_len(&ArticleId::new("a")), Some(5));
        assert_eq!(idx.doc_len(&ArticleId::new("b")), Some(1));
        assert_eq!(idx.doc_len(&ArticleId::new("c")), Some(6));
        assert_eq!(idx.avgdl(), 4.0);
    }

    #[test]
    fn absent_term_scores_zero() {
        let idx = Bm25Index::build(&[doc("a", "neural ranking", ""), doc("b", "graphs", "")]);
        assert_eq!(idx.bm25_topic_score("bandits", &ArticleId::new("a")), Some(0.0));
    }
}
