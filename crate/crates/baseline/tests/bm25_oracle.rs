mod oracle;

use chrono::NaiveDate;
use litlab_baseline::{explain, score_article_for_user, top_k_for_user, Bm25Index, InvertedIndex};
use litlab_core::model::{Article, ArticleId};
use oracle::{bm25, doc_words, fixture_corpora, words};
use proptest::prelude::*;

fn article(id: &str, title: &str, abs: &str) -> Article {
    Article {
        article_id: ArticleId::new(id),
        title: title.into(),
        abstract_text: abs.into(),
        authors: vec![],
        categories: vec![],
        published_date: NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
    }
}

#[test]
fn fixture_corpora_match_the_brute_force_formula() {
    for c in fixture_corpora() {
        assert!(c.articles.len() <= 50);
        let index = Bm25Index::build(&c.articles);
        let docs = doc_words(&c.articles);
        for (i, a) in c.articles.iter().enumerate() {
            let mut sum = 0.0;
            for t in &c.topics {
                let got = index.bm25_topic_score(t, &a.article_id).unwrap();
                let want = bm25(&docs, i, t);
                assert!((got - want).abs() <= 1e-9, "{} {} {t}: {got} vs {want}", c.name, a.article_id);
                sum += want;
            }
            let scored = score_article_for_user(&index, &c.topics, &a.article_id).unwrap();
            assert!((scored.total_score - sum).abs() <= 1e-9);
        }
    }
}

#[test]
fn single_document_title_query() {
    let a = article("x", "Neural Ranking Models", "we study neural ranking with bm25 features");
    let index = Bm25Index::build([&a]);
    let got = index.bm25_topic_score("Neural Ranking Models", &a.article_id).unwrap();
    assert!(got > 0.0);
    assert!((got - bm25(&doc_words(&[a]), 0, "Neural Ranking Models")).abs() < 1e-12);
}

#[test]
fn unknown_article_has_no_score() {
    let index = Bm25Index::build(&[article("x", "t", "")]);
    assert!(index.bm25_topic_score("t", &ArticleId::new("y")).is_none());
}

#[test]
fn ranking_matches_a_full_sort() {
    let c = &fixture_corpora()[9];
    let index = Bm25Index::build(&c.articles);
    let docs = doc_words(&c.articles);
    let ids: Vec<ArticleId> = c.articles.iter().map(|a| a.article_id.clone()).collect();
    let mut oracle: Vec<(f64, &ArticleId)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (c.topics.iter().map(|t| bm25(&docs, i, t)).sum(), id))
        .filter(|(s, _)| *s > 0.0)
        .collect();
    oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    let got = top_k_for_user(&index, &c.topics, &ids, 10);
    let want: Vec<&ArticleId> = oracle.iter().take(10).map(|(_, id)| *id).collect();
    assert_eq!(got.iter().map(|s| &s.article_id).collect::<Vec<_>>(), want);

    let all = top_k_for_user(&index, &c.topics, &ids, 1000);
    assert_eq!(all.len(), oracle.len());
    assert!(top_k_for_user(&index, &["nothing matches".to_owned()], &ids, 10).is_empty());
}

#[test]
fn generic_over_the_float_type() {
    let c = &fixture_corpora()[5];
    let i64f = Bm25Index::build(&c.articles);
    let i32f: InvertedIndex<f32> = InvertedIndex::build(&c.articles);
    for a in &c.articles {
        for t in &c.topics {
            let x = i64f.bm25_topic_score(t, &a.article_id).unwrap();
            let y = f64::from(i32f.bm25_topic_score(t, &a.article_id).unwrap());
            assert!((x - y).abs() <= 1e-4 * x.abs().max(1.0));
        }
    }
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Article>> {
    let word = prop::sample::select(vec!["rank", "query", "bm25", "graph", "click", "user", "Model", "IR"]);
    let text = prop::collection::vec(word, 0..12).prop_map(|w| w.join(" "));
    prop::collection::vec((text.clone(), text), 1..50)
        .prop_map(|docs| docs.into_iter().enumerate().map(|(i, (t, a))| article(&format!("d{i:02}"), &t, &a)).collect())
}

fn topics_strategy() -> impl Strategy<Value = Vec<String>> {
    let word = prop::sample::select(vec!["rank", "query", "bm25", "graph", "click", "user", "model", "ir", "absent"]);
    prop::collection::vec(prop::collection::vec(word, 1..3).prop_map(|w| w.join(" ")), 0..4)
}

proptest! {
    #[test]
    fn index_equals_oracle_on_small_corpora(corpus in corpus_strategy(), topics in topics_strategy()) {
        let index = Bm25Index::build(&corpus);
        let docs = doc_words(&corpus);
        for (i, a) in corpus.iter().enumerate() {
            for t in &topics {
                let got = index.bm25_topic_score(t, &a.article_id).unwrap();
                prop_assert!((got - bm25(&docs, i, t)).abs() <= 1e-9);
                prop_assert!(got >= 0.0);
                let occurs = words(t).iter().any(|w| docs[i].contains(w));
                prop_assert_eq!(got > 0.0, occurs);
            }
        }
    }

    #[test]
    fn adding_a_topic_never_lowers_a_score(corpus in corpus_strategy(), topics in topics_strategy(), extra in "[a-z]{1,6}") {
        let index = Bm25Index::build(&corpus);
        let mut more = topics.clone();
        more.push(extra);
        for a in &corpus {
            let before = score_article_for_user(&index, &topics, &a.article_id).unwrap().total_score;
            let after = score_article_for_user(&index, &more, &a.article_id).unwrap().total_score;
            prop_assert!(after >= before);
        }
    }

    #[test]
    fn explanations_name_only_positive_topics(corpus in corpus_strategy(), topics in topics_strategy()) {
        let index = Bm25Index::build(&corpus);
        for a in &corpus {
            let s = score_article_for_user(&index, &topics, &a.article_id).unwrap();
            match explain(&s) {
                None => prop_assert!(s.per_topic_scores.values().all(|v| *v <= 0.0)),
                Some(e) => {
                    litlab_core::model::validate_explanation(&e).unwrap();
                    let named: Vec<&str> = e.split("**").skip(1).step_by(2).collect();
                    prop_assert!(!named.is_empty() && named.len() <= 3);
                    for t in named {
                        prop_assert!(s.per_topic_scores[t] > 0.0);
                    }
                }
            }
        }
    }
}
