//! Synthetic corpus and users with hidden interests.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use litlab_baseline::tokenize;
use litlab_core::ingestion::{ArticleRecord, RecordSource};
use litlab_core::model::Article;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::Serialize;

use crate::config::SimConfig;

const FILLER: &[&str] = &[
    "study",
    "method",
    "results",
    "approach",
    "analysis",
    "propose",
    "novel",
    "framework",
    "data",
    "evaluate",
    "show",
    "paper",
    "present",
    "performance",
    "experiments",
    "using",
    "based",
    "model",
    "task",
    "new",
    "improve",
    "effective",
    "large",
    "scale",
    "setting",
    "problem",
    "work",
    "benchmark",
    "compare",
    "existing",
];

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ren", "tu", "sa", "vo", "pel", "dri", "nu", "qua", "zen"];

/// Vocabulary split into themes; theme terms never collide with filler.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub themes: Vec<Vec<String>>,
}

impl Vocabulary {
    pub fn new(n_themes: usize, terms_per_theme: usize) -> Self {
        let word = |theme: usize, i: usize| {
            let s = SYLLABLES.len();
            format!("{}{}{}x{theme}", SYLLABLES[i % s], SYLLABLES[(i / s) % s], SYLLABLES[theme % s])
        };
        Vocabulary { themes: (0..n_themes).map(|t| (0..terms_per_theme).map(|i| word(t, i)).collect()).collect() }
    }
}

/// A user's hidden interest: weighted terms and interaction propensities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticUser {
    pub email: String,
    pub hidden_interest_terms: BTreeMap<String, f64>,
    pub click_base_rate: f64,
    pub save_rate_given_click: f64,
    /// Declared profile topics: the user's strongest interests.
    pub topics: Vec<String>,
}

impl SyntheticUser {
    /// Weighted share of the hidden terms that occur in `tokens`, in [0, 1].
    pub fn relevance(&self, tokens: &BTreeSet<String>) -> f64 {
        let total: f64 = self.hidden_interest_terms.values().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let hit: f64 = self.hidden_interest_terms.iter().filter(|(t, _)| tokens.contains(*t)).map(|(_, w)| w).sum();
        (hit / total).clamp(0.0, 1.0)
    }
}

pub fn article_terms(a: &Article) -> BTreeSet<String> {
    tokenize(&format!("{} {}", a.title, a.abstract_text)).into_iter().collect()
}

/// Users drawing their hidden terms from one main theme.
pub fn generate_population(cfg: &SimConfig, vocab: &Vocabulary, rng: &mut impl Rng) -> Vec<SyntheticUser> {
    (0..cfg.n_users)
        .map(|i| {
            let theme = rng.random_range(0..vocab.themes.len());
            let terms: Vec<&String> = vocab.themes[theme].choose_multiple(rng, cfg.hidden_terms).collect();
            let hidden: BTreeMap<String, f64> =
                terms.iter().map(|t| ((*t).clone(), rng.random_range(0.5..1.5))).collect();
            let mut by_weight: Vec<(&String, &f64)> = hidden.iter().collect();
            by_weight.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
            let topics = by_weight.iter().take(2).map(|(t, _)| (*t).clone()).collect();
            SyntheticUser {
                email: format!("user{i:05}@sim.invalid"),
                hidden_interest_terms: hidden,
                click_base_rate: cfg.click_base_rate,
                save_rate_given_click: cfg.save_rate_given_click,
                topics,
            }
        })
        .collect()
}

/// One day's new articles, each mostly about a single theme.
pub fn generate_articles(
    vocab: &Vocabulary,
    published: NaiveDate,
    first_number: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<ArticleRecord> {
    (0..count)
        .map(|i| {
            let theme = &vocab.themes[rng.random_range(0..vocab.themes.len())];
            let pick = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<String> {
                (0..n).map(|_| theme[rng.random_range(0..theme.len())].clone()).collect()
            };
            let mut title = pick(3, rng);
            title.push(FILLER.choose(rng).expect("non-empty").to_string());
            let mut abs = pick(7, rng);
            abs.extend((0..20).map(|_| FILLER.choose(rng).expect("non-empty").to_string()));
            abs.shuffle(rng);
            ArticleRecord {
                article_id: format!("{}.{:05}", published.format("%y%m"), first_number + i),
                title: title.join(" "),
                abstract_text: abs.join(" ") + ".",
                authors: vec![format!("Author {}", first_number + i)],
                categories: vec!["cs.IR".into()],
                published,
                source: RecordSource::File,
            }
        })
        .collect()
}
