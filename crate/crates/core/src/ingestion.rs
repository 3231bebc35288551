//! Article ingestion and the rolling candidate pool.
//!
//! Feed files hold one JSON object per line:
//!
//! ```json
//! {"article_id":"2006.01234","title":"...","abstract":"...","authors":["..."],"categories":["cs.IR"],"published":"2020-06-01"}
//! ```

use std::collections::BTreeSet;
use std::io::BufRead;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::admin::{JobKind, JobOutcome};
use crate::error::{Error, Result};
use crate::model::{Article, ArticleId};
use crate::storage::Db;
use crate::Platform;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    #[default]
    File,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub article_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub authors: Vec<String>,
    pub categories: Vec<String>,
    pub published: NaiveDate,
    #[serde(default)]
    pub source: RecordSource,
}

impl ArticleRecord {
    /// Validates against the article invariants as of `today`.
    pub fn into_article(self, today: NaiveDate) -> std::result::Result<Article, String> {
        let id = self.article_id.trim();
        if id.is_empty() {
            return Err("empty article_id".into());
        }
        let title = self.title.split_whitespace().collect::<Vec<_>>().join(" ");
        if title.is_empty() {
            return Err("empty title".into());
        }
        if self.published > today {
            return Err(format!("published date {} is in the future", self.published));
        }
        Ok(Article {
            article_id: ArticleId::new(id),
            title,
            abstract_text: self.abstract_text.trim().to_owned(),
            authors: self.authors,
            categories: self.categories,
            published_date: self.published,
        })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

impl From<&Article> for ArticleRecord {
    fn from(a: &Article) -> Self {
        ArticleRecord {
            article_id: a.article_id.0.clone(),
            title: a.title.clone(),
            abstract_text: a.abstract_text.clone(),
            authors: a.authors.clone(),
            categories: a.categories.clone(),
            published: a.published_date,
            source: RecordSource::File,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejected {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub inserted: usize,
    pub updated: usize,
    pub unchanged: usize,
    pub rejected: Vec<Rejected>,
}

/// Parses a feed; malformed lines are reported, not fatal.
pub fn parse_records(input: impl BufRead, today: NaiveDate) -> Result<(Vec<Article>, Vec<Rejected>)> {
    let mut articles = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed =
            serde_json::from_str::<ArticleRecord>(&line).map_err(|e| e.to_string()).and_then(|r| r.into_article(today));
        match parsed {
            Ok(a) => articles.push(a),
            Err(reason) => rejected.push(Rejected { line: i + 1, reason }),
        }
    }
    Ok((articles, rejected))
}

/// Upserts articles; later records for the same id win.
pub fn ingest_articles(db: &mut Db, articles: Vec<Article>, rejected: Vec<Rejected>) -> IngestReport {
    let mut report = IngestReport { rejected, ..Default::default() };
    for a in articles {
        report.accepted += 1;
        match db.article(&a.article_id) {
            Some(existing) if existing == &a => report.unchanged += 1,
            Some(_) => {
                db.upsert_article(a);
                report.updated += 1;
            }
            None => {
                db.upsert_article(a);
                report.inserted += 1;
            }
        }
    }
    report
}

pub fn ingest_records(platform: &Platform, input: impl BufRead) -> Result<IngestReport> {
    let (articles, rejected) = parse_records(input, platform.today())?;
    platform.store().write(|db| Ok(ingest_articles(db, articles, rejected)))
}

/// Ingests a feed file as the `ingest` job of `date`.
pub fn run_ingest_job(platform: &Platform, date: NaiveDate, path: &std::path::Path) -> Result<IngestReport> {
    run_ingest_job_with(platform, date, || std::fs::File::open(path).map(std::io::BufReader::new).map_err(Error::from))
}

/// Runs the `ingest` job of `date` over whatever `open` yields; a failure to
/// open is recorded in the ledger like any other.
pub fn run_ingest_job_with<R: BufRead>(
    platform: &Platform,
    date: NaiveDate,
    open: impl FnOnce() -> Result<R>,
) -> Result<IngestReport> {
    let store = platform.store();
    store.write(|db| db.begin_job(JobKind::Ingest, date, platform.now()))?;
    let result = open().and_then(|input| ingest_records(platform, input));
    let (outcome, detail) = match &result {
        Ok(r) => (JobOutcome::Success, serde_json::to_string(r).ok()),
        Err(e) => (JobOutcome::Failed, Some(e.to_string())),
    };
    store.write(|db| Ok(db.finish_job(JobKind::Ingest, date, platform.now(), outcome, detail)))?;
    result
}

/// Ids of articles published in the `[0, window_days)` days before `on`,
/// sorted.
pub fn candidate_pool(db: &Db, on: NaiveDate, window_days: u32) -> BTreeSet<ArticleId> {
    db.articles().filter(|a| a.in_window(on, window_days)).map(|a| a.article_id.clone()).collect()
}

mod atom {
    use serde::Deserialize;

    #[derive(Debug, Deserialize)]
    pub struct Feed {
        #[serde(default)]
        pub entry: Vec<Entry>,
    }

    #[derive(Debug, Deserialize)]
    pub struct Entry {
        pub id: String,
        pub title: String,
        #[serde(default)]
        pub summary: String,
        pub published: String,
        #[serde(default)]
        pub author: Vec<Author>,
        #[serde(default)]
        pub category: Vec<Category>,
    }

    #[derive(Debug, Deserialize)]
    pub struct Author {
        pub name: String,
    }

    #[derive(Debug, Deserialize)]
    pub struct Category {
        #[serde(rename = "@term")]
        pub term: String,
    }
}

/// Strips the abs-URL prefix and version suffix: `http://arxiv.org/abs/2006.01234v2` → `2006.01234`.
pub fn arxiv_id_from_url(url: &str) -> String {
    let tail = url.rsplit_once("/abs/").map_or(url, |(_, t)| t);
    match tail.rfind('v') {
        Some(pos) if pos > 0 && tail[pos + 1..].chars().all(|c| c.is_ascii_digit()) && pos + 1 < tail.len() => {
            tail[..pos].to_owned()
        }
        _ => tail.to_owned(),
    }
}

/// Parses an arXiv API Atom response into feed records.
pub fn parse_arxiv_atom(xml: &str) -> Result<Vec<ArticleRecord>> {
    let feed: atom::Feed = quick_xml::de::from_str(xml).map_err(|e| Error::Invalid(format!("atom feed: {e}")))?;
    let collapse = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    feed.entry
        .into_iter()
        .map(|e| {
            let published = e
                .published
                .get(..10)
                .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
                .ok_or_else(|| Error::Invalid(format!("bad published date `{}`", e.published)))?;
            Ok(ArticleRecord {
                article_id: arxiv_id_from_url(&e.id),
                title: collapse(&e.title),
                abstract_text: collapse(&e.summary),
                authors: e.author.into_iter().map(|a| a.name).collect(),
                categories: e.category.into_iter().map(|c| c.term).collect(),
                published,
                source: RecordSource::Remote,
            })
        })
        .collect()
}
