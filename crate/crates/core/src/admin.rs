//! Operator tasks: system registration, job ledger, job orchestration and
//! the leaderboard.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::accounts::sweep_expired_topics;
use crate::digest::{run_digest_job, DigestReport, EmailSink};
use crate::error::{Error, Result};
use crate::evaluation::{leaderboard, of_kind, Period, SystemScorecard};
use crate::ingestion::{run_ingest_job, IngestReport};
use crate::model::{ExperimentalSystem, ItemKind, SystemId};
use crate::multileave::{run_daily_job, DailyReport};
use crate::Platform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Ingest,
    Interleave,
    Digest,
    ExpireSweep,
}

impl JobKind {
    pub const ALL: [JobKind; 4] = [JobKind::Ingest, JobKind::Interleave, JobKind::Digest, JobKind::ExpireSweep];

    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::Ingest => "ingest",
            JobKind::Interleave => "interleave",
            JobKind::Digest => "digest",
            JobKind::ExpireSweep => "expire_sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobOutcome {
    Running,
    Success,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobLedgerEntry {
    pub job: JobKind,
    pub date: NaiveDate,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub outcome: JobOutcome,
    pub detail: Option<String>,
}

/// Registers a system and returns it with its freshly generated API key.
pub fn create_system(platform: &Platform, name: &str) -> Result<ExperimentalSystem> {
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::Invalid("system name must not be empty".into()));
    }
    platform.store().write(|db| db.insert_system(name, crate::random_token()))
}

pub fn set_system_active(platform: &Platform, id: &SystemId, active: bool) -> Result<()> {
    platform.store().write(|db| db.set_system_active(id, active))
}

pub fn expire_sweep(platform: &Platform, date: NaiveDate) -> Result<usize> {
    let now = platform.now();
    let store = platform.store();
    store.write(|db| db.begin_job(JobKind::ExpireSweep, date, now))?;
    let result = store.write(|db| sweep_expired_topics(db, date, now));
    let (outcome, detail) = match &result {
        Ok(n) => (JobOutcome::Success, Some(format!("{n} topics expired"))),
        Err(e) => (JobOutcome::Failed, Some(e.to_string())),
    };
    store.write(|db| Ok(db.finish_job(JobKind::ExpireSweep, date, platform.now(), outcome, detail)))?;
    result
}

/// Where the ingest job of `date` reads its records, if configured.
pub fn ingest_path(platform: &Platform, date: NaiveDate) -> Option<PathBuf> {
    let pattern = platform.config().jobs.ingest_file.as_ref()?;
    Some(PathBuf::from(pattern.replace("{date}", &date.format("%Y-%m-%d").to_string())))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunAllReport {
    pub ingest: Option<IngestReport>,
    pub interleave: Option<DailyReport>,
    pub digest: Option<DigestReport>,
    pub topics_expired: Option<usize>,
    /// Jobs that already succeeded for this date and were not rerun.
    pub skipped: Vec<JobKind>,
}

/// Runs ingest, interleave, digest and the expiry sweep in order, skipping
/// steps that already succeeded and stopping at the first failure.
pub fn run_all(platform: &Platform, date: NaiveDate, sink: &dyn EmailSink) -> Result<RunAllReport> {
    let mut report = RunAllReport::default();
    let done = |job| {
        platform.store().read(|db| {
            db.job_entries().iter().any(|e| {
                e.job == job && e.date == date && matches!(e.outcome, JobOutcome::Success | JobOutcome::Skipped)
            })
        })
    };
    for job in JobKind::ALL {
        if done(job) {
            report.skipped.push(job);
            continue;
        }
        match job {
            JobKind::Ingest => match ingest_path(platform, date) {
                Some(path) => report.ingest = Some(run_ingest_job(platform, date, &path)?),
                None => {
                    let now = platform.now();
                    platform.store().write(|db| {
                        Ok(db.finish_job(
                            job,
                            date,
                            now,
                            JobOutcome::Skipped,
                            Some("no ingest source configured".into()),
                        ))
                    })?;
                }
            },
            JobKind::Interleave => report.interleave = Some(run_daily_job(platform, date)?),
            JobKind::Digest => report.digest = Some(run_digest_job(platform, date, sink)?),
            JobKind::ExpireSweep => report.topics_expired = Some(expire_sweep(platform, date)?),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub system: String,
    pub impressions: u64,
    pub mean_normalized_reward: f64,
}

/// Leaderboard over `[from, to]`, optionally restricted to one item kind.
pub fn compute_leaderboard(platform: &Platform, period: Period, kind: Option<ItemKind>) -> Vec<SystemScorecard<f64>> {
    let weights = &platform.config().weights;
    platform.store().read(|db| match kind {
        Some(k) => leaderboard(period, of_kind(k, db.scored_impressions()), weights),
        None => leaderboard(period, db.scored_impressions(), weights),
    })
}

/// Rows as shown to one participant: their own system by name, others as
/// `system-<n>` where `n` is the system's registration ordinal.
pub fn pseudonymized(
    platform: &Platform,
    board: &[SystemScorecard<f64>],
    viewer: Option<&SystemId>,
) -> Vec<LeaderboardRow> {
    let names: BTreeMap<SystemId, (usize, String)> = platform
        .store()
        .read(|db| db.systems().enumerate().map(|(i, s)| (s.system_id.clone(), (i + 1, s.name.clone()))).collect());
    board
        .iter()
        .enumerate()
        .map(|(i, card)| {
            let (ordinal, name) = names.get(&card.system_id).cloned().unwrap_or((0, card.system_id.to_string()));
            let system = match viewer {
                None => name,
                Some(v) if *v == card.system_id => name,
                Some(_) => format!("system-{ordinal}"),
            };
            LeaderboardRow {
                rank: i + 1,
                system,
                impressions: card.impressions,
                mean_normalized_reward: card.mean_normalized_reward,
            }
        })
        .collect()
}
