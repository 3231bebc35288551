//! Persistence for every domain record.
//!
//! [`Db`] is the whole platform state; [`Store`] wraps it in a mutex so each
//! closure passed to [`Store::write`] runs as one serializable transaction.
//! A file-backed store snapshots the state atomically after every successful
//! write and holds an exclusive OS lock on `<path>.lock` while open.
//!
//! `Db` methods that can fail check all preconditions before mutating, so a
//! returned error leaves the state untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::accounts::Session;
use crate::admin::{JobKind, JobLedgerEntry, JobOutcome};
use crate::error::{Error, Result};
use crate::model::{
    Article, ArticleId, EventId, ExperimentalSystem, FeedbackRecord, Impression, ImpressionId, InteractionEvent,
    InteractionType, ItemKind, Recommendation, Slot, SystemId, TopicRecommendation, UserId, UserProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingAction {
    ClickedEmail,
    SeenEmail,
}

impl TrackingAction {
    pub fn interaction(self) -> InteractionType {
        match self {
            TrackingAction::ClickedEmail => InteractionType::ClickedEmail,
            TrackingAction::SeenEmail => InteractionType::SeenEmail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingToken {
    pub token: String,
    pub impression_id: ImpressionId,
    pub item_id: String,
    pub action: TrackingAction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserRecord {
    pub profile: UserProfile,
    #[serde(default)]
    pub password_hash: Option<String>,
}

/// An impression before the store assigns its id.
#[derive(Debug, Clone)]
pub struct ImpressionDraft {
    pub user_id: UserId,
    pub date: NaiveDate,
    pub kind: ItemKind,
    pub systems: Vec<SystemId>,
    pub slots: Vec<Slot>,
}

/// An interaction before the store assigns its id.
#[derive(Debug, Clone)]
pub struct NewEvent {
    pub impression_id: ImpressionId,
    pub user_id: UserId,
    pub item_id: String,
    pub event_type: InteractionType,
    pub occurred_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordOutcome {
    Recorded,
    Duplicate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PushOutcome {
    pub accepted: usize,
    /// Items dropped because they were already shown (or, for topics, are
    /// already in the profile or were rejected).
    pub ignored: usize,
}

/// Everything stored about one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserExport {
    pub profile: UserProfile,
    pub impressions: Vec<Impression>,
    pub interactions: Vec<InteractionEvent>,
    pub feedback: Vec<FeedbackRecord>,
    pub library: Vec<ArticleId>,
}

impl UserExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("export serializes")
    }
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
struct Counters {
    user: u64,
    system: u64,
    impression: u64,
    event: u64,
}

#[derive(Debug, Default, Clone)]
struct Index {
    email: HashMap<String, UserId>,
    api_keys: HashMap<String, SystemId>,
    user_impressions: HashMap<UserId, Vec<ImpressionId>>,
    shown: HashMap<(UserId, ItemKind), HashSet<String>>,
    tokens: HashMap<(ImpressionId, String, TrackingAction), String>,
}

type Stacks<K, V> = BTreeMap<UserId, BTreeMap<SystemId, BTreeMap<K, V>>>;

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Db {
    counters: Counters,
    users: BTreeMap<UserId, UserRecord>,
    sessions: BTreeMap<String, Session>,
    systems: BTreeMap<SystemId, ExperimentalSystem>,
    articles: BTreeMap<ArticleId, Article>,
    article_stacks: Stacks<ArticleId, Recommendation>,
    topic_stacks: Stacks<String, TopicRecommendation>,
    impressions: BTreeMap<ImpressionId, Impression>,
    events: BTreeMap<ImpressionId, Vec<InteractionEvent>>,
    feedback: Vec<FeedbackRecord>,
    library: BTreeMap<UserId, BTreeSet<ArticleId>>,
    rejected_topics: BTreeMap<UserId, BTreeSet<String>>,
    tracking: BTreeMap<String, TrackingToken>,
    sent_digests: BTreeMap<UserId, BTreeSet<NaiveDate>>,
    jobs: Vec<JobLedgerEntry>,
    #[serde(skip)]
    idx: Index,
}

fn email_key(email: &str) -> String {
    email.trim().to_lowercase()
}

/// Stack order: score descending, then earlier submission, then id.
fn stack_order(a: &Recommendation, b: &Recommendation) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.submitted_at.cmp(&b.submitted_at)).then(a.article_id.cmp(&b.article_id))
}

fn topic_stack_order(a: &TopicRecommendation, b: &TopicRecommendation) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.submitted_at.cmp(&b.submitted_at)).then(a.topic.key().cmp(b.topic.key()))
}

impl Db {
    fn rebuild_index(&mut self) {
        let mut idx = Index::default();
        for (id, rec) in &self.users {
            idx.email.insert(email_key(&rec.profile.email), id.clone());
        }
        for (id, sys) in &self.systems {
            idx.api_keys.insert(sys.api_key.clone(), id.clone());
        }
        for imp in self.impressions.values() {
            Self::index_impression(&mut idx, imp);
        }
        for t in self.tracking.values() {
            idx.tokens.insert((t.impression_id.clone(), t.item_id.clone(), t.action), t.token.clone());
        }
        self.idx = idx;
    }

    fn index_impression(idx: &mut Index, imp: &Impression) {
        if imp.user_id.is_tombstone() {
            return;
        }
        idx.user_impressions.entry(imp.user_id.clone()).or_default().push(imp.impression_id.clone());
        let shown = idx.shown.entry((imp.user_id.clone(), imp.kind)).or_default();
        shown.extend(imp.slots.iter().map(|s| s.item_id.clone()));
    }

    // ---- users -------------------------------------------------------------

    pub fn next_user_id(&mut self) -> UserId {
        self.counters.user += 1;
        UserId(format!("u{:06}", self.counters.user))
    }

    pub fn insert_user(&mut self, profile: UserProfile, password_hash: Option<String>) -> Result<()> {
        let key = email_key(&profile.email);
        if self.idx.email.contains_key(&key) {
            return Err(Error::Conflict("email already registered".into()));
        }
        if self.users.contains_key(&profile.user_id) {
            return Err(Error::Conflict(format!("user `{}` exists", profile.user_id)));
        }
        self.idx.email.insert(key, profile.user_id.clone());
        self.users.insert(profile.user_id.clone(), UserRecord { profile, password_hash });
        Ok(())
    }

    pub fn user(&self, id: &UserId) -> Option<&UserProfile> {
        self.users.get(id).map(|r| &r.profile)
    }

    pub fn user_record(&self, id: &UserId) -> Option<&UserRecord> {
        self.users.get(id)
    }

    pub fn user_by_email(&self, email: &str) -> Option<&UserRecord> {
        self.idx.email.get(&email_key(email)).and_then(|id| self.users.get(id))
    }

    pub fn update_profile(&mut self, profile: UserProfile) -> Result<()> {
        let old = self.users.get(&profile.user_id).ok_or_else(|| Error::not_found("user", &profile.user_id))?;
        let old_key = email_key(&old.profile.email);
        let new_key = email_key(&profile.email);
        if old_key != new_key && self.idx.email.contains_key(&new_key) {
            return Err(Error::Conflict("email already registered".into()));
        }
        self.idx.email.remove(&old_key);
        self.idx.email.insert(new_key, profile.user_id.clone());
        let rec = self.users.get_mut(&profile.user_id).expect("checked above");
        rec.profile = profile;
        Ok(())
    }

    pub fn set_password_hash(&mut self, id: &UserId, hash: String) -> Result<()> {
        let rec = self.users.get_mut(id).ok_or_else(|| Error::not_found("user", id))?;
        rec.password_hash = Some(hash);
        Ok(())
    }

    /// Active users in id order.
    pub fn active_users(&self) -> impl Iterator<Item = &UserProfile> {
        self.users.values().map(|r| &r.profile).filter(|p| p.active)
    }

    // ---- sessions ----------------------------------------------------------

    pub fn insert_session(&mut self, session: Session) {
        self.sessions.insert(session.token.clone(), session);
    }

    pub fn session(&self, token: &str) -> Option<&Session> {
        self.sessions.get(token)
    }

    pub fn session_mut(&mut self, token: &str) -> Option<&mut Session> {
        self.sessions.get_mut(token)
    }

    pub fn remove_session(&mut self, token: &str) -> Option<Session> {
        self.sessions.remove(token)
    }

    // ---- systems -----------------------------------------------------------

    pub fn insert_system(&mut self, name: &str, api_key: String) -> Result<ExperimentalSystem> {
        if self.systems.values().any(|s| s.name == name) {
            return Err(Error::Conflict(format!("system name `{name}` is taken")));
        }
        if self.idx.api_keys.contains_key(&api_key) {
            return Err(Error::Conflict("api key collision".into()));
        }
        self.counters.system += 1;
        let system = ExperimentalSystem {
            system_id: SystemId(format!("s{:04}", self.counters.system)),
            api_key,
            name: name.to_owned(),
            active: true,
            impression_count: 0,
        };
        self.idx.api_keys.insert(system.api_key.clone(), system.system_id.clone());
        self.systems.insert(system.system_id.clone(), system.clone());
        Ok(system)
    }

    pub fn system(&self, id: &SystemId) -> Option<&ExperimentalSystem> {
        self.systems.get(id)
    }

    pub fn system_by_key(&self, api_key: &str) -> Option<&ExperimentalSystem> {
        self.idx.api_keys.get(api_key).and_then(|id| self.systems.get(id))
    }

    pub fn system_by_name(&self, name: &str) -> Option<&ExperimentalSystem> {
        self.systems.values().find(|s| s.name == name)
    }

    pub fn systems(&self) -> impl Iterator<Item = &ExperimentalSystem> {
        self.systems.values()
    }

    pub fn set_system_active(&mut self, id: &SystemId, active: bool) -> Result<()> {
        let s = self.systems.get_mut(id).ok_or_else(|| Error::not_found("system", id))?;
        s.active = active;
        Ok(())
    }

    /// Impression counts; unknown systems count 0.
    pub fn impression_counts<'a>(&self, system_ids: impl IntoIterator<Item = &'a SystemId>) -> BTreeMap<SystemId, u64> {
        system_ids.into_iter().map(|id| (id.clone(), self.systems.get(id).map_or(0, |s| s.impression_count))).collect()
    }

    // ---- articles ----------------------------------------------------------

    /// Inserts or replaces an article; returns true when it was new.
    pub fn upsert_article(&mut self, article: Article) -> bool {
        self.articles.insert(article.article_id.clone(), article).is_none()
    }

    pub fn article(&self, id: &ArticleId) -> Option<&Article> {
        self.articles.get(id)
    }

    pub fn articles(&self) -> impl Iterator<Item = &Article> {
        self.articles.values()
    }

    // ---- recommendation stacks ---------------------------------------------

    pub fn is_shown(&self, user: &UserId, kind: ItemKind, item: &str) -> bool {
        self.idx.shown.get(&(user.clone(), kind)).is_some_and(|s| s.contains(item))
    }

    /// Items of `kind` that appeared in any of the user's impressions.
    pub fn shown_items(&self, user: &UserId, kind: ItemKind) -> BTreeSet<String> {
        self.idx.shown.get(&(user.clone(), kind)).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    /// Upserts recommendations into their (user, system) stacks, dropping
    /// articles the user has already been shown.
    pub fn push_recommendations(&mut self, recs: Vec<Recommendation>) -> PushOutcome {
        let mut out = PushOutcome::default();
        for rec in recs {
            if self.is_shown(&rec.user_id, ItemKind::Article, rec.article_id.as_str()) {
                out.ignored += 1;
                continue;
            }
            self.article_stacks
                .entry(rec.user_id.clone())
                .or_default()
                .entry(rec.system_id.clone())
                .or_default()
                .insert(rec.article_id.clone(), rec);
            out.accepted += 1;
        }
        out
    }

    fn topic_suppressed(&self, user: &UserId, key: &str) -> bool {
        self.is_shown(user, ItemKind::Topic, key)
            || self.rejected_topics.get(user).is_some_and(|r| r.contains(key))
            || self.user(user).is_some_and(|p| p.has_topic(key))
    }

    pub fn push_topic_recommendations(&mut self, recs: Vec<TopicRecommendation>) -> PushOutcome {
        let mut out = PushOutcome::default();
        for rec in recs {
            if self.topic_suppressed(&rec.user_id, rec.topic.key()) {
                out.ignored += 1;
                continue;
            }
            self.topic_stacks
                .entry(rec.user_id.clone())
                .or_default()
                .entry(rec.system_id.clone())
                .or_default()
                .insert(rec.topic.key().to_owned(), rec);
            out.accepted += 1;
        }
        out
    }

    /// The `k` best stack entries; entries stay until shown or expired.
    pub fn take_top_k(&self, user: &UserId, system: &SystemId, k: usize) -> Vec<Recommendation> {
        let Some(stack) = self.article_stacks.get(user).and_then(|s| s.get(system)) else {
            return Vec::new();
        };
        let mut entries: Vec<&Recommendation> = stack.values().collect();
        entries.sort_by(|a, b| stack_order(a, b));
        entries.into_iter().take(k).cloned().collect()
    }

    pub fn take_top_k_topics(&self, user: &UserId, system: &SystemId, k: usize) -> Vec<TopicRecommendation> {
        let Some(stack) = self.topic_stacks.get(user).and_then(|s| s.get(system)) else {
            return Vec::new();
        };
        let mut entries: Vec<&TopicRecommendation> =
            stack.values().filter(|t| !self.topic_suppressed(user, t.topic.key())).collect();
        entries.sort_by(|a, b| topic_stack_order(a, b));
        entries.into_iter().take(k).cloned().collect()
    }

    /// Active systems holding at least one usable entry for `user`.
    pub fn systems_with_stacks(&self, user: &UserId, kind: ItemKind) -> Vec<SystemId> {
        let active = |id: &SystemId| self.systems.get(id).is_some_and(|s| s.active);
        match kind {
            ItemKind::Article => self
                .article_stacks
                .get(user)
                .map(|m| m.iter().filter(|(id, st)| !st.is_empty() && active(id)).map(|(id, _)| id.clone()).collect())
                .unwrap_or_default(),
            ItemKind::Topic => self
                .topic_stacks
                .get(user)
                .map(|m| {
                    m.iter()
                        .filter(|(id, st)| active(id) && st.keys().any(|k| !self.topic_suppressed(user, k)))
                        .map(|(id, _)| id.clone())
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    pub fn stack_len(&self, user: &UserId, system: &SystemId) -> usize {
        self.article_stacks.get(user).and_then(|s| s.get(system)).map_or(0, BTreeMap::len)
    }

    /// Drops stack entries whose article fell out of the candidate window on
    /// `on`, or is unknown. Returns the number removed.
    pub fn purge_stacks(&mut self, on: NaiveDate, window_days: u32) -> usize {
        let articles = &self.articles;
        let mut removed = 0;
        for per_user in self.article_stacks.values_mut() {
            for stack in per_user.values_mut() {
                let before = stack.len();
                stack.retain(|id, _| articles.get(id).is_some_and(|a| a.in_window(on, window_days)));
                removed += before - stack.len();
            }
            per_user.retain(|_, s| !s.is_empty());
        }
        self.article_stacks.retain(|_, m| !m.is_empty());
        removed
    }

    // ---- impressions -------------------------------------------------------

    /// Persists an impression, increments the impression count of every
    /// selected system, and removes the shown items from the user's stacks.
    pub fn insert_impression(&mut self, draft: ImpressionDraft) -> Result<ImpressionId> {
        if !self.users.contains_key(&draft.user_id) {
            return Err(Error::not_found("user", &draft.user_id));
        }
        for s in &draft.systems {
            if !self.systems.contains_key(s) {
                return Err(Error::not_found("system", s));
            }
        }
        let candidate = Impression {
            impression_id: ImpressionId(String::new()),
            user_id: draft.user_id,
            date: draft.date,
            kind: draft.kind,
            systems: draft.systems,
            slots: draft.slots,
        };
        candidate.check_invariants().map_err(Error::Invalid)?;
        if let Some(s) = candidate.slots.iter().find(|s| self.is_shown(&candidate.user_id, candidate.kind, &s.item_id))
        {
            return Err(Error::Invalid(format!("item `{}` was already shown to `{}`", s.item_id, candidate.user_id)));
        }

        self.counters.impression += 1;
        let id = ImpressionId(format!("i{:08}", self.counters.impression));
        let imp = Impression { impression_id: id.clone(), ..candidate };
        for s in &imp.systems {
            if let Some(sys) = self.systems.get_mut(s) {
                sys.impression_count += 1;
            }
        }
        match imp.kind {
            ItemKind::Article => {
                if let Some(per_user) = self.article_stacks.get_mut(&imp.user_id) {
                    for stack in per_user.values_mut() {
                        for slot in &imp.slots {
                            stack.remove(&ArticleId(slot.item_id.clone()));
                        }
                    }
                }
            }
            ItemKind::Topic => {
                if let Some(per_user) = self.topic_stacks.get_mut(&imp.user_id) {
                    for stack in per_user.values_mut() {
                        for slot in &imp.slots {
                            stack.remove(&slot.item_id);
                        }
                    }
                }
            }
        }
        Self::index_impression(&mut self.idx, &imp);
        self.impressions.insert(id.clone(), imp);
        Ok(id)
    }

    pub fn impression(&self, id: &ImpressionId) -> Option<&Impression> {
        self.impressions.get(id)
    }

    /// All impressions in creation order.
    pub fn impressions(&self) -> impl Iterator<Item = &Impression> {
        self.impressions.values()
    }

    /// A user's impressions in creation order.
    pub fn impressions_of(&self, user: &UserId) -> Vec<&Impression> {
        self.idx
            .user_impressions
            .get(user)
            .map(|ids| ids.iter().filter_map(|id| self.impressions.get(id)).collect())
            .unwrap_or_default()
    }

    pub fn has_impression_on(&self, user: &UserId, date: NaiveDate, kind: ItemKind) -> bool {
        self.impressions_of(user).iter().any(|i| i.date == date && i.kind == kind)
    }

    // ---- interactions ------------------------------------------------------

    /// Logs an interaction; repeats of (impression, item, type) are no-ops.
    pub fn record_interaction(&mut self, ev: NewEvent) -> Result<RecordOutcome> {
        let imp =
            self.impressions.get(&ev.impression_id).ok_or_else(|| Error::not_found("impression", &ev.impression_id))?;
        if imp.slot(&ev.item_id).is_none() {
            return Err(Error::Invalid(format!("item `{}` is not in impression `{}`", ev.item_id, ev.impression_id)));
        }
        if imp.user_id != ev.user_id {
            return Err(Error::Invalid("impression belongs to another user".into()));
        }
        if imp.kind != ev.event_type.kind() {
            return Err(Error::Invalid(format!("{:?} is not a {} interaction", ev.event_type, imp.kind.as_str())));
        }
        let list = self.events.entry(ev.impression_id.clone()).or_default();
        if list.iter().any(|e| e.item_id == ev.item_id && e.event_type == ev.event_type) {
            return Ok(RecordOutcome::Duplicate);
        }
        self.counters.event += 1;
        list.push(InteractionEvent {
            event_id: EventId(format!("e{:09}", self.counters.event)),
            impression_id: ev.impression_id,
            user_id: ev.user_id,
            item_id: ev.item_id,
            event_type: ev.event_type,
            occurred_at: ev.occurred_at,
        });
        Ok(RecordOutcome::Recorded)
    }

    pub fn events_for(&self, impression: &ImpressionId) -> &[InteractionEvent] {
        self.events.get(impression).map_or(&[], Vec::as_slice)
    }

    pub fn all_events(&self) -> impl Iterator<Item = &InteractionEvent> {
        self.events.values().flatten()
    }

    /// Impressions paired with their events, ready for scoring.
    pub fn scored_impressions(&self) -> impl Iterator<Item = (&Impression, &[InteractionEvent])> {
        self.impressions.values().map(|imp| (imp, self.events_for(&imp.impression_id)))
    }

    // ---- library, feedback, topics -----------------------------------------

    pub fn library(&self, user: &UserId) -> BTreeSet<ArticleId> {
        self.library.get(user).cloned().unwrap_or_default()
    }

    pub fn library_add(&mut self, user: &UserId, article: ArticleId) {
        self.library.entry(user.clone()).or_default().insert(article);
    }

    pub fn library_remove(&mut self, user: &UserId, article: &ArticleId) -> bool {
        self.library.get_mut(user).is_some_and(|l| l.remove(article))
    }

    pub fn add_feedback(&mut self, fb: FeedbackRecord) {
        self.feedback.push(fb);
    }

    pub fn feedback(&self) -> &[FeedbackRecord] {
        &self.feedback
    }

    pub fn reject_topic(&mut self, user: &UserId, key: String) {
        self.rejected_topics.entry(user.clone()).or_default().insert(key);
    }

    pub fn is_topic_rejected(&self, user: &UserId, key: &str) -> bool {
        self.rejected_topics.get(user).is_some_and(|r| r.contains(key))
    }

    // ---- email tracking ----------------------------------------------------

    /// Returns the token for (impression, item, action), issuing one if needed.
    pub fn issue_token(&mut self, impression: &ImpressionId, item: &str, action: TrackingAction) -> Result<String> {
        let key = (impression.clone(), item.to_owned(), action);
        if let Some(t) = self.idx.tokens.get(&key) {
            return Ok(t.clone());
        }
        let imp = self.impressions.get(impression).ok_or_else(|| Error::not_found("impression", impression))?;
        if imp.slot(item).is_none() {
            return Err(Error::Invalid(format!("item `{item}` is not in impression `{impression}`")));
        }
        let token = crate::random_token();
        self.tracking.insert(
            token.clone(),
            TrackingToken { token: token.clone(), impression_id: impression.clone(), item_id: item.to_owned(), action },
        );
        self.idx.tokens.insert(key, token.clone());
        Ok(token)
    }

    pub fn tracking_token(&self, token: &str) -> Option<&TrackingToken> {
        self.tracking.get(token)
    }

    pub fn digest_sent(&self, user: &UserId, date: NaiveDate) -> bool {
        self.sent_digests.get(user).is_some_and(|d| d.contains(&date))
    }

    /// Records a sent digest; false if one was already recorded.
    pub fn mark_digest_sent(&mut self, user: &UserId, date: NaiveDate) -> bool {
        self.sent_digests.entry(user.clone()).or_default().insert(date)
    }

    // ---- job ledger --------------------------------------------------------

    pub fn job_entries(&self) -> &[JobLedgerEntry] {
        &self.jobs
    }

    pub fn job_succeeded(&self, job: JobKind, date: NaiveDate) -> bool {
        self.jobs.iter().any(|e| e.job == job && e.date == date && e.outcome == JobOutcome::Success)
    }

    /// Takes the per-(job, date) lock.
    pub fn begin_job(&mut self, job: JobKind, date: NaiveDate, now: DateTime<Utc>) -> Result<()> {
        if self.job_succeeded(job, date) {
            return Err(Error::JobAlreadyRan { job: job.as_str().into(), date });
        }
        if self.jobs.iter().any(|e| e.job == job && e.date == date && e.outcome == JobOutcome::Running) {
            return Err(Error::JobRunning { job: job.as_str().into(), date });
        }
        self.jobs.push(JobLedgerEntry {
            job,
            date,
            started_at: now,
            finished_at: None,
            outcome: JobOutcome::Running,
            detail: None,
        });
        Ok(())
    }

    pub fn finish_job(
        &mut self,
        job: JobKind,
        date: NaiveDate,
        now: DateTime<Utc>,
        outcome: JobOutcome,
        detail: Option<String>,
    ) -> JobLedgerEntry {
        let entry =
            self.jobs.iter_mut().rev().find(|e| e.job == job && e.date == date && e.outcome == JobOutcome::Running);
        match entry {
            Some(e) => {
                e.finished_at = Some(now);
                e.outcome = outcome;
                e.detail = detail;
                e.clone()
            }
            None => {
                let e = JobLedgerEntry { job, date, started_at: now, finished_at: Some(now), outcome, detail };
                self.jobs.push(e.clone());
                e
            }
        }
    }

    // ---- export / import / delete ------------------------------------------

    pub fn export_user_data(&self, user: &UserId) -> Result<UserExport> {
        let rec = self.users.get(user).ok_or_else(|| Error::not_found("user", user))?;
        let impressions: Vec<Impression> = self.impressions_of(user).into_iter().cloned().collect();
        let interactions = impressions.iter().flat_map(|i| self.events_for(&i.impression_id).iter().cloned()).collect();
        let feedback = self.feedback.iter().filter(|f| &f.user_id == user).cloned().collect();
        Ok(UserExport {
            profile: rec.profile.clone(),
            impressions,
            interactions,
            feedback,
            library: self.library(user).into_iter().collect(),
        })
    }

    /// Restores an exported user. Fails if the user, email or any impression
    /// already exists.
    pub fn import_user_data(&mut self, export: UserExport) -> Result<()> {
        let user = export.profile.user_id.clone();
        if self.users.contains_key(&user) || self.idx.email.contains_key(&email_key(&export.profile.email)) {
            return Err(Error::Conflict(format!("user `{user}` already exists")));
        }
        for imp in &export.impressions {
            if imp.user_id != user {
                return Err(Error::Invalid("impression of another user in export".into()));
            }
            if self.impressions.contains_key(&imp.impression_id) {
                return Err(Error::Conflict(format!("impression `{}` exists", imp.impression_id)));
            }
            imp.check_invariants().map_err(Error::Invalid)?;
        }
        let imp_ids: HashSet<&ImpressionId> = export.impressions.iter().map(|i| &i.impression_id).collect();
        if export.interactions.iter().any(|e| !imp_ids.contains(&e.impression_id)) {
            return Err(Error::Invalid("interaction references unknown impression".into()));
        }

        fn counter_of(id: &str) -> u64 {
            id.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap_or(0)
        }
        self.counters.user = self.counters.user.max(counter_of(user.as_str()));
        self.idx.email.insert(email_key(&export.profile.email), user.clone());
        self.users.insert(user.clone(), UserRecord { profile: export.profile, password_hash: None });
        for imp in export.impressions {
            self.counters.impression = self.counters.impression.max(counter_of(imp.impression_id.as_str()));
            Self::index_impression(&mut self.idx, &imp);
            self.impressions.insert(imp.impression_id.clone(), imp);
        }
        for ev in export.interactions {
            self.counters.event = self.counters.event.max(counter_of(ev.event_id.as_str()));
            self.events.entry(ev.impression_id.clone()).or_default().push(ev);
        }
        self.feedback.extend(export.feedback);
        if !export.library.is_empty() {
            self.library.insert(user, export.library.into_iter().collect());
        }
        Ok(())
    }

    /// Removes every user-identifying record. Impressions and events stay,
    /// re-attributed to the tombstone user, so system metrics are unchanged.
    pub fn delete_user(&mut self, user: &UserId) -> Result<()> {
        let rec = self.users.remove(user).ok_or_else(|| Error::not_found("user", user))?;
        self.idx.email.remove(&email_key(&rec.profile.email));
        self.sessions.retain(|_, s| &s.user_id != user);
        self.article_stacks.remove(user);
        self.topic_stacks.remove(user);
        self.library.remove(user);
        self.rejected_topics.remove(user);
        self.sent_digests.remove(user);
        self.feedback.retain(|f| &f.user_id != user);

        let ids = self.idx.user_impressions.remove(user).unwrap_or_default();
        let id_set: HashSet<&ImpressionId> = ids.iter().collect();
        for id in &ids {
            if let Some(imp) = self.impressions.get_mut(id) {
                imp.user_id = UserId::tombstone();
            }
            if let Some(events) = self.events.get_mut(id) {
                for e in events {
                    e.user_id = UserId::tombstone();
                }
            }
        }
        self.tracking.retain(|_, t| !id_set.contains(&t.impression_id));
        self.idx.tokens.retain(|(imp, _, _), _| !id_set.contains(imp));
        self.idx.shown.retain(|(u, _), _| u != user);
        Ok(())
    }
}

struct Backing {
    path: PathBuf,
    _lock: File,
}

/// Transactional handle on the platform state.
pub struct Store {
    db: Mutex<Db>,
    backing: Option<Backing>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.backing.as_ref().map(|b| &b.path)).finish()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Store { db: Mutex::new(Db::default()), backing: None }
    }

    /// Opens (or creates) a file-backed store.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let lock_path = path.with_extension("lock");
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(&lock_path)?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(std::fs::TryLockError::WouldBlock) => return Err(Error::Locked(path.display().to_string())),
            Err(std::fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        let mut db: Db = if path.exists() {
            let file = File::open(&path)?;
            serde_json::from_reader(std::io::BufReader::new(file))?
        } else {
            Db::default()
        };
        db.rebuild_index();
        Ok(Store { db: Mutex::new(db), backing: Some(Backing { path, _lock: lock }) })
    }

    pub fn read<R>(&self, f: impl FnOnce(&Db) -> R) -> R {
        f(&self.db.lock())
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut Db) -> Result<R>) -> Result<R> {
        let mut db = self.db.lock();
        let out = f(&mut db)?;
        if let Some(b) = &self.backing {
            persist(&b.path, &db)?;
        }
        Ok(out)
    }

    /// Serialized state, as written to disk.
    pub fn dump(&self) -> String {
        serde_json::to_string(&*self.db.lock()).expect("state serializes")
    }
}

fn persist(path: &Path, db: &Db) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut w, db)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
