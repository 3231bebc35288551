//! End-user accounts: registration, sessions, feed, actions, feedback,
//! topic suggestions, and data export/removal.

use std::collections::BTreeSet;

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_user_profile, Article, ArticleId, FeedbackKind, FeedbackRecord, ImpressionId, InteractionType, ItemKind,
    RawProfile, Topic, UserId, UserProfile,
};
use crate::multileave::{derive_seed, interleave_user};
use crate::storage::{Db, NewEvent, RecordOutcome, UserExport};
use crate::Platform;

pub const FEED_PAGE_IMPRESSIONS: usize = 5;
pub const MIN_PASSWORD_CHARS: usize = 8;
/// Days a displayed topic may stay untouched before it expires.
pub const TOPIC_EXPIRY_DAYS: i64 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub expires_at: DateTime<Utc>,
    /// Impressions already rendered in this session.
    #[serde(default)]
    pub seen_impressions: BTreeSet<ImpressionId>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Registration {
    #[serde(flatten)]
    pub profile: RawProfile,
    pub password: String,
}

fn hasher(platform: &Platform) -> Result<Argon2<'static>> {
    let auth = &platform.config().auth;
    let params = Params::new(auth.hash_memory_kib, auth.hash_iterations, 1, None)
        .map_err(|e| Error::Config(format!("password hashing: {e}")))?;
    Ok(Argon2::new(Algorithm::Argon2id, Version::V0x13, params))
}

pub fn hash_password(platform: &Platform, password: &str) -> Result<String> {
    if password.chars().count() < MIN_PASSWORD_CHARS {
        return Err(Error::Invalid(format!("password must have at least {MIN_PASSWORD_CHARS} characters")));
    }
    let mut raw = [0u8; 16];
    rand::RngCore::fill_bytes(&mut rand::rng(), &mut raw);
    let salt = SaltString::encode_b64(&raw).map_err(|e| Error::Invalid(format!("password hashing: {e}")))?;
    hasher(platform)?
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| Error::Invalid(format!("password hashing: {e}")))
}

fn verify_password(platform: &Platform, password: &str, hash: &str) -> bool {
    let Ok(parsed) = PasswordHash::new(hash) else {
        return false;
    };
    hasher(platform).is_ok_and(|h| h.verify_password(password.as_bytes(), &parsed).is_ok())
}

pub fn register(platform: &Platform, reg: Registration) -> Result<UserId> {
    let hash = hash_password(platform, &reg.password)?;
    let now = platform.now();
    platform.store().write(|db| create_user(db, &reg.profile, Some(hash), now))
}

/// Validates `raw` and stores it under a fresh user id.
pub fn create_user(db: &mut Db, raw: &RawProfile, password_hash: Option<String>, now: DateTime<Utc>) -> Result<UserId> {
    let mut profile = validate_user_profile(raw, UserId::new(""), now).map_err(Error::Profile)?;
    if db.user_by_email(&profile.email).is_some() {
        return Err(Error::Conflict("email already registered".into()));
    }
    profile.user_id = db.next_user_id();
    let id = profile.user_id.clone();
    db.insert_user(profile, password_hash)?;
    Ok(id)
}

pub fn login(platform: &Platform, email: &str, password: &str) -> Result<Session> {
    let record = platform.store().read(|db| db.user_by_email(email).cloned()).ok_or(Error::Unauthorized)?;
    let ok = record.password_hash.as_deref().is_some_and(|h| verify_password(platform, password, h));
    if !ok || !record.profile.active {
        return Err(Error::Unauthorized);
    }
    let ttl = Duration::hours(i64::from(platform.config().auth.session_ttl_hours));
    let session = Session {
        token: crate::random_token(),
        user_id: record.profile.user_id,
        expires_at: platform.now() + ttl,
        seen_impressions: BTreeSet::new(),
    };
    platform.store().write(|db| {
        db.insert_session(session.clone());
        Ok(())
    })?;
    Ok(session)
}

pub fn logout(platform: &Platform, token: &str) -> Result<()> {
    platform.store().write(|db| {
        db.remove_session(token);
        Ok(())
    })
}

fn session_user(db: &Db, token: &str, now: DateTime<Utc>) -> Result<UserId> {
    let s = db.session(token).ok_or(Error::Unauthorized)?;
    if s.expires_at <= now || db.user(&s.user_id).is_none() {
        return Err(Error::Unauthorized);
    }
    Ok(s.user_id.clone())
}

pub fn authenticate(platform: &Platform, token: &str) -> Result<UserId> {
    let now = platform.now();
    platform.store().read(|db| session_user(db, token, now))
}

pub fn profile(platform: &Platform, token: &str) -> Result<UserProfile> {
    let now = platform.now();
    platform.store().read(|db| {
        let user = session_user(db, token, now)?;
        Ok(db.user(&user).cloned().expect("session user exists"))
    })
}

pub fn update_profile(platform: &Platform, token: &str, raw: RawProfile) -> Result<UserProfile> {
    let now = platform.now();
    platform.store().write(|db| {
        let user = session_user(db, token, now)?;
        let old = db.user(&user).cloned().expect("session user exists");
        let mut profile = validate_user_profile(&raw, user, old.registered_at).map_err(Error::Profile)?;
        profile.active = old.active;
        db.update_profile(profile.clone())?;
        Ok(profile)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedItem {
    pub impression_id: ImpressionId,
    pub date: NaiveDate,
    pub rank: u32,
    pub article: Article,
    pub explanation: Option<String>,
    pub saved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedPage {
    pub page: usize,
    pub total_pages: usize,
    pub items: Vec<FeedItem>,
    pub topic_suggestions: TopicState,
}

/// A page of the user's article impressions, newest first. The first render
/// of an impression in a session logs `seen_web` for its items.
pub fn feed(platform: &Platform, token: &str, page: usize) -> Result<FeedPage> {
    let now = platform.now();
    platform.store().write(|db| {
        let user = session_user(db, token, now)?;
        let mut impressions: Vec<_> =
            db.impressions_of(&user).into_iter().filter(|i| i.kind == ItemKind::Article).cloned().collect();
        impressions.reverse();
        let total_pages = impressions.len().div_ceil(FEED_PAGE_IMPRESSIONS);
        let library = db.library(&user);
        let seen = db.session(token).map(|s| s.seen_impressions.clone()).unwrap_or_default();

        let mut items = Vec::new();
        let mut newly_seen = Vec::new();
        for imp in impressions.iter().skip(page.saturating_mul(FEED_PAGE_IMPRESSIONS)).take(FEED_PAGE_IMPRESSIONS) {
            if !seen.contains(&imp.impression_id) {
                newly_seen.push(imp.impression_id.clone());
                for slot in &imp.slots {
                    db.record_interaction(NewEvent {
                        impression_id: imp.impression_id.clone(),
                        user_id: user.clone(),
                        item_id: slot.item_id.clone(),
                        event_type: InteractionType::SeenWeb,
                        occurred_at: now,
                    })?;
                }
            }
            for slot in &imp.slots {
                let article_id = ArticleId::new(slot.item_id.clone());
                let Some(article) = db.article(&article_id).cloned() else {
                    continue;
                };
                items.push(FeedItem {
                    impression_id: imp.impression_id.clone(),
                    date: imp.date,
                    rank: slot.rank,
                    saved: library.contains(&article_id),
                    article,
                    explanation: slot.explanation.clone(),
                });
            }
        }
        if let Some(s) = db.session_mut(token) {
            s.seen_impressions.extend(newly_seen);
        }
        Ok(FeedPage { page, total_pages, items, topic_suggestions: topic_state(db, &user) })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserAction {
    ClickedWeb,
    Saved,
    Unsave,
}

pub fn record_action(
    platform: &Platform,
    token: &str,
    impression_id: &ImpressionId,
    item_id: &str,
    action: UserAction,
) -> Result<RecordOutcome> {
    let now = platform.now();
    platform.store().write(|db| {
        let user = session_user(db, token, now)?;
        let imp = db
            .impression(impression_id)
            .filter(|i| i.user_id == user)
            .ok_or_else(|| Error::not_found("impression", impression_id))?;
        if imp.kind != ItemKind::Article || imp.slot(item_id).is_none() {
            return Err(Error::Invalid(format!("item `{item_id}` is not in impression `{impression_id}`")));
        }
        let event_type = match action {
            UserAction::Unsave => {
                db.library_remove(&user, &ArticleId::new(item_id));
                return Ok(RecordOutcome::Recorded);
            }
            UserAction::ClickedWeb => InteractionType::ClickedWeb,
            UserAction::Saved => InteractionType::Saved,
        };
        let outcome = db.record_interaction(NewEvent {
            impression_id: impression_id.clone(),
            user_id: user.clone(),
            item_id: item_id.to_owned(),
            event_type,
            occurred_at: now,
        })?;
        if action == UserAction::Saved {
            db.library_add(&user, ArticleId::new(item_id));
        }
        Ok(outcome)
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct FeedbackInput {
    #[serde(default)]
    pub article_id: Option<ArticleId>,
    #[serde(default)]
    pub relevance: Option<u8>,
    #[serde(default)]
    pub explanation_satisfaction: Option<u8>,
    #[serde(default)]
    pub explanation_persuasiveness: Option<u8>,
    #[serde(default)]
    pub explanation_transparency: Option<u8>,
    #[serde(default)]
    pub explanation_scrutability: Option<u8>,
    #[serde(default)]
    pub free_text: String,
    pub kind: FeedbackKind,
}

pub fn submit_feedback(platform: &Platform, token: &str, input: FeedbackInput) -> Result<FeedbackRecord> {
    let now = platform.now();
    platform.store().write(|db| {
        let user = session_user(db, token, now)?;
        let record = FeedbackRecord {
            user_id: user,
            article_id: input.article_id,
            relevance: input.relevance,
            explanation_satisfaction: input.explanation_satisfaction,
            explanation_persuasiveness: input.explanation_persuasiveness,
            explanation_transparency: input.explanation_transparency,
            explanation_scrutability: input.explanation_scrutability,
            free_text: input.free_text,
            kind: input.kind,
        };
        record.validate().map_err(Error::Invalid)?;
        if let Some(a) = &record.article_id {
            if db.article(a).is_none() {
                return Err(Error::not_found("article", a));
            }
        }
        db.add_feedback(record.clone());
        Ok(record)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicAction {
    Accept,
    Reject,
    RefreshBatch,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TopicState {
    pub topics: Vec<String>,
    pub impression_id: Option<ImpressionId>,
    pub suggestions: Vec<String>,
}

/// Whether a displayed topic already received a terminal interaction.
fn topic_resolved(db: &Db, imp: &ImpressionId, key: &str) -> bool {
    db.events_for(imp).iter().any(|e| {
        e.item_id == key
            && matches!(
                e.event_type,
                InteractionType::TopicAccepted
                    | InteractionType::TopicRejected
                    | InteractionType::TopicRefreshed
                    | InteractionType::TopicExpired
            )
    })
}

/// Profile topics and the still-open suggestions of the latest topic impression.
pub fn topic_state(db: &Db, user: &UserId) -> TopicState {
    let Some(profile) = db.user(user) else {
        return TopicState::default();
    };
    let latest = db.impressions_of(user).into_iter().rev().find(|i| i.kind == ItemKind::Topic);
    let suggestions = latest
        .map(|imp| {
            imp.slots
                .iter()
                .filter(|s| !topic_resolved(db, &imp.impression_id, &s.item_id))
                .filter(|s| !profile.has_topic(&s.item_id) && !db.is_topic_rejected(user, &s.item_id))
                .map(|s| s.item_id.clone())
                .collect()
        })
        .unwrap_or_default();
    TopicState {
        topics: profile.topics.iter().map(|t| t.text().to_owned()).collect(),
        impression_id: latest.map(|i| i.impression_id.clone()),
        suggestions,
    }
}

pub fn topic_action(platform: &Platform, token: &str, topic: &str, action: TopicAction) -> Result<TopicState> {
    let now = platform.now();
    let today = now.date_naive();
    let settings = platform.settings();
    let cfg = platform.config().interleave.clone();
    platform.store().write(|db| {
        let user = session_user(db, token, now)?;
        match action {
            TopicAction::Accept | TopicAction::Reject => {
                let parsed = Topic::parse(topic).map_err(|_| Error::not_found("topic", topic))?;
                let key = parsed.key().to_owned();
                let imp = db
                    .impressions_of(&user)
                    .into_iter()
                    .rev()
                    .filter(|i| i.kind == ItemKind::Topic)
                    .find(|i| i.slot(&key).is_some() && !topic_resolved(db, &i.impression_id, &key))
                    .map(|i| i.impression_id.clone())
                    .ok_or_else(|| Error::not_found("topic", topic))?;
                let event_type = if action == TopicAction::Accept {
                    InteractionType::TopicAccepted
                } else {
                    InteractionType::TopicRejected
                };
                db.record_interaction(NewEvent {
                    impression_id: imp,
                    user_id: user.clone(),
                    item_id: key.clone(),
                    event_type,
                    occurred_at: now,
                })?;
                if action == TopicAction::Accept {
                    let mut profile = db.user(&user).cloned().expect("session user exists");
                    if !profile.has_topic(&key) {
                        profile.topics.push(parsed);
                        db.update_profile(profile)?;
                    }
                } else {
                    db.reject_topic(&user, key);
                }
            }
            TopicAction::RefreshBatch => {
                let state = topic_state(db, &user);
                if let Some(imp) = &state.impression_id {
                    for key in &state.suggestions {
                        db.record_interaction(NewEvent {
                            impression_id: imp.clone(),
                            user_id: user.clone(),
                            item_id: key.clone(),
                            event_type: InteractionType::TopicRefreshed,
                            occurred_at: now,
                        })?;
                    }
                }
                let ids: Vec<_> = db.systems().map(|s| s.system_id.clone()).collect();
                let counts = db.impression_counts(&ids);
                let nonce = db.impressions_of(&user).len() as u64 + 1;
                let seed = derive_seed(cfg.seed, today, ItemKind::Topic, &user, nonce);
                interleave_user(
                    db,
                    &user,
                    ItemKind::Topic,
                    today,
                    &counts,
                    seed,
                    settings.top_k,
                    cfg.systems_per_impression,
                )?;
            }
        }
        Ok(topic_state(db, &user))
    })
}

/// Logs `topic_expired` for displayed topics left untouched for
/// [`TOPIC_EXPIRY_DAYS`] as of `today`. Returns the number of events.
pub fn sweep_expired_topics(db: &mut Db, today: NaiveDate, now: DateTime<Utc>) -> Result<usize> {
    let mut pending = Vec::new();
    for imp in db.impressions() {
        if imp.kind != ItemKind::Topic || imp.user_id.is_tombstone() {
            continue;
        }
        if (today - imp.date).num_days() < TOPIC_EXPIRY_DAYS {
            continue;
        }
        for slot in &imp.slots {
            if !topic_resolved(db, &imp.impression_id, &slot.item_id) {
                pending.push((imp.impression_id.clone(), imp.user_id.clone(), slot.item_id.clone()));
            }
        }
    }
    let mut count = 0;
    for (impression_id, user_id, item_id) in pending {
        let outcome = db.record_interaction(NewEvent {
            impression_id,
            user_id,
            item_id,
            event_type: InteractionType::TopicExpired,
            occurred_at: now,
        })?;
        count += usize::from(outcome == RecordOutcome::Recorded);
    }
    Ok(count)
}

pub fn export_data(platform: &Platform, token: &str) -> Result<UserExport> {
    let now = platform.now();
    platform.store().read(|db| {
        let user = session_user(db, token, now)?;
        db.export_user_data(&user)
    })
}

/// Removes the account; all of its sessions stop authenticating.
pub fn delete_account(platform: &Platform, token: &str) -> Result<()> {
    let now = platform.now();
    platform.store().write(|db| {
        let user = session_user(db, token, now)?;
        db.delete_user(&user)
    })
}

pub fn reset_password(platform: &Platform, email: &str, password: &str) -> Result<()> {
    let hash = hash_password(platform, password)?;
    platform.store().write(|db| {
        let id = db
            .user_by_email(email)
            .map(|r| r.profile.user_id.clone())
            .ok_or_else(|| Error::not_found("user", email))?;
        db.set_password_hash(&id, hash)
    })
}
