//! Shared domain types, validation, and canonicalization.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Timelike, Utc, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Opaque end-user identifier.
    UserId
);
id_type!(
    /// Opaque experimental-system identifier.
    SystemId
);
id_type!(
    /// arXiv-style article identifier, e.g. `2006.01234`.
    ArticleId
);
id_type!(ImpressionId);
id_type!(EventId);

impl UserId {
    /// Placeholder user on impressions and events of deleted accounts.
    pub fn tombstone() -> Self {
        UserId("deleted".to_owned())
    }

    pub fn is_tombstone(&self) -> bool {
        self.0 == "deleted"
    }
}

pub const MAX_TOPIC_CHARS: usize = 200;
pub const MAX_EXPLANATION_CHARS: usize = 400;
pub const BOLD_MARKER: &str = "**";

/// A short natural-language interest phrase.
///
/// Whitespace is trimmed and collapsed; equality and hashing use the
/// case-folded form while [`Topic::text`] keeps the first-seen casing.
#[derive(Debug, Clone)]
pub struct Topic {
    text: String,
    key: String,
}

impl Topic {
    pub fn parse(raw: &str) -> Result<Self, ProfileError> {
        let text = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            return Err(ProfileError::MalformedTopic(raw.to_owned()));
        }
        if text.chars().count() > MAX_TOPIC_CHARS {
            return Err(ProfileError::MalformedTopic(raw.to_owned()));
        }
        let key = text.to_lowercase();
        Ok(Topic { text, key })
    }

    /// Display form.
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Case-folded form used for equality.
    pub fn key(&self) -> &str {
        &self.key
    }
}

impl PartialEq for Topic {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Topic {}

impl Hash for Topic {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key.hash(state);
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for Topic {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Topic {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Topic::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Canonical comparison key of a raw topic string.
pub fn canonical_topic(raw: &str) -> Option<String> {
    Topic::parse(raw).ok().map(|t| t.key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestFrequency {
    Daily,
    Weekly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub email: String,
    pub name: String,
    pub topics: Vec<Topic>,
    pub digest_frequency: DigestFrequency,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weekly_digest_day: Option<Weekday>,
    pub external_links: BTreeSet<String>,
    pub registered_at: DateTime<Utc>,
    pub active: bool,
}

impl UserProfile {
    pub fn has_topic(&self, key: &str) -> bool {
        self.topics.iter().any(|t| t.key() == key)
    }
}

/// Unvalidated sign-up or profile-edit form.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawProfile {
    #[serde(default)]
    pub email: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub digest_frequency: String,
    #[serde(default)]
    pub weekly_digest_day: Option<String>,
    #[serde(default)]
    pub external_links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum ProfileError {
    #[error("invalid email")]
    InvalidEmail,
    #[error("empty name")]
    EmptyName,
    #[error("malformed topic `{0}`")]
    MalformedTopic(String),
    #[error("unknown digest frequency `{0}`")]
    UnknownFrequency(String),
    #[error("weekly digest requires a day")]
    WeeklyWithoutDay,
    #[error("invalid weekday `{0}`")]
    InvalidWeekday(String),
    #[error("invalid profile link `{0}`")]
    InvalidLink(String),
}

pub fn is_valid_email(email: &str) -> bool {
    let Some((local, domain)) = email.split_once('@') else {
        return false;
    };
    let well_formed_part = |s: &str| !s.is_empty() && !s.starts_with('.') && !s.ends_with('.');
    well_formed_part(local)
        && well_formed_part(domain)
        && domain.contains('.')
        && !domain.contains('@')
        && !domain.contains("..")
        && !email.chars().any(|c| c.is_whitespace() || c.is_control())
}

/// Validates and canonicalizes a profile form, collecting every violation.
pub fn validate_user_profile(
    raw: &RawProfile,
    user_id: UserId,
    registered_at: DateTime<Utc>,
) -> Result<UserProfile, Vec<ProfileError>> {
    let mut errors = Vec::new();

    let email = raw.email.trim().to_owned();
    if !is_valid_email(&email) {
        errors.push(ProfileError::InvalidEmail);
    }
    let name = raw.name.split_whitespace().collect::<Vec<_>>().join(" ");
    if name.is_empty() {
        errors.push(ProfileError::EmptyName);
    }

    let mut topics: Vec<Topic> = Vec::new();
    let mut seen = HashSet::new();
    for raw_topic in &raw.topics {
        match Topic::parse(raw_topic) {
            Ok(t) => {
                if seen.insert(t.key.clone()) {
                    topics.push(t);
                }
            }
            Err(e) => errors.push(e),
        }
    }

    let frequency = match raw.digest_frequency.trim().to_lowercase().as_str() {
        "" | "daily" => Some(DigestFrequency::Daily),
        "weekly" => Some(DigestFrequency::Weekly),
        other => {
            errors.push(ProfileError::UnknownFrequency(other.to_owned()));
            None
        }
    };
    let day = match raw.weekly_digest_day.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(s) => match s.parse::<Weekday>() {
            Ok(d) => Some(d),
            Err(_) => {
                errors.push(ProfileError::InvalidWeekday(s.to_owned()));
                None
            }
        },
    };
    let weekly_digest_day = match frequency {
        Some(DigestFrequency::Weekly) => {
            if day.is_none() && !errors.iter().any(|e| matches!(e, ProfileError::InvalidWeekday(_))) {
                errors.push(ProfileError::WeeklyWithoutDay);
            }
            day
        }
        _ => None,
    };

    let mut external_links = BTreeSet::new();
    for link in &raw.external_links {
        let link = link.trim();
        match url::Url::parse(link) {
            Ok(u) if matches!(u.scheme(), "http" | "https") && u.host().is_some() => {
                external_links.insert(link.to_owned());
            }
            _ => errors.push(ProfileError::InvalidLink(link.to_owned())),
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(UserProfile {
        user_id,
        email,
        name,
        topics,
        digest_frequency: frequency.unwrap_or(DigestFrequency::Daily),
        weekly_digest_day,
        external_links,
        registered_at,
        active: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: ArticleId,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub authors: Vec<String>,
    pub categories: Vec<String>,
    #[serde(rename = "published")]
    pub published_date: NaiveDate,
}

impl Article {
    /// Days between publication and `on`; negative for future articles.
    pub fn age_days(&self, on: NaiveDate) -> i64 {
        (on - self.published_date).num_days()
    }

    /// Membership in the half-open `[0, window_days)` candidate window.
    pub fn in_window(&self, on: NaiveDate, window_days: u32) -> bool {
        let age = self.age_days(on);
        age >= 0 && age < i64::from(window_days)
    }

    pub fn abstract_url(&self) -> String {
        format!("https://arxiv.org/abs/{}", self.article_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentalSystem {
    pub system_id: SystemId,
    pub api_key: String,
    pub name: String,
    pub active: bool,
    pub impression_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub system_id: SystemId,
    pub user_id: UserId,
    pub article_id: ArticleId,
    pub score: f64,
    pub explanation: String,
    pub submitted_at: DateTime<Utc>,
}

/// Recommendation as submitted, before validation.
#[derive(Debug, Clone)]
pub struct RawRecommendation {
    pub system_id: SystemId,
    pub user_id: UserId,
    pub article_id: ArticleId,
    pub score: f64,
    pub explanation: Option<String>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecommendationError {
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("empty explanation")]
    EmptyExplanation,
    #[error("explanation too long")]
    ExplanationTooLong,
    #[error("unbalanced markup")]
    UnbalancedMarkup,
}

/// Checks an explanation's length and `**` pairing.
pub fn validate_explanation(text: &str) -> Result<(), RecommendationError> {
    if text.trim().is_empty() {
        return Err(RecommendationError::EmptyExplanation);
    }
    if text.chars().count() > MAX_EXPLANATION_CHARS {
        return Err(RecommendationError::ExplanationTooLong);
    }
    if text.matches(BOLD_MARKER).count() % 2 != 0 {
        return Err(RecommendationError::UnbalancedMarkup);
    }
    Ok(())
}

pub fn validate_recommendation(raw: RawRecommendation) -> Result<Recommendation, RecommendationError> {
    if !raw.score.is_finite() {
        return Err(RecommendationError::NonFiniteScore);
    }
    let explanation = raw.explanation.unwrap_or_default();
    validate_explanation(&explanation)?;
    Ok(Recommendation {
        system_id: raw.system_id,
        user_id: raw.user_id,
        article_id: raw.article_id,
        score: raw.score,
        explanation,
        submitted_at: raw.submitted_at,
    })
}

/// Splits an explanation into `(text, bold)` runs. Only `**` is markup.
pub fn markup_spans(text: &str) -> Vec<(&str, bool)> {
    text.split(BOLD_MARKER).enumerate().filter(|(_, s)| !s.is_empty()).map(|(i, s)| (s, i % 2 == 1)).collect()
}

pub fn strip_markup(text: &str) -> String {
    text.replace(BOLD_MARKER, "")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRecommendation {
    pub system_id: SystemId,
    pub user_id: UserId,
    pub topic: Topic,
    pub score: f64,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Article,
    Topic,
}

impl ItemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemKind::Article => "article",
            ItemKind::Topic => "topic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub rank: u32,
    pub item_id: String,
    pub source_system_id: SystemId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

/// One combined ranking shown to a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Impression {
    pub impression_id: ImpressionId,
    pub user_id: UserId,
    pub date: NaiveDate,
    pub kind: ItemKind,
    /// Every system selected for this interleaving, including any that
    /// ended up sourcing no slot.
    pub systems: Vec<SystemId>,
    pub slots: Vec<Slot>,
}

impl Impression {
    pub fn slot(&self, item_id: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.item_id == item_id)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let mut items = HashSet::new();
        for (i, slot) in self.slots.iter().enumerate() {
            if slot.rank as usize != i + 1 {
                return Err(format!("rank {} at position {}", slot.rank, i + 1));
            }
            if !items.insert(slot.item_id.as_str()) {
                return Err(format!("duplicate item `{}`", slot.item_id));
            }
            if !self.systems.contains(&slot.source_system_id) {
                return Err(format!("unselected source `{}`", slot.source_system_id));
            }
        }
        let distinct: HashSet<_> = self.systems.iter().collect();
        if distinct.len() != self.systems.len() {
            return Err("duplicate selected system".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionType {
    SeenEmail,
    SeenWeb,
    ClickedEmail,
    ClickedWeb,
    Saved,
    TopicAccepted,
    TopicRejected,
    TopicRefreshed,
    TopicExpired,
}

impl InteractionType {
    pub const ALL: [InteractionType; 9] = [
        InteractionType::SeenEmail,
        InteractionType::SeenWeb,
        InteractionType::ClickedEmail,
        InteractionType::ClickedWeb,
        InteractionType::Saved,
        InteractionType::TopicAccepted,
        InteractionType::TopicRejected,
        InteractionType::TopicRefreshed,
        InteractionType::TopicExpired,
    ];

    pub fn kind(self) -> ItemKind {
        match self {
            InteractionType::SeenEmail
            | InteractionType::SeenWeb
            | InteractionType::ClickedEmail
            | InteractionType::ClickedWeb
            | InteractionType::Saved => ItemKind::Article,
            _ => ItemKind::Topic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub event_id: EventId,
    pub impression_id: ImpressionId,
    pub user_id: UserId,
    pub item_id: String,
    #[serde(rename = "type")]
    pub event_type: InteractionType,
    pub occurred_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    RecommendationFeedback,
    BugReport,
    FeatureRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub user_id: UserId,
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

impl FeedbackRecord {
    pub fn validate(&self) -> Result<(), String> {
        let ratings = [
            ("relevance", self.relevance),
            ("explanation_satisfaction", self.explanation_satisfaction),
            ("explanation_persuasiveness", self.explanation_persuasiveness),
            ("explanation_transparency", self.explanation_transparency),
            ("explanation_scrutability", self.explanation_scrutability),
        ];
        for (name, rating) in ratings {
            if let Some(r) = rating {
                if !(1..=5).contains(&r) {
                    return Err(format!("{name} must be between 1 and 5"));
                }
            }
        }
        if self.kind == FeedbackKind::RecommendationFeedback && self.article_id.is_none() {
            return Err("recommendation feedback requires article_id".into());
        }
        Ok(())
    }
}

/// Daily time-of-day window during which systems may upload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionWindow {
    pub start_utc: NaiveTime,
    pub duration_minutes: u32,
}

impl SubmissionWindow {
    pub fn duration(&self) -> Duration {
        Duration::minutes(i64::from(self.duration_minutes))
    }

    pub fn start_on(&self, date: NaiveDate) -> DateTime<Utc> {
        date.and_time(self.start_utc).and_utc()
    }

    pub fn end_on(&self, date: NaiveDate) -> DateTime<Utc> {
        self.start_on(date) + self.duration()
    }

    /// Start inclusive, end exclusive; windows may wrap past midnight.
    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        let day = 86_400i64;
        let start = i64::from(self.start_utc.num_seconds_from_midnight());
        let now = i64::from(at.time().num_seconds_from_midnight());
        let since_start = (now - start).rem_euclid(day);
        since_start < i64::from(self.duration_minutes) * 60 || i64::from(self.duration_minutes) * 60 >= day
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSettings {
    pub user_batch_size: usize,
    pub recommendation_batch_max: usize,
    pub candidate_window_days: u32,
    pub submission_window: SubmissionWindow,
    pub top_k: usize,
}

impl Default for ApiSettings {
    fn default() -> Self {
        ApiSettings {
            user_batch_size: 100,
            recommendation_batch_max: 100,
            candidate_window_days: 7,
            submission_window: SubmissionWindow {
                start_utc: NaiveTime::from_hms_opt(0, 30, 0).expect("valid time"),
                duration_minutes: 150,
            },
            top_k: 10,
        }
    }
}

impl ApiSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.user_batch_size == 0
            || self.recommendation_batch_max == 0
            || self.candidate_window_days == 0
            || self.top_k == 0
            || self.submission_window.duration_minutes == 0
        {
            return Err("api settings must all be positive".into());
        }
        if self.submission_window.duration_minutes > 24 * 60 {
            return Err("submission window longer than 24h".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw() -> RawProfile {
        RawProfile {
            email: "ada@example.org".into(),
            name: "Ada".into(),
            topics: vec!["IR".into(), " ir ".into()],
            digest_frequency: "daily".into(),
            weekly_digest_day: None,
            external_links: vec!["https://dblp.org/pid/1/2".into()],
        }
    }

    fn validate(raw: &RawProfile) -> Result<UserProfile, Vec<ProfileError>> {
        validate_user_profile(raw, UserId::from("u1"), Utc::now())
    }

    #[test]
    fn duplicate_topics_collapse() {
        let p = validate(&raw()).unwrap();
        assert_eq!(p.topics.len(), 1);
        assert_eq!(p.topics[0].key(), "ir");
        assert_eq!(p.topics[0].text(), "IR");
    }

    #[test]
    fn invalid_email_reported() {
        let mut r = raw();
        r.email = "x".into();
        assert_eq!(validate(&r).unwrap_err(), vec![ProfileError::InvalidEmail]);
        assert_eq!(ProfileError::InvalidEmail.to_string(), "invalid email");
    }

    #[test]
    fn weekly_requires_day() {
        let mut r = raw();
        r.digest_frequency = "weekly".into();
        assert_eq!(validate(&r).unwrap_err(), vec![ProfileError::WeeklyWithoutDay]);
        r.weekly_digest_day = Some("friday".into());
        assert_eq!(validate(&r).unwrap().weekly_digest_day, Some(Weekday::Fri));
    }

    #[test]
    fn all_violations_collected() {
        let r = RawProfile {
            email: "bad".into(),
            name: "  ".into(),
            topics: vec!["   ".into()],
            digest_frequency: "weekly".into(),
            weekly_digest_day: None,
            external_links: vec!["ftp://x".into()],
        };
        let errs = validate(&r).unwrap_err();
        assert_eq!(errs.len(), 5, "{errs:?}");
    }

    #[test]
    fn topic_length_bounds() {
        assert!(Topic::parse(&"a".repeat(200)).is_ok());
        assert!(Topic::parse(&"a".repeat(201)).is_err());
        assert!(Topic::parse(" \t ").is_err());
        assert_eq!(Topic::parse("  learning   to\trank ").unwrap().text(), "learning to rank");
    }

    #[test]
    fn recommendation_rules() {
        let base = RawRecommendation {
            system_id: "s".into(),
            user_id: "u".into(),
            article_id: "a".into(),
            score: 1.0,
            explanation: Some("about **IR**".into()),
            submitted_at: Utc::now(),
        };
        assert!(validate_recommendation(base.clone()).is_ok());

        let nan = RawRecommendation { score: f64::NAN, ..base.clone() };
        let err = validate_recommendation(nan).unwrap_err();
        assert_eq!(err.to_string(), "non-finite score");

        let odd = RawRecommendation { explanation: Some("**a** **b".into()), ..base.clone() };
        assert_eq!(validate_recommendation(odd).unwrap_err().to_string(), "unbalanced markup");

        let empty = RawRecommendation { explanation: Some(" ".into()), ..base.clone() };
        assert_eq!(validate_recommendation(empty).unwrap_err(), RecommendationError::EmptyExplanation);

        let long = RawRecommendation { explanation: Some("x".repeat(401)), ..base };
        assert_eq!(validate_recommendation(long).unwrap_err(), RecommendationError::ExplanationTooLong);
    }

    #[test]
    fn markup_spans_alternate() {
        assert_eq!(
            markup_spans("about **IR** and **NLP**"),
            vec![("about ", false), ("IR", true), (" and ", false), ("NLP", true)]
        );
        assert_eq!(strip_markup("about **IR**"), "about IR");
    }

    #[test]
    fn window_boundaries() {
        let w = ApiSettings::default().submission_window;
        let d = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
        assert!(w.contains(w.start_on(d)));
        assert!(!w.contains(w.end_on(d)));
        assert!(w.contains(w.end_on(d) - Duration::seconds(1)));
        assert!(!w.contains(w.start_on(d) + Duration::hours(3)));

        let wrap = SubmissionWindow { start_utc: NaiveTime::from_hms_opt(23, 0, 0).unwrap(), duration_minutes: 120 };
        assert!(wrap.contains(d.and_hms_opt(0, 30, 0).unwrap().and_utc()));
        assert!(!wrap.contains(d.and_hms_opt(1, 0, 0).unwrap().and_utc()));
    }

    #[test]
    fn impression_invariants() {
        let mut imp = Impression {
            impression_id: "i".into(),
            user_id: "u".into(),
            date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            kind: ItemKind::Article,
            systems: vec!["a".into(), "b".into()],
            slots: vec![
                Slot { rank: 1, item_id: "x".into(), source_system_id: "a".into(), explanation: None },
                Slot { rank: 2, item_id: "y".into(), source_system_id: "b".into(), explanation: None },
            ],
        };
        assert!(imp.check_invariants().is_ok());
        imp.slots[1].item_id = "x".into();
        assert!(imp.check_invariants().is_err());
        imp.slots[1].item_id = "y".into();
        imp.slots[1].source_system_id = "c".into();
        assert!(imp.check_invariants().is_err());
    }

    #[test]
    fn feedback_rules() {
        let mut fb = FeedbackRecord {
            user_id: "u".into(),
            article_id: Some("a".into()),
            relevance: Some(5),
            explanation_satisfaction: Some(5),
            explanation_persuasiveness: Some(5),
            explanation_transparency: Some(5),
            explanation_scrutability: Some(5),
            free_text: "great".into(),
            kind: FeedbackKind::RecommendationFeedback,
        };
        assert!(fb.validate().is_ok());
        fb.relevance = Some(6);
        assert!(fb.validate().is_err());
        fb.relevance = Some(3);
        fb.article_id = None;
        assert!(fb.validate().is_err());
        fb.kind = FeedbackKind::BugReport;
        assert!(fb.validate().is_ok());
    }

    proptest! {
        #[test]
        fn canonicalization_is_idempotent(s in "\\PC{0,220}") {
            if let Ok(t) = Topic::parse(&s) {
                let again = Topic::parse(t.text()).unwrap();
                prop_assert_eq!(again.text(), t.text());
                prop_assert_eq!(again.key(), t.key());
                prop_assert_eq!(canonical_topic(t.key()).unwrap(), t.key().to_owned());
            }
        }

        #[test]
        fn validation_is_total(
            email in "\\PC{0,30}",
            name in "\\PC{0,10}",
            topics in proptest::collection::vec("\\PC{0,20}", 0..5),
            freq in prop_oneof![Just("daily".to_string()), Just("weekly".to_string()), Just(String::new()), "\\PC{0,6}"],
            day in proptest::option::of("\\PC{0,8}"),
        ) {
            let r = RawProfile {
                email, name, topics,
                digest_frequency: freq.to_string(),
                weekly_digest_day: day,
                external_links: vec![],
            };
            if let Ok(p) = validate(&r) {
                prop_assert!(is_valid_email(&p.email));
                prop_assert!(!p.name.is_empty());
                let keys: HashSet<_> = p.topics.iter().map(|t| t.key().to_owned()).collect();
                prop_assert_eq!(keys.len(), p.topics.len());
                prop_assert!(p.topics.iter().all(|t| !t.text().is_empty() && t.text().chars().count() <= MAX_TOPIC_CHARS));
                if p.digest_frequency == DigestFrequency::Weekly {
                    prop_assert!(p.weekly_digest_day.is_some());
                }
            }
        }

        #[test]
        fn accepted_explanations_satisfy_invariants(text in "[a-z *]{0,40}", score in proptest::num::f64::ANY) {
            let raw = RawRecommendation {
                system_id: "s".into(), user_id: "u".into(), article_id: "a".into(),
                score, explanation: Some(text), submitted_at: Utc::now(),
            };
            if let Ok(rec) = validate_recommendation(raw) {
                prop_assert!(rec.score.is_finite());
                prop_assert!(rec.explanation.matches("**").count() % 2 == 0);
                prop_assert!(!rec.explanation.trim().is_empty());
            }
        }
    }
}
