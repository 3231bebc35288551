//! Digest emails with tokenized click and seen tracking.

use std::collections::HashSet;
use std::path::PathBuf;

use chrono::{Datelike, Days, NaiveDate};
use lettre::message::{header::ContentType, Mailbox, MultiPart, SinglePart};
use lettre::Message;
use parking_lot::Mutex;
use serde::Serialize;

use crate::admin::{JobKind, JobOutcome};
use crate::error::{Error, Result};
use crate::model::{markup_spans, strip_markup, Article, DigestFrequency, ImpressionId, ItemKind, UserId};
use crate::storage::{Db, NewEvent, RecordOutcome, TrackingAction};
use crate::Platform;

/// A transparent 1×1 GIF.
pub const PIXEL_GIF: [u8; 43] = [
    0x47, 0x49, 0x46, 0x38, 0x39, 0x61, 0x01, 0x00, 0x01, 0x00, 0x80, 0x00, 0x00, 0x00, 0x00, 0x00, 0xff, 0xff, 0xff,
    0x21, 0xf9, 0x04, 0x01, 0x00, 0x00, 0x00, 0x00, 0x2c, 0x00, 0x00, 0x00, 0x00, 0x01, 0x00, 0x01, 0x00, 0x00, 0x02,
    0x02, 0x44, 0x01, 0x00, 0x3b,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DigestItem {
    pub impression_id: ImpressionId,
    pub date: NaiveDate,
    pub rank: u32,
    pub article: Article,
    pub explanation: String,
    pub tracked_click_url: String,
    pub tracking_pixel_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Digest {
    pub user_id: UserId,
    pub email: String,
    pub name: String,
    pub date: NaiveDate,
    pub items: Vec<DigestItem>,
}

/// Source slots for a digest without issuing tokens: (impression, date,
/// rank, article id, explanation), in digest order.
fn digest_sources(
    db: &Db,
    user: &UserId,
    date: NaiveDate,
) -> Option<Vec<(ImpressionId, NaiveDate, u32, String, String)>> {
    let profile = db.user(user)?;
    if !profile.active {
        return None;
    }
    let from = match profile.digest_frequency {
        DigestFrequency::Daily => date,
        DigestFrequency::Weekly => {
            if profile.weekly_digest_day != Some(date.weekday()) {
                return None;
            }
            date.checked_sub_days(Days::new(6))?
        }
    };
    let mut impressions: Vec<_> = db
        .impressions_of(user)
        .into_iter()
        .filter(|i| i.kind == ItemKind::Article && from <= i.date && i.date <= date)
        .collect();
    // newest day first; within a day keep creation order
    impressions.sort_by(|a, b| b.date.cmp(&a.date).then(a.impression_id.cmp(&b.impression_id)));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for imp in impressions {
        for slot in &imp.slots {
            if seen.insert(slot.item_id.clone()) {
                out.push((
                    imp.impression_id.clone(),
                    imp.date,
                    slot.rank,
                    slot.item_id.clone(),
                    slot.explanation.clone().unwrap_or_default(),
                ));
            }
        }
    }
    (!out.is_empty()).then_some(out)
}

/// Builds the digest a user should receive on `date`, issuing tracking
/// tokens. `None` when it is not the user's send day or nothing was shown.
pub fn build_digest(db: &mut Db, user: &UserId, date: NaiveDate, base_url: &str) -> Result<Option<Digest>> {
    let Some(sources) = digest_sources(db, user, date) else {
        return Ok(None);
    };
    let base = base_url.trim_end_matches('/');
    let mut items = Vec::with_capacity(sources.len());
    for (imp, day, rank, article_id, explanation) in sources {
        let Some(article) = db.article(&article_id.clone().into()).cloned() else {
            continue;
        };
        let click = db.issue_token(&imp, &article_id, TrackingAction::ClickedEmail)?;
        let pixel = db.issue_token(&imp, &article_id, TrackingAction::SeenEmail)?;
        items.push(DigestItem {
            impression_id: imp,
            date: day,
            rank,
            article,
            explanation,
            tracked_click_url: format!("{base}/t/click/{click}"),
            tracking_pixel_url: format!("{base}/t/pixel/{pixel}"),
        });
    }
    if items.is_empty() {
        return Ok(None);
    }
    let profile = db.user(user).expect("checked in digest_sources");
    Ok(Some(Digest { user_id: user.clone(), email: profile.email.clone(), name: profile.name.clone(), date, items }))
}

fn escape(s: &str) -> String {
    html_escape::encode_text(s).into_owned()
}

/// Explanation markup to HTML; only `**…**` becomes `<b>…</b>`.
pub fn explanation_html(text: &str) -> String {
    markup_spans(text)
        .into_iter()
        .map(|(s, bold)| if bold { format!("<b>{}</b>", escape(s)) } else { escape(s) })
        .collect()
}

pub fn render_html(digest: &Digest) -> String {
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html><body>\n");
    html.push_str(&format!(
        "<p>Hello {}, here are your article recommendations for {}.</p>\n<ol>\n",
        escape(&digest.name),
        digest.date
    ));
    for item in &digest.items {
        let attr = |s: &str| html_escape::encode_double_quoted_attribute(s).into_owned();
        html.push_str(&format!(
            "<li><a href=\"{}\">{}</a><br>\n<i>{}</i><br>\n{}\n<img src=\"{}\" width=\"1\" height=\"1\" alt=\"\"></li>\n",
            attr(&item.tracked_click_url),
            escape(&item.article.title),
            escape(&item.article.authors.join(", ")),
            explanation_html(&item.explanation),
            attr(&item.tracking_pixel_url),
        ));
    }
    html.push_str("</ol>\n</body></html>\n");
    html
}

pub fn render_text(digest: &Digest) -> String {
    let mut text = format!("Hello {}, here are your article recommendations for {}.\n\n", digest.name, digest.date);
    for (i, item) in digest.items.iter().enumerate() {
        text.push_str(&format!(
            "{}. {}\n   {}\n   {}\n   {}\n\n",
            i + 1,
            item.article.title,
            item.article.authors.join(", "),
            strip_markup(&item.explanation),
            item.tracked_click_url
        ));
    }
    text
}

/// RFC 5322 message with plain-text and HTML alternatives.
pub fn render_email(digest: &Digest, from: &str) -> Result<Vec<u8>> {
    let from: Mailbox = from.parse().map_err(|e| Error::Email(format!("from: {e}")))?;
    let to: Mailbox = format!("{} <{}>", digest.name.replace(['<', '>', '"'], ""), digest.email)
        .parse()
        .or_else(|_| digest.email.parse())
        .map_err(|e| Error::Email(format!("to: {e}")))?;
    let message = Message::builder()
        .from(from)
        .to(to)
        .subject(format!("Your article recommendations for {}", digest.date))
        .multipart(
            MultiPart::alternative()
                .singlepart(SinglePart::builder().header(ContentType::TEXT_PLAIN).body(render_text(digest)))
                .singlepart(SinglePart::builder().header(ContentType::TEXT_HTML).body(render_html(digest))),
        )
        .map_err(|e| Error::Email(e.to_string()))?;
    Ok(message.formatted())
}

pub trait EmailSink: Send + Sync {
    fn deliver(&self, user: &UserId, date: NaiveDate, message: &[u8]) -> Result<()>;
}

/// Writes `<date>_<user_id>.eml` files.
#[derive(Debug, Clone)]
pub struct OutboxSink {
    pub dir: PathBuf,
}

impl OutboxSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OutboxSink { dir: dir.into() }
    }

    pub fn file_name(user: &UserId, date: NaiveDate) -> String {
        format!("{date}_{user}.eml")
    }
}

impl EmailSink for OutboxSink {
    fn deliver(&self, user: &UserId, date: NaiveDate, message: &[u8]) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.dir.join(Self::file_name(user, date)), message)?;
        Ok(())
    }
}

/// Keeps messages in memory.
#[derive(Debug, Default)]
pub struct MemorySink(pub Mutex<Vec<(UserId, NaiveDate, Vec<u8>)>>);

impl MemorySink {
    pub fn messages(&self) -> Vec<(UserId, NaiveDate, Vec<u8>)> {
        self.0.lock().clone()
    }
}

impl EmailSink for MemorySink {
    fn deliver(&self, user: &UserId, date: NaiveDate, message: &[u8]) -> Result<()> {
        self.0.lock().push((user.clone(), date, message.to_vec()));
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DigestReport {
    pub sent: usize,
    pub already_sent: usize,
    pub nothing_to_send: usize,
}

/// Sends the digests of `date`; each (user, date) is sent at most once.
pub fn run_digest_job(platform: &Platform, date: NaiveDate, sink: &dyn EmailSink) -> Result<DigestReport> {
    let store = platform.store();
    store.write(|db| db.begin_job(JobKind::Digest, date, platform.now()))?;
    let result = send_digests(platform, date, sink);
    let (outcome, detail) = match &result {
        Ok(r) => (JobOutcome::Success, serde_json::to_string(r).ok()),
        Err(e) => (JobOutcome::Failed, Some(e.to_string())),
    };
    store.write(|db| Ok(db.finish_job(JobKind::Digest, date, platform.now(), outcome, detail)))?;
    result
}

fn send_digests(platform: &Platform, date: NaiveDate, sink: &dyn EmailSink) -> Result<DigestReport> {
    let store = platform.store();
    let base = &platform.config().server.base_url;
    let from = &platform.config().server.mail_from;
    let users: Vec<UserId> = store.read(|db| db.active_users().map(|u| u.user_id.clone()).collect());
    let mut report = DigestReport::default();
    for user in users {
        let digest = store.write(|db| {
            if db.digest_sent(&user, date) {
                return Ok(Err(()));
            }
            build_digest(db, &user, date, base).map(Ok)
        })?;
        let digest = match digest {
            Err(()) => {
                report.already_sent += 1;
                continue;
            }
            Ok(None) => {
                report.nothing_to_send += 1;
                continue;
            }
            Ok(Some(d)) => d,
        };
        let message = render_email(&digest, from)?;
        sink.deliver(&user, date, &message)?;
        store.write(|db| Ok(db.mark_digest_sent(&user, date)))?;
        report.sent += 1;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrackingResolution {
    Redirect { url: String, outcome: RecordOutcome },
    Pixel { outcome: RecordOutcome },
}

/// Records the token's interaction (idempotently) and says what to serve.
pub fn resolve_tracking(platform: &Platform, token: &str) -> Result<TrackingResolution> {
    let now = platform.now();
    platform.store().write(|db| {
        let t = db.tracking_token(token).cloned().ok_or_else(|| Error::not_found("token", token))?;
        let user = db
            .impression(&t.impression_id)
            .map(|i| i.user_id.clone())
            .ok_or_else(|| Error::not_found("impression", &t.impression_id))?;
        let url = match t.action {
            TrackingAction::ClickedEmail => Some(
                db.article(&t.item_id.clone().into())
                    .map(Article::abstract_url)
                    .unwrap_or_else(|| format!("https://arxiv.org/abs/{}", t.item_id)),
            ),
            TrackingAction::SeenEmail => None,
        };
        let outcome = db.record_interaction(NewEvent {
            impression_id: t.impression_id,
            user_id: user,
            item_id: t.item_id,
            event_type: t.action.interaction(),
            occurred_at: now,
        })?;
        Ok(match url {
            Some(url) => TrackingResolution::Redirect { url, outcome },
            None => TrackingResolution::Pixel { outcome },
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_is_a_gif() {
        assert_eq!(&PIXEL_GIF[..6], b"GIF89a");
        assert_eq!(PIXEL_GIF.len(), 43);
    }

    #[test]
    fn bold_markup_and_escaping() {
        assert_eq!(explanation_html("about **IR**"), "about <b>IR</b>");
        assert_eq!(explanation_html("**<script>**"), "<b>&lt;script&gt;</b>");
        assert_eq!(strip_markup("about **IR**"), "about IR");
    }

    #[test]
    fn outbox_naming() {
        let d = NaiveDate::from_ymd_opt(2024, 5, 6).unwrap();
        assert_eq!(OutboxSink::file_name(&"u000001".into(), d), "2024-05-06_u000001.eml");
    }
}
