//! Fair system selection, team-draft multileaving, and the daily
//! interleaving job.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tracing::info;

use crate::admin::{JobKind, JobOutcome};
use crate::error::{Error, Result};
use crate::model::{ImpressionId, ItemKind, Slot, SystemId, UserId};
use crate::storage::{Db, ImpressionDraft};
use crate::Platform;

pub type InterleaveRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> InterleaveRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-(date, kind, user) seed; stable across runs and platforms.
pub fn derive_seed(global_seed: u64, date: NaiveDate, kind: ItemKind, user: &UserId, nonce: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(date.to_string().as_bytes());
    h.update([0]);
    h.update(kind.as_str().as_bytes());
    h.update([0]);
    h.update(user.as_str().as_bytes());
    h.update(nonce.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Sampling weight of a system with `impressions` past impressions.
pub fn selection_weight(impressions: u64) -> f64 {
    1.0 / (1.0 + impressions as f64)
}

/// Draws `min(n, |candidates|)` distinct systems. Each draw picks a remaining
/// system with probability proportional to `1 / (1 + impression_count)`.
pub fn select_systems<R: Rng + ?Sized>(candidates: &BTreeMap<SystemId, u64>, n: usize, rng: &mut R) -> Vec<SystemId> {
    let mut remaining: Vec<(&SystemId, f64)> = candidates.iter().map(|(s, c)| (s, selection_weight(*c))).collect();
    let mut selected = Vec::with_capacity(n.min(remaining.len()));
    while selected.len() < n && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (i, (_, w)) in remaining.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        let (s, _) = remaining.remove(pick);
        selected.push(s.clone());
    }
    selected
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DraftSlot<I> {
    pub item: I,
    pub source: SystemId,
}

/// Team-draft multileaving.
///
/// Each round a uniformly random permutation of the systems (in key order
/// before shuffling) takes turns; on its turn a system contributes its
/// highest-ranked item not yet in the output. Exhausted systems are skipped.
/// Stops after `k` slots or once every input is exhausted.
pub fn team_draft_multileave<I, R>(inputs: &BTreeMap<SystemId, Vec<I>>, k: usize, rng: &mut R) -> Vec<DraftSlot<I>>
where
    I: Clone + Eq + Hash,
    R: Rng + ?Sized,
{
    let lists: Vec<(&SystemId, &Vec<I>)> = inputs.iter().collect();
    let mut cursors = vec![0usize; lists.len()];
    let mut used: HashSet<&I> = HashSet::new();
    let mut out = Vec::with_capacity(k);
    if lists.is_empty() {
        return out;
    }
    let mut order: Vec<usize> = (0..lists.len()).collect();
    while out.len() < k {
        order.sort_unstable();
        order.shuffle(rng);
        let mut contributed = false;
        for &s in &order {
            if out.len() == k {
                break;
            }
            let (system, list) = lists[s];
            let cursor = &mut cursors[s];
            while *cursor < list.len() && used.contains(&list[*cursor]) {
                *cursor += 1;
            }
            if let Some(item) = list.get(*cursor) {
                used.insert(item);
                out.push(DraftSlot { item: item.clone(), source: system.clone() });
                *cursor += 1;
                contributed = true;
            }
        }
        if !contributed {
            break;
        }
    }
    out
}

/// Builds one user's impression of `kind` for `date` from the current stacks.
///
/// `counts` are the impression counts used for selection (a day-start
/// snapshot in the daily job). Returns `None` when no system has anything
/// for the user.
pub fn interleave_user(
    db: &mut Db,
    user: &UserId,
    kind: ItemKind,
    date: NaiveDate,
    counts: &BTreeMap<SystemId, u64>,
    seed: u64,
    top_k: usize,
    systems_per_impression: usize,
) -> Result<Option<ImpressionId>> {
    let candidates: BTreeMap<SystemId, u64> = db
        .systems_with_stacks(user, kind)
        .into_iter()
        .map(|s| {
            let c = counts.get(&s).copied().unwrap_or(0);
            (s, c)
        })
        .collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    let mut rng = seeded_rng(seed);
    let selected = select_systems(&candidates, systems_per_impression, &mut rng);

    let mut inputs: BTreeMap<SystemId, Vec<String>> = BTreeMap::new();
    let mut explanations: HashMap<(SystemId, String), String> = HashMap::new();
    for s in &selected {
        let items = match kind {
            ItemKind::Article => db
                .take_top_k(user, s, top_k)
                .into_iter()
                .map(|r| {
                    explanations.insert((s.clone(), r.article_id.0.clone()), r.explanation);
                    r.article_id.0
                })
                .collect(),
            ItemKind::Topic => {
                db.take_top_k_topics(user, s, top_k).into_iter().map(|t| t.topic.key().to_owned()).collect()
            }
        };
        inputs.insert(s.clone(), items);
    }
    let drafted = team_draft_multileave(&inputs, top_k, &mut rng);
    if drafted.is_empty() {
        return Ok(None);
    }
    let slots = drafted
        .into_iter()
        .enumerate()
        .map(|(i, d)| Slot {
            rank: i as u32 + 1,
            explanation: explanations.remove(&(d.source.clone(), d.item.clone())),
            item_id: d.item,
            source_system_id: d.source,
        })
        .collect();
    let id = db.insert_impression(ImpressionDraft { user_id: user.clone(), date, kind, systems: selected, slots })?;
    Ok(Some(id))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DailyReport {
    pub date: Option<NaiveDate>,
    pub impressions_created: usize,
    pub users_skipped: usize,
    pub topic_impressions_created: usize,
    pub stack_entries_purged: usize,
}

/// Runs the daily interleaving for `date`. Refuses while the day's
/// submission window is open or when the job already ran.
pub fn run_daily_job(platform: &Platform, date: NaiveDate) -> Result<DailyReport> {
    let settings = platform.settings();
    let now = platform.now();
    if now < settings.submission_window.end_on(date) {
        return Err(Error::WindowOpen(date));
    }
    let store = platform.store();
    store.write(|db| db.begin_job(JobKind::Interleave, date, now))?;
    let result = interleave_all(platform, date);
    let finished = platform.now();
    match &result {
        Ok(report) => {
            let detail = serde_json::to_string(report).ok();
            store.write(|db| Ok(db.finish_job(JobKind::Interleave, date, finished, JobOutcome::Success, detail)))?;
            info!(%date, created = report.impressions_created, skipped = report.users_skipped, "interleave finished");
        }
        Err(e) => {
            let msg = e.to_string();
            store.write(|db| Ok(db.finish_job(JobKind::Interleave, date, finished, JobOutcome::Failed, Some(msg))))?;
        }
    }
    result
}

fn interleave_all(platform: &Platform, date: NaiveDate) -> Result<DailyReport> {
    let settings = platform.settings();
    let cfg = &platform.config().interleave;
    let store = platform.store();

    let mut report = DailyReport { date: Some(date), ..Default::default() };
    report.stack_entries_purged = store.write(|db| Ok(db.purge_stacks(date, settings.candidate_window_days)))?;

    // Selection within one day uses day-start counts.
    let (counts, users) = store.read(|db| {
        let ids: Vec<SystemId> = db.systems().map(|s| s.system_id.clone()).collect();
        let users: Vec<UserId> = db.active_users().map(|u| u.user_id.clone()).collect();
        (db.impression_counts(&ids), users)
    });

    for user in &users {
        for kind in [ItemKind::Article, ItemKind::Topic] {
            let created = store.write(|db| {
                if db.user(user).is_none() || db.has_impression_on(user, date, kind) {
                    return Ok(None);
                }
                let seed = derive_seed(cfg.seed, date, kind, user, 0);
                interleave_user(db, user, kind, date, &counts, seed, settings.top_k, cfg.systems_per_impression)
            })?;
            match (kind, created) {
                (ItemKind::Article, Some(_)) => report.impressions_created += 1,
                (ItemKind::Article, None) => report.users_skipped += 1,
                (ItemKind::Topic, Some(_)) => report.topic_impressions_created += 1,
                (ItemKind::Topic, None) => {}
            }
        }
    }
    Ok(report)
}
