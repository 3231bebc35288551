//! Reward-based online metrics.
//!
//! A system's *reward* in an impression is the weighted sum of interaction
//! events on the slots it sourced. The *normalized reward* divides that by the
//! impression's total reward, and the *mean normalized reward* (MNR) averages
//! normalized rewards over a period. Impressions whose total reward is zero
//! carry no signal and are left out of the mean.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::model::{Impression, InteractionEvent, InteractionType, ItemKind, SystemId};
use crate::scalar::Scalar;

/// Reward points per interaction type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionWeightTable {
    pub saved: u32,
    pub clicked_email: u32,
    pub clicked_web: u32,
    pub seen_email: u32,
    pub seen_web: u32,
    pub topic_accepted: u32,
    pub topic_rejected: u32,
    pub topic_refreshed: u32,
    pub topic_expired: u32,
}

impl Default for InteractionWeightTable {
    fn default() -> Self {
        InteractionWeightTable {
            saved: 5,
            clicked_email: 3,
            clicked_web: 3,
            seen_email: 0,
            seen_web: 0,
            topic_accepted: 1,
            topic_rejected: 0,
            topic_refreshed: 0,
            topic_expired: 0,
        }
    }
}

impl InteractionWeightTable {
    pub fn weight(&self, t: InteractionType) -> u32 {
        match t {
            InteractionType::Saved => self.saved,
            InteractionType::ClickedEmail => self.clicked_email,
            InteractionType::ClickedWeb => self.clicked_web,
            InteractionType::SeenEmail => self.seen_email,
            InteractionType::SeenWeb => self.seen_web,
            InteractionType::TopicAccepted => self.topic_accepted,
            InteractionType::TopicRejected => self.topic_rejected,
            InteractionType::TopicRefreshed => self.topic_refreshed,
            InteractionType::TopicExpired => self.topic_expired,
        }
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        InteractionWeightTable {
            saved: self.saved * factor,
            clicked_email: self.clicked_email * factor,
            clicked_web: self.clicked_web * factor,
            seen_email: self.seen_email * factor,
            seen_web: self.seen_web * factor,
            topic_accepted: self.topic_accepted * factor,
            topic_rejected: self.topic_rejected * factor,
            topic_refreshed: self.topic_refreshed * factor,
            topic_expired: self.topic_expired * factor,
        }
    }
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Option<Self> {
        (start <= end).then_some(Period { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScorecard<T> {
    pub system_id: SystemId,
    pub period: Period,
    pub impressions: u64,
    pub mean_normalized_reward: T,
}

impl<T: Scalar> SystemScorecard<T> {
    pub fn to_f64(&self) -> SystemScorecard<f64> {
        SystemScorecard {
            system_id: self.system_id.clone(),
            period: self.period,
            impressions: self.impressions,
            mean_normalized_reward: self.mean_normalized_reward.to_f64(),
        }
    }
}

/// Sum of weights of the events whose item was sourced by `system`.
pub fn impression_reward(
    impression: &Impression,
    events: &[InteractionEvent],
    system: &SystemId,
    weights: &InteractionWeightTable,
) -> u64 {
    events
        .iter()
        .filter(|e| e.impression_id == impression.impression_id)
        .filter(|e| impression.slot(&e.item_id).is_some_and(|s| &s.source_system_id == system))
        .map(|e| u64::from(weights.weight(e.event_type)))
        .sum()
}

/// Per-system share of the impression's total reward.
///
/// Every system selected for the interleaving gets an entry. Returns an empty
/// map when the impression earned no reward at all.
pub fn normalized_rewards<T: Scalar>(
    impression: &Impression,
    events: &[InteractionEvent],
    weights: &InteractionWeightTable,
) -> BTreeMap<SystemId, T> {
    let rewards: BTreeMap<&SystemId, u64> =
        impression.systems.iter().map(|s| (s, impression_reward(impression, events, s, weights))).collect();
    let total: u64 = rewards.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    let total = T::from_count(total);
    rewards.into_iter().map(|(s, r)| (s.clone(), T::from_count(r) / total.clone())).collect()
}

/// An impression together with its (deduplicated) events.
pub type ScoredImpression<'a> = (&'a Impression, &'a [InteractionEvent]);

/// MNR of `system` over the impressions in `period` it was selected for.
pub fn mean_normalized_reward<'a, T: Scalar>(
    system: &SystemId,
    period: Period,
    impressions: impl IntoIterator<Item = ScoredImpression<'a>>,
    weights: &InteractionWeightTable,
) -> SystemScorecard<T> {
    let mut count = 0u64;
    let mut signal = 0u64;
    let mut sum = T::zero();
    for (imp, events) in impressions {
        if !period.contains(imp.date) || !imp.systems.contains(system) {
            continue;
        }
        count += 1;
        let nr = normalized_rewards::<T>(imp, events, weights);
        if let Some(v) = nr.get(system) {
            signal += 1;
            sum = sum + v.clone();
        }
    }
    let mean = if signal == 0 { T::zero() } else { sum / T::from_count(signal) };
    SystemScorecard { system_id: system.clone(), period, impressions: count, mean_normalized_reward: mean }
}

/// Scorecards for every system that took part in an impression in `period`,
/// best MNR first, ties by system id.
pub fn leaderboard<'a, T: Scalar>(
    period: Period,
    impressions: impl IntoIterator<Item = ScoredImpression<'a>>,
    weights: &InteractionWeightTable,
) -> Vec<SystemScorecard<T>> {
    struct Acc<T> {
        impressions: u64,
        signal: u64,
        sum: T,
    }
    let mut acc: BTreeMap<SystemId, Acc<T>> = BTreeMap::new();
    for (imp, events) in impressions {
        if !period.contains(imp.date) {
            continue;
        }
        let nr = normalized_rewards::<T>(imp, events, weights);
        for s in &imp.systems {
            let a = acc.entry(s.clone()).or_insert_with(|| Acc { impressions: 0, signal: 0, sum: T::zero() });
            a.impressions += 1;
            if let Some(v) = nr.get(s) {
                a.signal += 1;
                a.sum = a.sum.clone() + v.clone();
            }
        }
    }
    let mut board: Vec<SystemScorecard<T>> = acc
        .into_iter()
        .map(|(system_id, a)| SystemScorecard {
            system_id,
            period,
            impressions: a.impressions,
            mean_normalized_reward: if a.signal == 0 { T::zero() } else { a.sum / T::from_count(a.signal) },
        })
        .collect();
    // Stable sort keeps the id order from the BTreeMap for ties.
    board.sort_by(|a, b| {
        b.mean_normalized_reward.partial_cmp(&a.mean_normalized_reward).unwrap_or(std::cmp::Ordering::Equal)
    });
    board
}

/// Filters impressions by kind before scoring.
pub fn of_kind<'a>(
    kind: ItemKind,
    impressions: impl IntoIterator<Item = ScoredImpression<'a>>,
) -> impl Iterator<Item = ScoredImpression<'a>> {
    impressions.into_iter().filter(move |(imp, _)| imp.kind == kind)
}
