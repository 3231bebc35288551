//! Position-based click model.

use rand::Rng;

use crate::population::SyntheticUser;

/// Probability that the item at 1-based `rank` is examined.
pub fn examination_probability(rank: u32) -> f64 {
    1.0 / f64::from(rank + 1).log2()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotOutcome {
    pub examined: bool,
    pub clicked: bool,
    pub saved: bool,
}

/// Examine with the position probability, click with `base · rel`, and on
/// a click save with `save · rel`.
pub fn simulate_slot(user: &SyntheticUser, rel: f64, rank: u32, rng: &mut impl Rng) -> SlotOutcome {
    let examined = rng.random::<f64>() < examination_probability(rank);
    let clicked = examined && rng.random::<f64>() < user.click_base_rate * rel;
    let saved = clicked && rng.random::<f64>() < user.save_rate_given_click * rel;
    SlotOutcome { examined, clicked, saved }
}

pub fn expected_clicks(user: &SyntheticUser, rel: f64, rank: u32) -> f64 {
    examination_probability(rank) * user.click_base_rate * rel
}

pub fn expected_saves(user: &SyntheticUser, rel: f64, rank: u32) -> f64 {
    expected_clicks(user, rel, rank) * user.save_rate_given_click * rel
}
