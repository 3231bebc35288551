use std::fmt::Write;

use crate::experiment::ExperimentResult;

/// A fixed-width leaderboard table.
pub fn table(r: &ExperimentResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<4} {:<24} {:<8} {:>11} {:>8}", "rank", "system", "quality", "impressions", "MNR");
    for (i, s) in r.leaderboard.iter().enumerate() {
        let quality =
            serde_json::to_value(s.quality).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<4} {:<24} {:<8} {:>11} {:>8.4}",
            i + 1,
            s.name,
            quality,
            s.impressions,
            s.mean_normalized_reward
        );
    }
    let e = &r.events;
    let _ = writeln!(
        out,
        "seed {}: {} article impressions, {} clicks, {} saves, {} re-exposures",
        r.seed, r.article_impressions, e.clicked_web, e.saved, r.reexposures
    );
    out
}
