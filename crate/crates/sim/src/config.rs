use std::path::Path;

use chrono::NaiveDate;
use litlab_core::InteractionWeightTable;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    /// Ranks by true relevance.
    Oracle,
    /// True relevance plus Gaussian noise.
    Noisy,
    /// Uniformly random scores.
    Random,
    /// The BM25 baseline client, run over the same API.
    Bm25,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub quality: Quality,
}

impl SystemSpec {
    pub fn new(name: &str, quality: Quality) -> Self {
        SystemSpec { name: name.to_owned(), quality }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_users: usize,
    pub n_days: usize,
    pub systems: Vec<SystemSpec>,
    pub rng_seed: u64,
    pub weights: InteractionWeightTable,
    pub start_date: NaiveDate,
    pub articles_per_day: usize,
    pub n_themes: usize,
    pub terms_per_theme: usize,
    pub hidden_terms: usize,
    pub click_base_rate: f64,
    pub save_rate_given_click: f64,
    /// Standard deviation of the noise added by `noisy` systems.
    pub noise_sd: f64,
    pub systems_per_impression: usize,
    /// Adds a topic-suggesting system and lets users answer its suggestions.
    pub topic_recommender: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_users: 200,
            n_days: 30,
            systems: vec![
                SystemSpec::new("oracle", Quality::Oracle),
                SystemSpec::new("noisy", Quality::Noisy),
                SystemSpec::new("random", Quality::Random),
            ],
            rng_seed: 1,
            weights: InteractionWeightTable::default(),
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            articles_per_day: 40,
            n_themes: 12,
            terms_per_theme: 12,
            hidden_terms: 6,
            click_base_rate: 0.6,
            save_rate_given_click: 0.5,
            noise_sd: 0.25,
            systems_per_impression: 3,
            topic_recommender: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_owned()));
        if self.n_users == 0 || self.n_days == 0 {
            return bad("n_users and n_days must be at least 1");
        }
        if self.systems.is_empty() {
            return bad("at least one system is required");
        }
        let mut names: Vec<&str> = self.systems.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("system names must be unique");
        }
        for p in [self.click_base_rate, self.save_rate_given_click] {
            if !(0.0..=1.0).contains(&p) {
                return bad("rates must lie in [0, 1]");
            }
        }
        if self.n_themes == 0 || self.terms_per_theme == 0 || self.hidden_terms == 0 {
            return bad("themes, terms per theme and hidden terms must be positive");
        }
        if self.hidden_terms > self.terms_per_theme {
            return bad("hidden_terms cannot exceed terms_per_theme");
        }
        if !(self.noise_sd >= 0.0) || self.systems_per_impression == 0 {
            return bad("noise_sd must be non-negative and systems_per_impression positive");
        }
        Ok(())
    }

    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let cfg: SimConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
