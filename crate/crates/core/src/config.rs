//! Platform configuration, loaded from TOML.
//!
//! ```toml
//! [api]
//! user_batch_size = 100
//! recommendation_batch_max = 100
//! window_start_utc = "00:30"
//! window_hours = 2.5
//!
//! [pool]
//! window_days = 7
//!
//! [interleave]
//! top_k = 10
//! systems_per_impression = 3
//! ```

use std::path::{Path, PathBuf};

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::InteractionWeightTable;
use crate::model::{ApiSettings, SubmissionWindow};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub api: ApiSection,
    pub pool: PoolSection,
    pub interleave: InterleaveSection,
    pub weights: InteractionWeightTable,
    pub server: ServerSection,
    pub auth: AuthSection,
    pub jobs: JobsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiSection {
    pub user_batch_size: usize,
    pub recommendation_batch_max: usize,
    pub window_start_utc: String,
    pub window_hours: f64,
}

impl Default for ApiSection {
    fn default() -> Self {
        ApiSection {
            user_batch_size: 100,
            recommendation_batch_max: 100,
            window_start_utc: "00:30".into(),
            window_hours: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSection {
    pub window_days: u32,
}

impl Default for PoolSection {
    fn default() -> Self {
        PoolSection { window_days: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterleaveSection {
    pub top_k: usize,
    pub systems_per_impression: usize,
    /// Global seed mixed into every per-user interleaving seed.
    pub seed: u64,
}

impl Default for InterleaveSection {
    fn default() -> Self {
        InterleaveSection { top_k: 10, systems_per_impression: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerSection {
    pub bind: String,
    /// Public origin used in tracked email links.
    pub base_url: String,
    pub mail_from: String,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            bind: "127.0.0.1:8080".into(),
            base_url: "http://localhost:8080".into(),
            mail_from: "digest@localhost".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthSection {
    pub session_ttl_hours: u32,
    pub hash_memory_kib: u32,
    pub hash_iterations: u32,
}

impl Default for AuthSection {
    fn default() -> Self {
        AuthSection { session_ttl_hours: 24 * 30, hash_memory_kib: 19 * 1024, hash_iterations: 2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobsSection {
    /// Feed file ingested by `run_all`; `{date}` is replaced by the run date.
    pub ingest_file: Option<String>,
    pub outbox_dir: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.api_settings()?;
        if config.interleave.systems_per_impression == 0 {
            return Err(Error::Config("interleave.systems_per_impression must be positive".into()));
        }
        Ok(config)
    }

    pub fn api_settings(&self) -> Result<ApiSettings> {
        let start_utc = NaiveTime::parse_from_str(&self.api.window_start_utc, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(&self.api.window_start_utc, "%H:%M:%S"))
            .map_err(|_| Error::Config(format!("bad api.window_start_utc `{}`", self.api.window_start_utc)))?;
        let minutes = self.api.window_hours * 60.0;
        if !minutes.is_finite() || minutes < 1.0 || minutes.fract() != 0.0 {
            return Err(Error::Config("api.window_hours must be a positive whole number of minutes".into()));
        }
        let settings = ApiSettings {
            user_batch_size: self.api.user_batch_size,
            recommendation_batch_max: self.api.recommendation_batch_max,
            candidate_window_days: self.pool.window_days,
            submission_window: SubmissionWindow { start_utc, duration_minutes: minutes as u32 },
            top_k: self.interleave.top_k,
        };
        settings.validate().map_err(Error::Config)?;
        Ok(settings)
    }
}
