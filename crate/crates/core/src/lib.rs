//! Core of a living-lab platform for scientific-article recommendation:
//! data model, storage, team-draft multileaving, digests and evaluation.

use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use num_rational::Rational64;
use rand::RngCore;

pub mod accounts;
pub mod admin;
pub mod clock;
pub mod config;
pub mod digest;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod model;
pub mod multileave;
pub mod scalar;
pub mod storage;

pub use clock::{Clock, ManualClock, SystemClock};
pub use config::Config;
pub use error::{Error, Result};
pub use evaluation::{InteractionWeightTable, Period, SystemScorecard};
pub use model::ApiSettings;
pub use scalar::Scalar;
pub use storage::{Db, Store};

pub type Scorecard = SystemScorecard<f64>;
pub type ExactScorecard = SystemScorecard<Rational64>;

/// Shared handle on the store, configuration and clock.
#[derive(Clone)]
pub struct Platform {
    store: Arc<Store>,
    config: Arc<Config>,
    settings: ApiSettings,
    clock: Arc<dyn Clock>,
}

impl Platform {
    pub fn new(store: Store, config: Config, clock: Arc<dyn Clock>) -> Result<Self> {
        let settings = config.api_settings()?;
        Ok(Platform { store: Arc::new(store), config: Arc::new(config), settings, clock })
    }

    /// In-memory platform with default configuration and a manual clock.
    pub fn in_memory(at: DateTime<Utc>) -> (Self, ManualClock) {
        let clock = ManualClock::new(at);
        let p = Platform::new(Store::in_memory(), Config::default(), Arc::new(clock.clone()))
            .expect("default configuration is valid");
        (p, clock)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn settings(&self) -> ApiSettings {
        self.settings
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn today(&self) -> NaiveDate {
        self.now().date_naive()
    }
}

/// 128 random bits, hex encoded.
pub fn random_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
