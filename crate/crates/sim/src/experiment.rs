//! The full daily loop: ingest, submissions, interleaving, user behavior,
//! evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use axum::http::Method;
use axum::Router;
use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use litlab_core::accounts::sweep_expired_topics;
use litlab_core::admin::{compute_leaderboard, create_system};
use litlab_core::evaluation::Period;
use litlab_core::ingestion::ingest_records;
use litlab_core::model::{ArticleId, ItemKind, UserId};
use litlab_core::multileave::run_daily_job;
use litlab_core::{Config, ManualClock, Platform, Store};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::agents::{relevance_row, submit_topics, Agent, World};
use crate::behavior::simulate_slot;
use crate::config::{Quality, SimConfig};
use crate::http::{call, SystemClient};
use crate::population::{article_terms, generate_articles, generate_population, SyntheticUser, Vocabulary};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemResult {
    pub name: String,
    pub quality: Quality,
    /// Article impressions the system was selected for.
    pub impressions: u64,
    pub mean_normalized_reward: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventTotals {
    pub seen_web: usize,
    pub clicked_web: usize,
    pub saved: usize,
    pub topics_accepted: usize,
    pub topics_rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub seed: u64,
    /// Sorted by mean normalized reward, best first.
    pub leaderboard: Vec<SystemResult>,
    pub article_impressions: usize,
    pub topic_impressions: usize,
    pub events: EventTotals,
    /// Articles shown to the same user more than once; always 0.
    pub reexposures: usize,
}

impl ExperimentResult {
    pub fn mnr(&self, name: &str) -> Option<f64> {
        self.leaderboard.iter().find(|r| r.name == name).map(|r| r.mean_normalized_reward)
    }

    pub fn impressions(&self, name: &str) -> u64 {
        self.leaderboard.iter().find(|r| r.name == name).map_or(0, |r| r.impressions)
    }
}

fn at(date: NaiveDate, h: u32, m: u32) -> DateTime<Utc> {
    date.and_time(NaiveTime::from_hms_opt(h, m, 0).expect("valid time")).and_utc()
}

/// The simulation's platform: cheap password hashing and sessions that
/// outlive the run.
fn platform_for(cfg: &SimConfig, clock: &ManualClock) -> Result<Platform, SimError> {
    let mut config = Config::default();
    config.auth.hash_memory_kib = 64;
    config.auth.hash_iterations = 1;
    config.auth.session_ttl_hours = u32::try_from(24 * (cfg.n_days + 2)).unwrap_or(u32::MAX);
    config.interleave.seed = cfg.rng_seed;
    config.interleave.systems_per_impression = cfg.systems_per_impression;
    config.weights = cfg.weights;
    Ok(Platform::new(Store::in_memory(), config, Arc::new(clock.clone()))?)
}

struct SimUser {
    id: UserId,
    token: String,
    model: SyntheticUser,
}

async fn register_users(app: &Router, users: &[SyntheticUser]) -> Result<Vec<SimUser>, SimError> {
    let mut out = Vec::with_capacity(users.len());
    for u in users {
        let password = "simulated-password";
        let body = json!({
            "email": u.email, "name": "Simulated", "topics": u.topics,
            "digest_frequency": "daily", "password": password,
        });
        let (status, reg) = call(app, Method::POST, "/user/register", &[], Some(&body)).await;
        if !status.is_success() {
            return Err(SimError::Api(format!("register: {status} {reg}")));
        }
        let (status, login) =
            call(app, Method::POST, "/user/login", &[], Some(&json!({"email": u.email, "password": password}))).await;
        if !status.is_success() {
            return Err(SimError::Api(format!("login: {status} {login}")));
        }
        out.push(SimUser {
            id: UserId::new(reg["user_id"].as_str().unwrap_or_default()),
            token: login["token"].as_str().unwrap_or_default().to_owned(),
            model: u.clone(),
        });
    }
    Ok(out)
}

/// Runs `cfg` end to end and scores the systems on article impressions.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentResult, SimError> {
    cfg.validate()?;
    let rt = tokio::runtime::Builder::new_current_thread().build().map_err(|e| SimError::Config(e.to_string()))?;
    rt.block_on(run(cfg))
}

/// Runs the same configuration for each seed, in parallel.
pub fn run_seeds(cfg: &SimConfig, seeds: &[u64]) -> Result<Vec<ExperimentResult>, SimError> {
    seeds.par_iter().map(|&seed| run_experiment(&SimConfig { rng_seed: seed, ..cfg.clone() })).collect()
}

async fn run(cfg: &SimConfig) -> Result<ExperimentResult, SimError> {
    let mut world_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut click_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed_c11c);
    let clock = ManualClock::new(at(cfg.start_date, 0, 0));
    let platform = platform_for(cfg, &clock)?;
    let app = litlab_server::router(platform.clone());

    let vocab = Vocabulary::new(cfg.n_themes, cfg.terms_per_theme);
    let users = register_users(&app, &generate_population(cfg, &vocab, &mut world_rng)).await?;
    let user_index: HashMap<String, usize> = users.iter().enumerate().map(|(i, u)| (u.id.to_string(), i)).collect();
    let models: Vec<&SyntheticUser> = users.iter().map(|u| &u.model).collect();

    let mut agents = Vec::new();
    for (i, spec) in cfg.systems.iter().enumerate() {
        let sys = create_system(&platform, &spec.name)?;
        agents.push(Agent {
            spec: spec.clone(),
            client: SystemClient { app: app.clone(), key: sys.api_key },
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_mul(31).wrapping_add(i as u64 + 1)),
            noise_sd: cfg.noise_sd,
        });
    }
    let topic_client = if cfg.topic_recommender {
        let sys = create_system(&platform, "frequent-title-terms")?;
        Some(SystemClient { app: app.clone(), key: sys.api_key })
    } else {
        None
    };

    let mut relevance: HashMap<ArticleId, Vec<f64>> = HashMap::new();
    let mut titles: BTreeMap<ArticleId, String> = BTreeMap::new();
    let mut saved_titles: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut events = EventTotals::default();
    let mut next_article = 1;

    for d in 0..cfg.n_days {
        let date = cfg.start_date + Duration::days(d as i64);

        clock.set(at(date, 0, 0));
        let records =
            generate_articles(&vocab, date - Duration::days(1), next_article, cfg.articles_per_day, &mut world_rng);
        next_article += records.len();
        let lines: String = records.iter().map(|r| r.to_line() + "\n").collect();
        ingest_records(&platform, lines.as_bytes())?;
        for r in records {
            let a = r.into_article(date).map_err(SimError::Api)?;
            relevance.insert(a.article_id.clone(), relevance_row(&models, &article_terms(&a)));
            titles.insert(a.article_id.clone(), a.title);
        }

        clock.set(at(date, 1, 0));
        let world = World { user_index: &user_index, relevance: &relevance };
        for agent in &mut agents {
            agent.submit_day(&world).await?;
        }
        if let Some(client) = &topic_client {
            let profiles: BTreeMap<String, BTreeSet<String>> = platform.store().read(|db| {
                users
                    .iter()
                    .filter_map(|u| {
                        db.user(&u.id)
                            .map(|p| (u.id.to_string(), p.topics.iter().map(|t| t.key().to_owned()).collect()))
                    })
                    .collect()
            });
            submit_topics(client, &saved_titles, &profiles).await?;
        }

        clock.set(at(date, 3, 0));
        run_daily_job(&platform, date)?;
        let now = platform.now();
        platform.store().write(|db| sweep_expired_topics(db, date, now))?;

        clock.set(at(date, 8, 0));
        for (ui, u) in users.iter().enumerate() {
            let auth = format!("Bearer {}", u.token);
            let headers = [("authorization", auth.as_str())];
            let (status, feed) = call(&app, Method::GET, "/user/feed?page=0", &headers, None).await;
            if !status.is_success() {
                return Err(SimError::Api(format!("feed: {status} {feed}")));
            }
            let today = date.to_string();
            for item in feed["items"].as_array().into_iter().flatten().filter(|i| i["date"] == today.as_str()) {
                events.seen_web += 1;
                let article = ArticleId::new(item["article"]["article_id"].as_str().unwrap_or_default());
                let rel = world.relevance(ui, &article);
                let rank = item["rank"].as_u64().unwrap_or(1) as u32;
                let outcome = simulate_slot(&u.model, rel, rank, &mut click_rng);
                let act = |action: &'static str| json!({"impression_id": item["impression_id"], "item_id": article.as_str(), "action": action});
                if outcome.clicked {
                    post_user(&app, &headers, "/user/action", &act("clicked_web")).await?;
                    events.clicked_web += 1;
                }
                if outcome.saved {
                    post_user(&app, &headers, "/user/action", &act("saved")).await?;
                    events.saved += 1;
                    let title = titles.get(&article).cloned().unwrap_or_default();
                    saved_titles.entry(u.id.to_string()).or_default().push(title);
                }
            }
            if topic_client.is_some() {
                for topic in feed["topic_suggestions"]["suggestions"].as_array().into_iter().flatten() {
                    let Some(t) = topic.as_str() else { continue };
                    let accept = u.model.hidden_interest_terms.contains_key(t);
                    let body = json!({"topic": t, "action": if accept { "accept" } else { "reject" }});
                    post_user(&app, &headers, "/user/topics/action", &body).await?;
                    if accept {
                        events.topics_accepted += 1;
                    } else {
                        events.topics_rejected += 1;
                    }
                }
            }
        }
    }

    let end = cfg.start_date + Duration::days(cfg.n_days as i64 - 1);
    let period = Period::new(cfg.start_date, end).expect("start precedes end");
    let board = compute_leaderboard(&platform, period, Some(ItemKind::Article));
    let (names, article_impressions, topic_impressions, reexposures) = platform.store().read(|db| {
        let names: BTreeMap<_, _> = db.systems().map(|s| (s.system_id.clone(), s.name.clone())).collect();
        let mut shown: BTreeMap<&UserId, BTreeSet<&str>> = BTreeMap::new();
        let (mut articles, mut topics, mut again) = (0, 0, 0);
        for imp in db.impressions() {
            if imp.kind == ItemKind::Topic {
                topics += 1;
                continue;
            }
            articles += 1;
            let set = shown.entry(&imp.user_id).or_default();
            again += imp.slots.iter().filter(|s| !set.insert(s.item_id.as_str())).count();
        }
        (names, articles, topics, again)
    });
    let quality: BTreeMap<&str, Quality> = cfg.systems.iter().map(|s| (s.name.as_str(), s.quality)).collect();
    let leaderboard = board
        .into_iter()
        .filter_map(|card| {
            let name = names.get(&card.system_id)?.clone();
            Some(SystemResult {
                quality: *quality.get(name.as_str())?,
                name,
                impressions: card.impressions,
                mean_normalized_reward: card.mean_normalized_reward,
            })
        })
        .collect();
    Ok(ExperimentResult {
        seed: cfg.rng_seed,
        leaderboard,
        article_impressions,
        topic_impressions,
        events,
        reexposures,
    })
}

async fn post_user(app: &Router, headers: &[(&str, &str)], path: &str, body: &Value) -> Result<(), SimError> {
    let (status, resp) = call(app, Method::POST, path, headers, Some(body)).await;
    if status.is_success() {
        Ok(())
    } else {
        Err(SimError::Api(format!("{path}: {status} {resp}")))
    }
}

/// For each ordered pair of systems, the number of runs where the first
/// scored strictly higher.
pub fn win_counts(results: &[ExperimentResult]) -> BTreeMap<(String, String), usize> {
    let mut wins = BTreeMap::new();
    for r in results {
        for a in &r.leaderboard {
            for b in &r.leaderboard {
                if a.name != b.name {
                    let e = wins.entry((a.name.clone(), b.name.clone())).or_insert(0);
                    *e += usize::from(a.mean_normalized_reward > b.mean_normalized_reward);
                }
            }
        }
    }
    wins
}
