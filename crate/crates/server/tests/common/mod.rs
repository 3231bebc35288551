#![allow(dead_code)]

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use litlab_core::accounts::create_user;
use litlab_core::model::{Article, ArticleId, RawProfile, UserId};
use litlab_core::{Config, ManualClock, Platform, Store};
use serde_json::Value;
use tower::ServiceExt;

pub fn day(d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, d).unwrap()
}

pub fn at(d: u32, h: u32, m: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, d, h, m, 0).unwrap()
}

pub struct Fixture {
    pub platform: Platform,
    pub clock: ManualClock,
    pub app: Router,
}

/// Cheap password hashing keeps the tests fast.
pub fn fixture(now: DateTime<Utc>) -> Fixture {
    let mut config = Config::default();
    config.auth.hash_memory_kib = 64;
    config.auth.hash_iterations = 1;
    fixture_with(now, config)
}

pub fn fixture_with(now: DateTime<Utc>, config: Config) -> Fixture {
    let clock = ManualClock::new(now);
    let platform = Platform::new(Store::in_memory(), config, Arc::new(clock.clone())).unwrap();
    let app = litlab_server::router(platform.clone());
    Fixture { platform, clock, app }
}

impl Fixture {
    pub async fn call(
        &self,
        method: Method,
        uri: &str,
        headers: &[(&str, &str)],
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let (status, bytes, _) = self.raw(method, uri, headers, body).await;
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, v)
    }

    pub async fn raw(
        &self,
        method: Method,
        uri: &str,
        headers: &[(&str, &str)],
        body: Option<Value>,
    ) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
        let mut req = Request::builder().method(method).uri(uri);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
        (status, bytes, headers)
    }

    pub async fn get(&self, uri: &str, key: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, &[("api-key", key)], None).await
    }

    pub async fn post(&self, uri: &str, key: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, &[("api-key", key)], Some(body)).await
    }

    pub fn system(&self, name: &str) -> String {
        litlab_core::admin::create_system(&self.platform, name).unwrap().api_key
    }

    pub fn user(&self, email: &str, topics: &[&str]) -> UserId {
        let raw = RawProfile {
            email: email.into(),
            name: "Test User".into(),
            topics: topics.iter().map(|t| t.to_string()).collect(),
            digest_frequency: "daily".into(),
            ..Default::default()
        };
        let now = self.platform.now();
        self.platform.store().write(|db| create_user(db, &raw, None, now)).unwrap()
    }

    pub fn article(&self, id: &str, title: &str, published: NaiveDate) {
        self.platform
            .store()
            .write(|db| {
                db.upsert_article(Article {
                    article_id: ArticleId::new(id),
                    title: title.into(),
                    abstract_text: format!("An abstract about {title}."),
                    authors: vec!["A. Author".into()],
                    categories: vec!["cs.IR".into()],
                    published_date: published,
                });
                Ok(())
            })
            .unwrap();
    }
}
