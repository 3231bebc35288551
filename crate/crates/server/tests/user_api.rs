mod common;

use axum::http::Method;
use common::{at, day, fixture, Fixture};
use litlab_core::model::{InteractionType, UserId};
use litlab_core::multileave::run_daily_job;
use serde_json::{json, Value};

async fn register_and_login(f: &Fixture, email: &str, topics: &[&str]) -> (String, String) {
    let (status, body) = f
        .call(
            Method::POST,
            "/user/register",
            &[],
            Some(json!({
                "email": email, "name": "Ada", "topics": topics,
                "digest_frequency": "daily", "password": "correct horse",
            })),
        )
        .await;
    assert_eq!(status, 201, "{body}");
    let user = body["user_id"].as_str().unwrap().to_owned();
    let (status, body) =
        f.call(Method::POST, "/user/login", &[], Some(json!({"email": email, "password": "correct horse"}))).await;
    assert_eq!(status, 200);
    (user, body["token"].as_str().unwrap().to_owned())
}

fn bearer(token: &str) -> String {
    format!("Bearer {token}")
}

/// One user with a 3-slot article impression on the 5th.
async fn served(f: &Fixture) -> (String, String, String) {
    let key = f.system("alpha");
    let (user, token) = register_and_login(f, "ada@example.org", &["ir"]).await;
    for i in 0..3 {
        f.article(&format!("a{i}"), "Paper", day(4));
    }
    let items: Vec<Value> =
        (0..3).map(|i| json!({"article_id": format!("a{i}"), "score": 3 - i, "explanation": "about **IR**"})).collect();
    f.post("/recommendations/articles", &key, json!({"recommendations": {&user: items}})).await;
    f.clock.set(at(5, 3, 0));
    run_daily_job(&f.platform, day(5)).unwrap();
    let imp = f.platform.store().read(|db| db.impressions_of(&UserId::new(user.clone()))[0].impression_id.to_string());
    (user, token, imp)
}

#[tokio::test]
async fn registration_validates_and_rejects_duplicates() {
    let f = fixture(at(5, 1, 0));
    register_and_login(&f, "ada@example.org", &["IR", " ir "]).await;
    let (status, _) = f
        .call(Method::POST, "/user/register", &[], Some(json!({"email": "ada@example.org", "name": "B", "digest_frequency": "daily", "password": "long enough"})))
        .await;
    assert_eq!(status, 409);
    let (status, body) = f
        .call(
            Method::POST,
            "/user/register",
            &[],
            Some(
                json!({"email": "b@example.org", "name": "B", "digest_frequency": "weekly", "password": "long enough"}),
            ),
        )
        .await;
    assert_eq!(status, 400);
    assert!(body["details"].as_array().is_some_and(|d| !d.is_empty()));
    let (status, _) = f
        .call(Method::POST, "/user/login", &[], Some(json!({"email": "ada@example.org", "password": "wrong password"})))
        .await;
    assert_eq!(status, 401);

    let stored = f.platform.store().read(|db| db.user_by_email("ada@example.org").unwrap().clone());
    assert_eq!(stored.profile.topics.len(), 1);
    let hash = stored.password_hash.unwrap();
    assert!(hash.starts_with("$argon2id$") && !hash.contains("correct horse"));
}

#[tokio::test]
async fn state_changing_routes_require_a_session() {
    let f = fixture(at(5, 1, 0));
    for (m, uri) in [
        (Method::GET, "/user/feed"),
        (Method::POST, "/user/action"),
        (Method::POST, "/user/feedback"),
        (Method::POST, "/user/topics/action"),
        (Method::GET, "/user/export"),
        (Method::DELETE, "/user/account"),
        (Method::PUT, "/user/profile"),
    ] {
        let (status, _) = f.call(m.clone(), uri, &[("authorization", "Bearer nope")], Some(json!({}))).await;
        assert_eq!(status, 401, "{m} {uri}");
    }
}

#[tokio::test]
async fn sessions_expire() {
    let f = fixture(at(5, 1, 0));
    let (_, token) = register_and_login(&f, "ada@example.org", &["ir"]).await;
    let auth = bearer(&token);
    assert_eq!(f.call(Method::GET, "/user/feed", &[("authorization", &auth)], None).await.0, 200);
    f.clock.advance(chrono::Duration::hours(721));
    assert_eq!(f.call(Method::GET, "/user/feed", &[("authorization", &auth)], None).await.0, 401);
}

#[tokio::test]
async fn feed_logs_seen_once_per_session() {
    let f = fixture(at(5, 1, 0));
    let (user, token, imp) = served(&f).await;
    let auth = bearer(&token);

    let (status, page) = f.call(Method::GET, "/user/feed?page=0", &[("authorization", &auth)], None).await;
    assert_eq!(status, 200);
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    let ranks: Vec<u64> = items.iter().map(|i| i["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, [1, 2, 3]);
    assert_eq!(items[0]["explanation"], "about **IR**");
    assert_eq!(items[0]["saved"], false);
    assert_eq!(items[0]["impression_id"], imp.as_str());

    f.call(Method::GET, "/user/feed", &[("authorization", &auth)], None).await;
    let cookie = format!("session={token}");
    f.call(Method::GET, "/user/feed", &[("cookie", &cookie)], None).await;
    let seen = f.platform.store().read(|db| {
        db.all_events().filter(|e| e.event_type == InteractionType::SeenWeb && e.user_id.as_str() == user).count()
    });
    assert_eq!(seen, 3);

    let (_, empty) = f.call(Method::GET, "/user/feed?page=1", &[("authorization", &auth)], None).await;
    assert_eq!(empty["items"], json!([]));
    assert_eq!(f.call(Method::GET, "/user/feed?page=-1", &[("authorization", &auth)], None).await.0, 400);
}

#[tokio::test]
async fn save_unsave_keeps_the_reward_event() {
    let f = fixture(at(5, 1, 0));
    let (_, token, imp) = served(&f).await;
    let auth = bearer(&token);
    let act = |item: &str, action: &str| json!({"impression_id": imp, "item_id": item, "action": action});

    let (status, body) =
        f.call(Method::POST, "/user/action", &[("authorization", &auth)], Some(act("a1", "saved"))).await;
    assert_eq!((status.as_u16(), body["outcome"].as_str()), (200, Some("recorded")));
    let (_, body) = f.call(Method::POST, "/user/action", &[("authorization", &auth)], Some(act("a1", "saved"))).await;
    assert_eq!(body["outcome"], "duplicate");
    let (_, page) = f.call(Method::GET, "/user/feed", &[("authorization", &auth)], None).await;
    assert_eq!(page["items"][1]["saved"], true);

    f.call(Method::POST, "/user/action", &[("authorization", &auth)], Some(act("a1", "unsave"))).await;
    let (_, page) = f.call(Method::GET, "/user/feed", &[("authorization", &auth)], None).await;
    assert_eq!(page["items"][1]["saved"], false);
    let saves =
        f.platform.store().read(|db| db.all_events().filter(|e| e.event_type == InteractionType::Saved).count());
    assert_eq!(saves, 1);

    f.call(Method::POST, "/user/action", &[("authorization", &auth)], Some(act("a2", "clicked_web"))).await;
    let (status, _) =
        f.call(Method::POST, "/user/action", &[("authorization", &auth)], Some(act("zzz", "saved"))).await;
    assert_eq!(status, 400);
    let (status, _) = f.call(Method::POST, "/user/action", &[("authorization", &auth)], Some(act("a1", "liked"))).await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn feedback_ratings_are_validated() {
    let f = fixture(at(5, 1, 0));
    let (_, token, _) = served(&f).await;
    let auth = bearer(&token);
    let full = json!({
        "article_id": "a0", "relevance": 5, "explanation_satisfaction": 5,
        "explanation_persuasiveness": 5, "explanation_transparency": 5,
        "explanation_scrutability": 5, "free_text": "great", "kind": "recommendation_feedback",
    });
    assert_eq!(f.call(Method::POST, "/user/feedback", &[("authorization", &auth)], Some(full)).await.0, 201);
    let bad = json!({"article_id": "a0", "relevance": 6, "kind": "recommendation_feedback"});
    assert_eq!(f.call(Method::POST, "/user/feedback", &[("authorization", &auth)], Some(bad)).await.0, 400);
    let missing = json!({"relevance": 3, "kind": "recommendation_feedback"});
    assert_eq!(f.call(Method::POST, "/user/feedback", &[("authorization", &auth)], Some(missing)).await.0, 400);
    let bug = json!({"free_text": "button broken", "kind": "bug_report"});
    assert_eq!(f.call(Method::POST, "/user/feedback", &[("authorization", &auth)], Some(bug)).await.0, 201);

    let stored = f.platform.store().read(|db| db.feedback().to_vec());
    assert_eq!(stored.len(), 2);
    assert_eq!(stored[0].explanation_scrutability, Some(5));
}

#[tokio::test]
async fn topic_accept_reject_and_refresh() {
    let f = fixture(at(5, 1, 0));
    let key = f.system("alpha");
    let (user, token) = register_and_login(&f, "ada@example.org", &["ir"]).await;
    let auth = bearer(&token);
    let topics: Vec<Value> = ["learning to rank", "nlp", "graphs", "bandits"]
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"topic": t, "score": 10 - i}))
        .collect();
    f.post("/recommendations/topics", &key, json!({"recommendations": {&user: topics}})).await;
    f.clock.set(at(5, 3, 0));
    run_daily_job(&f.platform, day(5)).unwrap();

    let (_, state) = f.call(Method::GET, "/user/topics", &[("authorization", &auth)], None).await;
    assert_eq!(state["suggestions"], json!(["learning to rank", "nlp", "graphs", "bandits"]));

    let act = |topic: &str, action: &str| json!({"topic": topic, "action": action});
    let (status, state) = f
        .call(Method::POST, "/user/topics/action", &[("authorization", &auth)], Some(act("Learning to Rank", "accept")))
        .await;
    assert_eq!(status, 200);
    assert_eq!(state["topics"], json!(["ir", "Learning to Rank"]));
    let (_, state) =
        f.call(Method::POST, "/user/topics/action", &[("authorization", &auth)], Some(act("nlp", "reject"))).await;
    assert_eq!(state["suggestions"], json!(["graphs", "bandits"]));
    let (status, _) =
        f.call(Method::POST, "/user/topics/action", &[("authorization", &auth)], Some(act("quantum", "accept"))).await;
    assert_eq!(status, 404);

    // A rejected topic is never shown again.
    f.clock.set(at(6, 1, 0));
    let (_, report) = f
        .post(
            "/recommendations/topics",
            &key,
            json!({"recommendations": {&user: [{"topic": "NLP", "score": 1}, {"topic": "retrieval", "score": 2}]}}),
        )
        .await;
    assert_eq!((report["accepted"].as_u64(), report["ignored"].as_u64()), (Some(1), Some(1)));

    let (_, state) =
        f.call(Method::POST, "/user/topics/action", &[("authorization", &auth)], Some(act("", "refresh_batch"))).await;
    assert_eq!(state["suggestions"], json!(["retrieval"]));
    let refreshed = f
        .platform
        .store()
        .read(|db| db.all_events().filter(|e| e.event_type == InteractionType::TopicRefreshed).count());
    assert_eq!(refreshed, 2);
}

#[tokio::test]
async fn export_then_delete_invalidates_the_account() {
    let f = fixture(at(5, 1, 0));
    let (user, token, _) = served(&f).await;
    let auth = bearer(&token);
    let (status, export) = f.call(Method::GET, "/user/export", &[("authorization", &auth)], None).await;
    assert_eq!(status, 200);
    let direct = f.platform.store().read(|db| db.export_user_data(&UserId::new(user.clone())).unwrap());
    assert_eq!(export, serde_json::to_value(&direct).unwrap());
    assert_eq!(export["profile"]["email"], "ada@example.org");

    let (_, second) = f
        .call(Method::POST, "/user/login", &[], Some(json!({"email": "ada@example.org", "password": "correct horse"})))
        .await;
    let other = bearer(second["token"].as_str().unwrap());

    assert_eq!(f.call(Method::DELETE, "/user/account", &[("authorization", &auth)], None).await.0, 204);
    assert_eq!(f.call(Method::GET, "/user/export", &[("authorization", &auth)], None).await.0, 401);
    assert_eq!(f.call(Method::GET, "/user/feed", &[("authorization", &other)], None).await.0, 401);
    let (status, _) = f
        .call(Method::POST, "/user/login", &[], Some(json!({"email": "ada@example.org", "password": "correct horse"})))
        .await;
    assert_eq!(status, 401);
}

#[tokio::test]
async fn profile_can_be_read_and_edited() {
    let f = fixture(at(5, 1, 0));
    let (_, token) = register_and_login(&f, "ada@example.org", &["ir"]).await;
    let auth = bearer(&token);
    let (_, p) = f.call(Method::GET, "/user/profile", &[("authorization", &auth)], None).await;
    assert_eq!(p["topics"], json!(["ir"]));
    let (status, p) = f
        .call(
            Method::PUT,
            "/user/profile",
            &[("authorization", &auth)],
            Some(json!({
                "email": "ada@example.org", "name": "Ada L.", "topics": ["ir", "bandits"],
                "digest_frequency": "weekly", "weekly_digest_day": "monday",
            })),
        )
        .await;
    assert_eq!(status, 200, "{p}");
    assert_eq!(p["digest_frequency"], "weekly");
    assert_eq!(p["topics"], json!(["ir", "bandits"]));
}
