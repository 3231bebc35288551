use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::Arc;

use chrono::{NaiveDate, Utc};
use clap::Parser;
use litlab_cli::{Cli, Command as Cmd, JobsCommand};
use litlab_core::accounts::{create_user, login};
use litlab_core::ingestion::{ArticleRecord, RecordSource};
use litlab_core::model::RawProfile;
use litlab_core::{Config, Platform, Store, SystemClock};

const BIN: &str = env!("CARGO_BIN_EXE_litlab");

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Env { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn db(&self) -> PathBuf {
        self.path("state.json")
    }

    fn litlab(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(BIN);
        cmd.arg("--db").arg(self.db()).args(args).env("RUST_LOG", "warn");
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.litlab(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn platform(&self) -> Platform {
        Platform::new(Store::open(&self.db()).unwrap(), Config::default(), Arc::new(SystemClock)).unwrap()
    }

    fn add_user(&self, email: &str, topics: &[&str]) {
        let platform = self.platform();
        let now = platform.now();
        let raw = RawProfile {
            email: email.into(),
            name: "Reader".into(),
            topics: topics.iter().map(|t| t.to_string()).collect(),
            digest_frequency: "daily".into(),
            ..Default::default()
        };
        platform.store().write(|db| create_user(db, &raw, None, now)).unwrap();
    }
}

fn record(id: &str, title: &str, published: NaiveDate) -> ArticleRecord {
    ArticleRecord {
        article_id: id.into(),
        title: title.into(),
        abstract_text: format!("{title}. An abstract about {title}."),
        authors: vec!["A. Author".into()],
        categories: vec!["cs.IR".into()],
        published,
        source: RecordSource::File,
    }
}

fn write_feed(path: &Path, records: &[ArticleRecord]) {
    let text: String = records.iter().map(|r| r.to_line() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

fn today() -> NaiveDate {
    Utc::now().date_naive()
}

#[test]
fn parses_the_command_tree() {
    let cli =
        Cli::try_parse_from(["litlab", "jobs", "ingest", "--file", "feed.jsonl", "--date", "2024-03-05"]).unwrap();
    assert_eq!(cli.db, PathBuf::from("litlab.json"));
    match cli.command {
        Cmd::Jobs(JobsCommand::Ingest { date, file, remote }) => {
            assert_eq!(date.date, NaiveDate::from_ymd_opt(2024, 3, 5));
            assert_eq!(file, Some(PathBuf::from("feed.jsonl")));
            assert_eq!(remote, None);
        }
        other => panic!("{other:?}"),
    }
    let cli = Cli::try_parse_from(["litlab", "jobs", "ingest", "--remote"]).unwrap();
    assert!(
        matches!(cli.command, Cmd::Jobs(JobsCommand::Ingest { remote: Some(u), .. }) if u == litlab_cli::DEFAULT_REMOTE_FEED)
    );

    assert!(Cli::try_parse_from(["litlab", "jobs", "ingest"]).is_err());
    assert!(Cli::try_parse_from(["litlab", "jobs", "ingest", "--file", "a", "--remote", "b"]).is_err());
    assert!(Cli::try_parse_from(["litlab", "jobs", "interleave", "--date", "05/03/2024"]).is_err());
    assert!(Cli::try_parse_from(["litlab", "eval", "leaderboard", "--from", "2024-01-01"]).is_err());
    assert!(Cli::try_parse_from([
        "litlab",
        "eval",
        "leaderboard",
        "--from",
        "2024-01-01",
        "--to",
        "2024-01-02",
        "--kind",
        "topic"
    ])
    .is_ok());
    assert!(Cli::try_parse_from(["litlab", "sim", "run", "--format", "xml"]).is_err());
}

#[test]
fn systems_can_be_created_toggled_and_listed() {
    let env = Env::new();
    let out = env.ok(&["admin", "create-system", "--name", "alpha"]);
    let key = out.lines().find_map(|l| l.strip_prefix("api_key: ")).unwrap();
    assert_eq!(key.len(), 32);
    env.ok(&["admin", "create-system", "--name", "beta"]);
    assert!(!env.litlab(&["admin", "create-system", "--name", "alpha"]).status.success());

    assert_eq!(env.ok(&["admin", "deactivate", "--system", "alpha"]).trim(), "s0001 deactivated");
    let listing = env.ok(&["admin", "systems"]);
    assert!(listing.lines().any(|l| l.contains("alpha") && l.contains("inactive")));
    assert!(listing.lines().any(|l| l.contains("beta") && l.contains(" active")));
    env.ok(&["admin", "activate", "--system", "s0001"]);
    assert!(!env.ok(&["admin", "systems"]).contains("inactive"));

    let missing = env.litlab(&["admin", "deactivate", "--system", "gamma"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("no system `gamma`"));
}

#[test]
fn reset_password_allows_login() {
    let env = Env::new();
    env.add_user("reader@example.org", &["ranking"]);
    env.ok(&["admin", "reset-password", "--email", "reader@example.org", "--password", "correct horse battery"]);
    let platform = env.platform();
    assert!(login(&platform, "reader@example.org", "correct horse battery").is_ok());
    assert!(login(&platform, "reader@example.org", "wrong").is_err());
    drop(platform);
    assert!(!env
        .litlab(&["admin", "reset-password", "--email", "nobody@example.org", "--password", "x"])
        .status
        .success());
}

#[test]
fn daily_jobs_run_from_the_command_line() {
    let env = Env::new();
    let date = "2024-03-05";
    let published = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
    let feed = env.path("feed.jsonl");
    let mut records: Vec<_> = (0..4).map(|i| record(&format!("2403.0000{i}"), "Ranking", published)).collect();
    write_feed(&feed, &records);
    let mut text = std::fs::read_to_string(&feed).unwrap();
    text.push_str("{\"not\": \"a record\"}\n");
    std::fs::write(&feed, text).unwrap();

    let out = env.ok(&["jobs", "ingest", "--date", date, "--file", feed.to_str().unwrap()]);
    assert!(out.starts_with("ingested 4 records: 4 new, 0 updated, 0 unchanged, 1 rejected"), "{out}");
    assert!(out.contains("line 5:"));
    records[0].title = "Ranking revisited".into();
    write_feed(&feed, &records);
    assert!(!env.litlab(&["jobs", "ingest", "--date", date, "--file", feed.to_str().unwrap()]).status.success());

    env.ok(&["admin", "create-system", "--name", "alpha"]);
    // The window for 2024-03-05 closed long ago.
    let out = env.ok(&["jobs", "interleave", "--date", date, "--seed", "7"]);
    assert!(out.starts_with("0 article impressions"), "{out}");
    let outbox = env.path("outbox");
    let out = env.ok(&["jobs", "digest", "--date", date, "--outbox", outbox.to_str().unwrap()]);
    assert!(out.starts_with("0 digests written"), "{out}");
    assert_eq!(env.ok(&["jobs", "expire-sweep", "--date", date]).trim(), "0 topic suggestions expired");

    let report: serde_json::Value =
        serde_json::from_str(&env.ok(&["jobs", "run-all", "--date", date, "--outbox", outbox.to_str().unwrap()]))
            .unwrap();
    assert_eq!(report["skipped"], serde_json::json!(["ingest", "interleave", "digest", "expire_sweep"]));

    let ledger = env.ok(&["jobs", "ledger"]);
    assert!(ledger.lines().any(|l| l.starts_with("2024-03-05 ingest") && l.contains("success")));
    assert_eq!(ledger.lines().filter(|l| l.contains("interleave")).count(), 1);
}

#[test]
fn leaderboard_prints_table_and_json() {
    let env = Env::new();
    env.ok(&["admin", "create-system", "--name", "alpha"]);
    let args = ["eval", "leaderboard", "--from", "2024-03-01", "--to", "2024-03-31"];
    let table = env.ok(&args);
    assert_eq!(table.lines().count(), 1);
    assert!(table.starts_with("rank"));
    let json = env.ok(&[&args[..], &["--format", "json", "--kind", "articles"]].concat());
    assert_eq!(serde_json::from_str::<serde_json::Value>(&json).unwrap(), serde_json::json!([]));
    let bad = env.litlab(&["eval", "leaderboard", "--from", "2024-03-31", "--to", "2024-03-01"]);
    assert!(!bad.status.success());
}

#[test]
fn baseline_scores_a_local_corpus() {
    let env = Env::new();
    let corpus = env.path("corpus.jsonl");
    let d = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
    write_feed(
        &corpus,
        &[record("a1", "Neural ranking", d), record("a2", "Graph databases", d), record("a3", "Query expansion", d)],
    );
    let users = env.path("users.json");
    std::fs::write(&users, r#"{"u1": ["ranking"], "u2": ["graph databases"], "u3": ["astronomy"]}"#).unwrap();
    let out = env.ok(&[
        "baseline",
        "score",
        "--user-topics",
        users.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--k",
        "2",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["u1"][0]["article_id"], "a1");
    assert!(v["u1"][0]["explanation"].as_str().unwrap().contains("**ranking**"));
    assert_eq!(v["u2"][0]["article_id"], "a2");
    assert_eq!(v["u3"], serde_json::json!([]));
}

#[test]
fn sim_run_prints_a_leaderboard() {
    let env = Env::new();
    let cfg = env.path("sim.toml");
    std::fs::write(&cfg, "n_users = 20\nn_days = 3\narticles_per_day = 20\n").unwrap();
    let table = env.ok(&["sim", "run", "--config", cfg.to_str().unwrap()]);
    let lines: Vec<_> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].contains("oracle"));
    assert!(lines[4].ends_with("0 re-exposures"));
    let json: serde_json::Value =
        serde_json::from_str(&env.ok(&["sim", "run", "--config", cfg.to_str().unwrap(), "--format", "json"])).unwrap();
    assert_eq!(json["reexposures"], 0);
    assert_eq!(json["leaderboard"].as_array().unwrap().len(), 3);

    std::fs::write(&cfg, "n_days = 0\n").unwrap();
    assert!(!env.litlab(&["sim", "run", "--config", cfg.to_str().unwrap()]).status.success());
}

#[test]
fn remote_ingest_reads_an_atom_feed() {
    let xml = r#"<?xml version="1.0" encoding="UTF-8"?>
<feed xmlns="http://www.w3.org/2005/Atom">
  <entry>
    <id>http://arxiv.org/abs/2403.01234v1</id>
    <published>2024-03-04T12:00:00Z</published>
    <title>Living labs</title>
    <summary>Online evaluation with real users.</summary>
    <author><name>K. One</name></author>
    <category term="cs.IR"/>
  </entry>
  <entry>
    <id>http://arxiv.org/abs/2403.05678v2</id>
    <published>2024-03-04T13:00:00Z</published>
    <title>Interleaving</title>
    <summary>Comparing rankers.</summary>
    <author><name>O. Two</name></author>
    <category term="cs.IR"/>
  </entry>
</feed>"#;
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let app = axum::Router::new().route("/api/query", axum::routing::get(move || async move { xml }));
    rt.spawn(async move { axum::serve(listener, app).await });

    let env = Env::new();
    let url = format!("http://{addr}/api/query?search_query=cat:cs.IR");
    let out = env.ok(&["jobs", "ingest", "--date", "2024-03-05", "--remote", &url]);
    assert!(out.starts_with("ingested 2 records: 2 new"), "{out}");
    let platform = env.platform();
    let ids: Vec<String> = platform.store().read(|db| db.articles().map(|a| a.article_id.to_string()).collect());
    assert_eq!(ids, ["2403.01234", "2403.05678"]);
    drop(platform);

    let missing =
        env.litlab(&["jobs", "ingest", "--date", "2024-03-06", "--remote", &format!("http://{addr}/nothing")]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("404"));
    assert!(env.ok(&["jobs", "ledger"]).lines().any(|l| l.starts_with("2024-03-06 ingest") && l.contains("failed")));
}

/// Starts `litlab serve` on a free port and returns the child and its base URL.
fn serve(env: &Env, config: &Path) -> (std::process::Child, String) {
    let mut child = Command::new(BIN)
        .arg("--db")
        .arg(env.db())
        .arg("--config")
        .arg(config)
        .args(["serve", "--bind", "127.0.0.1:0"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap().to_owned();
    (child, base)
}

#[test]
fn baseline_runs_against_a_served_platform() {
    let env = Env::new();
    let config = env.path("litlab.toml");
    // A window spanning the whole day so the test does not depend on the clock.
    std::fs::write(&config, "[api]\nwindow_start_utc = \"00:00\"\nwindow_hours = 24\n").unwrap();
    let feed = env.path("feed.jsonl");
    write_feed(&feed, &[record("n1", "Neural ranking", today()), record("n2", "Protein folding", today())]);
    env.ok(&["jobs", "ingest", "--file", feed.to_str().unwrap()]);
    env.add_user("reader@example.org", &["neural ranking"]);
    let out = env.ok(&["admin", "create-system", "--name", "bm25"]);
    let key = out.lines().find_map(|l| l.strip_prefix("api_key: ")).unwrap().to_owned();

    let (mut server, base) = serve(&env, &config);
    let run = env.litlab(&["baseline", "run", "--api", &base, "--key", &key]);
    let denied = env.litlab(&["baseline", "run", "--api", &base, "--key", "not-a-key"]);
    server.kill().unwrap();
    server.wait().unwrap();

    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(report["users_seen"], 1);
    assert_eq!(report["candidates"], 2);
    assert_eq!(report["accepted"], 1);
    assert!(!denied.status.success());
}

#[test]
fn a_held_state_file_is_refused() {
    let env = Env::new();
    let _held = Store::open(&env.db()).unwrap();
    let out = env.litlab(&["admin", "systems"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(&env.db().display().to_string()));
}
