//! The `litlab` operator command line.

use std::collections::BTreeMap;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use chrono::{NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use litlab_baseline::{run_client_cycle, HttpTransport};
use litlab_core::admin;
use litlab_core::digest::{run_digest_job, OutboxSink};
use litlab_core::ingestion::{parse_arxiv_atom, run_ingest_job, run_ingest_job_with, ArticleRecord};
use litlab_core::model::{Article, ItemKind};
use litlab_core::multileave::run_daily_job;
use litlab_core::{Config, Period, Platform, Store, SystemClock};
use litlab_sim::SimConfig;

/// arXiv listing of the newest Information Retrieval submissions.
pub const DEFAULT_REMOTE_FEED: &str =
    "http://export.arxiv.org/api/query?search_query=cat:cs.IR&sortBy=submittedDate&sortOrder=descending&max_results=200";

#[derive(Debug, Parser)]
#[command(name = "litlab", version, about = "Living lab for literature recommendation")]
pub struct Cli {
    /// Platform configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// State file of the platform.
    #[arg(long, global = true, default_value = "litlab.json")]
    pub db: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the system API, the user API and the tracking routes.
    Serve {
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
        /// Also run the daily jobs once each day's submission window closes.
        #[arg(long)]
        daily_jobs: bool,
    },
    /// Daily jobs and the job ledger.
    #[command(subcommand)]
    Jobs(JobsCommand),
    /// Systems and accounts.
    #[command(subcommand)]
    Admin(AdminCommand),
    /// Offline evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// The BM25 reference system.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Simulated experiments.
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Debug, Args)]
pub struct DateArg {
    /// Day to run for (UTC); today when omitted.
    #[arg(long)]
    pub date: Option<NaiveDate>,
}

impl DateArg {
    fn get(&self) -> NaiveDate {
        self.date.unwrap_or_else(|| Utc::now().date_naive())
    }
}

#[derive(Debug, Subcommand)]
pub enum JobsCommand {
    /// Ingest a feed file (one JSON record per line) or the remote arXiv feed.
    Ingest {
        #[command(flatten)]
        date: DateArg,
        #[arg(long, conflicts_with = "remote", required_unless_present = "remote")]
        file: Option<PathBuf>,
        /// Fetch an Atom feed; the default URL lists recent cs.IR papers.
        #[arg(long, num_args = 0..=1, default_missing_value = DEFAULT_REMOTE_FEED)]
        remote: Option<String>,
    },
    /// Build the day's interleaved impressions.
    Interleave {
        #[command(flatten)]
        date: DateArg,
        /// Overrides `interleave.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the day's digests to the outbox.
    Digest {
        #[command(flatten)]
        date: DateArg,
        /// Overrides `jobs.outbox_dir`.
        #[arg(long)]
        outbox: Option<PathBuf>,
    },
    /// Expire topic suggestions left unanswered for a week.
    ExpireSweep {
        #[command(flatten)]
        date: DateArg,
    },
    /// Ingest, interleave, digest and sweep, skipping what already ran.
    RunAll {
        #[command(flatten)]
        date: DateArg,
        #[arg(long)]
        outbox: Option<PathBuf>,
    },
    /// Print the job ledger.
    Ledger,
}

#[derive(Debug, Subcommand)]
pub enum AdminCommand {
    /// Register an experimental system and print its API key.
    CreateSystem {
        #[arg(long)]
        name: String,
    },
    /// Revoke a system's API access (by id or name).
    Deactivate {
        #[arg(long)]
        system: String,
    },
    /// Restore a system's API access (by id or name).
    Activate {
        #[arg(long)]
        system: String,
    },
    /// List registered systems.
    Systems,
    /// Set a user's password.
    ResetPassword {
        #[arg(long)]
        email: String,
        #[arg(long)]
        password: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    #[value(alias = "article")]
    Articles,
    #[value(alias = "topic")]
    Topics,
}

impl From<KindArg> for ItemKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Articles => ItemKind::Article,
            KindArg::Topics => ItemKind::Topic,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Systems ranked by mean normalized reward over `[from, to]`.
    Leaderboard {
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// One BM25 client cycle against a running broker.
    Run {
        #[arg(long)]
        api: String,
        #[arg(long)]
        key: String,
    },
    /// Score a local corpus for users given as `{"user": ["topic", ...]}`.
    Score {
        #[arg(long)]
        user_topics: PathBuf,
        /// Feed file in the ingest format.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Run a simulated experiment and print the leaderboard.
    Run {
        /// TOML, or JSON when the name ends in `.json`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

impl Cli {
    fn load_config(&self) -> anyhow::Result<Config> {
        match &self.config {
            Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display())),
            None => Ok(Config::default()),
        }
    }

    fn platform(&self, config: Config) -> anyhow::Result<Platform> {
        let store = Store::open(&self.db).with_context(|| format!("opening {}", self.db.display()))?;
        Ok(Platform::new(store, config, Arc::new(SystemClock))?)
    }
}

fn json_line(out: &mut dyn Write, value: &impl serde::Serialize) -> anyhow::Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn outbox(config: &Config, flag: Option<PathBuf>) -> OutboxSink {
    OutboxSink::new(flag.or_else(|| config.jobs.outbox_dir.clone()).unwrap_or_else(|| PathBuf::from("outbox")))
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Runs one parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match &cli.command {
        Command::Serve { bind, daily_jobs } => {
            let config = cli.load_config()?;
            let bind = bind.clone().unwrap_or_else(|| config.server.bind.clone());
            let sink = Arc::new(outbox(&config, None));
            let platform = cli.platform(config)?;
            runtime()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
                writeln!(out, "listening on http://{}", listener.local_addr()?)?;
                out.flush()?;
                if *daily_jobs {
                    tokio::spawn(litlab_server::daily_scheduler(platform.clone(), sink));
                }
                litlab_server::serve(platform, listener).await?;
                Ok(())
            })
        }
        Command::Jobs(cmd) => jobs(&cli, cmd, out),
        Command::Admin(cmd) => admin_cmd(&cli, cmd, out),
        Command::Eval(EvalCommand::Leaderboard { from, to, kind, format }) => {
            let platform = cli.platform(cli.load_config()?)?;
            let period = Period::new(*from, *to).context("--from is after --to")?;
            let board = admin::compute_leaderboard(&platform, period, kind.map(ItemKind::from));
            let rows = admin::pseudonymized(&platform, &board, None);
            match format {
                Format::Json => json_line(out, &rows)?,
                Format::Table => {
                    writeln!(out, "{:<4} {:<24} {:>11} {:>8}", "rank", "system", "impressions", "MNR")?;
                    for r in &rows {
                        writeln!(
                            out,
                            "{:<4} {:<24} {:>11} {:>8.4}",
                            r.rank, r.system, r.impressions, r.mean_normalized_reward
                        )?;
                    }
                }
            }
            Ok(())
        }
        Command::Baseline(BaselineCommand::Run { api, key }) => {
            let transport = HttpTransport::new(api.as_str(), key.as_str());
            let report = runtime()?.block_on(run_client_cycle(&transport))?;
            json_line(out, &report)
        }
        Command::Baseline(BaselineCommand::Score { user_topics, corpus, k }) => {
            let users: BTreeMap<String, Vec<String>> = serde_json::from_str(&std::fs::read_to_string(user_topics)?)
                .with_context(|| format!("parsing {}", user_topics.display()))?;
            let articles = read_corpus(corpus)?;
            json_line(out, &litlab_baseline::offline::score_corpus(&articles, &users, *k))
        }
        Command::Sim(SimCommand::Run { config, format }) => {
            let cfg = match config {
                Some(path) => SimConfig::load(path)?,
                None => SimConfig::default(),
            };
            let result = litlab_sim::run_experiment(&cfg)?;
            match format {
                Format::Json => json_line(out, &result),
                Format::Table => Ok(write!(out, "{}", litlab_sim::report::table(&result))?),
            }
        }
    }
}

/// Reads a feed file; every line must be a valid record.
fn read_corpus(path: &Path) -> anyhow::Result<Vec<Article>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let today = Utc::now().date_naive();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let record: ArticleRecord = serde_json::from_str(l).with_context(|| format!("line {}", i + 1))?;
            record.into_article(today).map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1))
        })
        .collect()
}

fn fetch_remote(url: &str) -> litlab_core::Result<Cursor<Vec<u8>>> {
    let fetch = async {
        let resp = reqwest::get(url).await?.error_for_status()?;
        resp.text().await
    };
    let xml = runtime()
        .map_err(|e| litlab_core::Error::Invalid(e.to_string()))?
        .block_on(fetch)
        .map_err(|e| litlab_core::Error::Invalid(format!("fetching {url}: {e}")))?;
    let lines: String = parse_arxiv_atom(&xml)?.iter().map(|r| r.to_line() + "\n").collect();
    Ok(Cursor::new(lines.into_bytes()))
}

fn jobs(cli: &Cli, cmd: &JobsCommand, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut config = cli.load_config()?;
    match cmd {
        JobsCommand::Ingest { date, file, remote } => {
            let platform = cli.platform(config)?;
            let report = match (file, remote) {
                (Some(path), _) => run_ingest_job(&platform, date.get(), path)?,
                (None, Some(url)) => run_ingest_job_with(&platform, date.get(), || fetch_remote(url))?,
                (None, None) => bail!("either --file or --remote is required"),
            };
            writeln!(
                out,
                "ingested {} records: {} new, {} updated, {} unchanged, {} rejected",
                report.accepted,
                report.inserted,
                report.updated,
                report.unchanged,
                report.rejected.len()
            )?;
            for r in &report.rejected {
                writeln!(out, "  line {}: {}", r.line, r.reason)?;
            }
        }
        JobsCommand::Interleave { date, seed } => {
            if let Some(seed) = seed {
                config.interleave.seed = *seed;
            }
            let platform = cli.platform(config)?;
            let r = run_daily_job(&platform, date.get())?;
            writeln!(
                out,
                "{} article impressions, {} topic impressions, {} users without recommendations, {} stale entries purged",
                r.impressions_created, r.topic_impressions_created, r.users_skipped, r.stack_entries_purged
            )?;
        }
        JobsCommand::Digest { date, outbox: dir } => {
            let sink = outbox(&config, dir.clone());
            let platform = cli.platform(config)?;
            let r = run_digest_job(&platform, date.get(), &sink)?;
            writeln!(
                out,
                "{} digests written to {}, {} already sent, {} with nothing to send",
                r.sent,
                sink.dir.display(),
                r.already_sent,
                r.nothing_to_send
            )?;
        }
        JobsCommand::ExpireSweep { date } => {
            let platform = cli.platform(config)?;
            let n = admin::expire_sweep(&platform, date.get())?;
            writeln!(out, "{n} topic suggestions expired")?;
        }
        JobsCommand::RunAll { date, outbox: dir } => {
            let sink = outbox(&config, dir.clone());
            let platform = cli.platform(config)?;
            json_line(out, &admin::run_all(&platform, date.get(), &sink)?)?;
        }
        JobsCommand::Ledger => {
            let platform = cli.platform(config)?;
            platform.store().read(|db| -> anyhow::Result<()> {
                for e in db.job_entries() {
                    let finished = e.finished_at.map_or_else(|| "-".to_owned(), |t| t.to_rfc3339());
                    writeln!(
                        out,
                        "{} {:<12} {:<8} {} {}",
                        e.date,
                        e.job.as_str(),
                        format!("{:?}", e.outcome).to_lowercase(),
                        finished,
                        e.detail.as_deref().unwrap_or("")
                    )?;
                }
                Ok(())
            })?;
        }
    }
    Ok(())
}

fn find_system(platform: &Platform, key: &str) -> anyhow::Result<litlab_core::model::SystemId> {
    platform
        .store()
        .read(|db| db.systems().find(|s| s.system_id.as_str() == key || s.name == key).map(|s| s.system_id.clone()))
        .with_context(|| format!("no system `{key}`"))
}

fn admin_cmd(cli: &Cli, cmd: &AdminCommand, out: &mut dyn Write) -> anyhow::Result<()> {
    let platform = cli.platform(cli.load_config()?)?;
    match cmd {
        AdminCommand::CreateSystem { name } => {
            let s = admin::create_system(&platform, name)?;
            writeln!(out, "system_id: {}\napi_key: {}", s.system_id, s.api_key)?;
            writeln!(out, "The key is shown only once.")?;
        }
        AdminCommand::Deactivate { system } | AdminCommand::Activate { system } => {
            let id = find_system(&platform, system)?;
            let active = matches!(cmd, AdminCommand::Activate { .. });
            admin::set_system_active(&platform, &id, active)?;
            writeln!(out, "{id} {}", if active { "activated" } else { "deactivated" })?;
        }
        AdminCommand::Systems => {
            platform.store().read(|db| -> anyhow::Result<()> {
                for s in db.systems() {
                    let state = if s.active { "active" } else { "inactive" };
                    writeln!(out, "{} {:<24} {:<8} {} impressions", s.system_id, s.name, state, s.impression_count)?;
                }
                Ok(())
            })?;
        }
        AdminCommand::ResetPassword { email, password } => {
            litlab_core::accounts::reset_password(&platform, email, password)?;
            writeln!(out, "password updated for {email}")?;
        }
    }
    Ok(())
}
