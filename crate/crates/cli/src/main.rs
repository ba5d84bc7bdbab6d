//! `dualtrack`: terminal chat, benchmark runs, episode replay, the data
//! flywheel, dataset export and the HTTP service.
//!
//! Settings resolve as built-in defaults, then the `--config` file (flat
//! `key = value` lines), then `--seed`, `--budget-ms` and `--perception`.
//! Exit status is 0 on success, 1 on failure and 2 on usage errors.

mod chat;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dualtrack_core::augmentation::builtin_descriptors;
use dualtrack_core::engine::DEFAULT_PERSONA;
use dualtrack_core::evolution::{curate, export_sft, run_flywheel, CurationConfig, EpisodeStore, Judge, RuleJudge};
use dualtrack_core::{EngineConfig, PerceptionMode};
use dualtrack_harness::{bundled_corpus, load_corpus, run_bench, HarnessError};

#[derive(Debug, Parser)]
#[command(name = "dualtrack", version, about = "Dual-track conversational orchestration engine")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Time-to-first-token budget in milliseconds.
    #[arg(long, global = true)]
    budget_ms: Option<u64>,
    #[arg(long, global = true, value_parser = ["decoupled", "monolithic"])]
    perception: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Talk to the engine from the terminal; `/quit` ends the session.
    Chat {
        #[arg(long, default_value = "local-user")]
        user: String,
        #[arg(long, default_value = DEFAULT_PERSONA)]
        persona: String,
    },
    /// Run the benchmark corpus on the virtual clock and write a report.
    Bench {
        /// Corpus JSON file; the bundled corpus when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Judge, curate, distill and export logged episodes into `evo-vN`.
    Flywheel {
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write SFT records for every episode that passes curation.
    Export {
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the transcripts of logged episodes.
    Replay {
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Only this episode.
        #[arg(long)]
        id: Option<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

/// A failure caused by how the command was invoked.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<EngineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
            EngineConfig::from_kv_text(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(b) = cli.budget_ms {
        cfg.budget_ms = b;
    }
    if let Some(p) = &cli.perception {
        cfg.perception = p.parse::<PerceptionMode>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn episodes_dir(flag: Option<PathBuf>, cfg: &EngineConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.episodes_dir.clone())
        .ok_or_else(|| Usage("no episode store: pass --episodes or set episodes_dir".into()).into())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Chat { user, persona } => {
            runtime()?.block_on(chat::run(cfg, &user, &persona))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { corpus, out } => bench(&cfg, corpus.as_deref(), out.as_deref()),
        Command::Flywheel { episodes, out } => {
            let dir = episodes_dir(episodes, &cfg)?;
            let episodes = load_episodes(&dir)?;
            if episodes.is_empty() {
                eprintln!("warning: no episodes under {}; writing empty outputs", dir.display());
            }
            let judge = RuleJudge::new(builtin_descriptors());
            let summary = runtime()?.block_on(run_flywheel(&episodes, &judge, &curation(&cfg), &out))?;
            println!("flywheel evo-v{} -> {}", summary.version, summary.out_dir.display());
            println!("  episodes        {}", summary.episodes);
            println!("  silver          {}", summary.silver);
            println!("  gold candidates {}", summary.gold_candidates);
            println!("  nuggets         {}", summary.nuggets);
            println!(
                "  sft records     {} (conversation {}, collaboration {})",
                summary.sft_records, summary.conversation, summary.collaboration
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Export { episodes, out } => {
            let dir = episodes_dir(episodes, &cfg)?;
            let episodes = load_episodes(&dir)?;
            let judge = RuleJudge::new(builtin_descriptors());
            let verdicts = runtime()?.block_on(async {
                let mut v = Vec::new();
                for e in &episodes {
                    v.push(judge.judge(e).await?);
                }
                anyhow::Ok(v)
            })?;
            let ids: Vec<String> = episodes.iter().map(|e| e.episode_id.clone()).collect();
            let curated = curate(&ids, &verdicts, &curation(&cfg))?;
            let by_id: BTreeMap<_, _> = ids.into_iter().zip(verdicts).collect();
            let silver: Vec<_> = episodes.iter().filter(|e| curated.silver.contains(&e.episode_id)).collect();
            let n = export_sft(&silver, &by_id, &out)?;
            println!("exported {n} of {} episodes to {}", episodes.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { episodes, id } => {
            let dir = episodes_dir(episodes, &cfg)?;
            let all = load_episodes(&dir)?;
            let picked: Vec<_> = all.iter().filter(|e| id.as_ref().is_none_or(|i| &e.episode_id == i)).collect();
            if let (Some(i), true) = (&id, picked.is_empty()) {
                bail!("no episode '{i}' under {}", dir.display());
            }
            for e in picked {
                println!("== episode {} (session {})", e.episode_id, e.session_id);
                for t in &e.turns {
                    println!("{}", chat::render_entry(t));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { addr } => {
            runtime()?.block_on(async {
                let engine = dualtrack_service::live_engine(cfg)?;
                dualtrack_service::serve(engine, addr).await
            })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn curation(cfg: &EngineConfig) -> CurationConfig {
    CurationConfig { sample_rate: cfg.gold_sample_rate, seed: cfg.seed, sentiment_threshold: cfg.sentiment_threshold }
}

fn load_episodes(dir: &Path) -> Result<Vec<dualtrack_core::evolution::Episode>> {
    if !dir.is_dir() {
        return Err(Usage(format!("episode store {} does not exist", dir.display())).into());
    }
    Ok(EpisodeStore::open(dir)?.load_all()?)
}

fn bench(cfg: &EngineConfig, corpus: Option<&Path>, out: Option<&Path>) -> Result<ExitCode> {
    let cases = match corpus {
        Some(p) if !p.exists() => return Err(Usage(format!("corpus file {} not found", p.display())).into()),
        Some(p) => load_corpus(p)?,
        None => bundled_corpus(),
    };
    let report = match run_bench(&cases, cfg, cfg.seed) {
        Err(HarnessError::Corpus(problems)) => {
            for p in &problems {
                eprintln!("  {p}");
            }
            bail!("invalid corpus: {} problem(s)", problems.len());
        }
        other => other?,
    };
    println!("{}", report.to_table());
    if let Some(out) = out {
        std::fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(if report.all_checks_pass() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
