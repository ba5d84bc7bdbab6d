//! Interactive terminal session on the wall clock.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Result};
use dualtrack_core::bus::{PlanSnapshot, StepView};
use dualtrack_core::config::BackendKind;
use dualtrack_core::state::{EntryKind, Role, TranscriptEntry};
use dualtrack_core::{Engine, EngineConfig, SessionId, TaskId};
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::sync::watch;

const DEFAULT_EPISODES_DIR: &str = "episodes";

pub fn render_entry(e: &TranscriptEntry) -> String {
    match (e.role, e.kind) {
        (Role::User, _) => format!("you> {}", e.content),
        (_, EntryKind::Clarification) => format!("assistant?> {} (answer in your next message)", e.content),
        (_, EntryKind::Deliverable) => format!("assistant> [result] {}", e.content),
        (_, EntryKind::ProgressNote) => format!("  ... {}", e.content),
        _ => format!("assistant> {}", e.content),
    }
}

/// Fail fast when an external backend is configured but not listening.
async fn probe_backends(cfg: &EngineConfig) -> Result<()> {
    if cfg.backend != BackendKind::Http {
        return Ok(());
    }
    for raw in [&cfg.responder_url, &cfg.classifier_url, &cfg.perceptor_url].into_iter().flatten() {
        let url = url::Url::parse(raw).map_err(|e| anyhow::anyhow!("bad backend url {raw}: {e}"))?;
        let host = url.host_str().unwrap_or("localhost").to_string();
        let port = url.port_or_known_default().unwrap_or(80);
        let connect = tokio::net::TcpStream::connect((host.as_str(), port));
        match tokio::time::timeout(Duration::from_secs(2), connect).await {
            Ok(Ok(_)) => {}
            _ => bail!("backend unreachable: {raw}"),
        }
    }
    Ok(())
}

/// Prints transcript entries and plan step changes as they land.
struct Printer {
    engine: Arc<Engine>,
    session: SessionId,
    next_seq: u64,
    last_user_at: u64,
    budget_ms: u64,
    steps: BTreeMap<(TaskId, u32), String>,
}

impl Printer {
    fn flush(&mut self) {
        let Ok(entries) = self.engine.store().transcript_from(&self.session, self.next_seq) else { return };
        let mut results = Vec::new();
        for e in entries {
            self.next_seq = e.seq + 1;
            if e.kind == EntryKind::Deliverable {
                results.push(e);
                continue;
            }
            match (e.role, e.kind) {
                (Role::User, _) => self.last_user_at = e.timestamp,
                (_, EntryKind::Turn | EntryKind::Bridge) => {
                    let ms = e.timestamp.saturating_sub(self.last_user_at);
                    let label = if e.kind == EntryKind::Bridge { "bridge" } else { "reply" };
                    println!("{}  [{label} in {ms} ms, budget {} ms]", render_entry(&e), self.budget_ms);
                }
                _ => println!("{}", render_entry(&e)),
            }
        }
        // Step states first so a result follows the log that produced it.
        for snap in self.engine.plan(&self.session) {
            self.print_steps(&snap);
        }
        for e in results {
            println!("{}", render_entry(&e));
        }
    }

    fn print_steps(&mut self, snap: &PlanSnapshot) {
        for StepView { step_id, tool, state, .. } in &snap.steps {
            let state = serde_json::to_value(state).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let key = (snap.task_id.clone(), *step_id);
            if self.steps.get(&key) != Some(&state) {
                println!("  [plan {}] step {step_id} {tool}: {state}", snap.task_id);
                self.steps.insert(key, state);
            }
        }
    }
}

pub async fn run(mut cfg: EngineConfig, user: &str, persona: &str) -> Result<()> {
    probe_backends(&cfg).await?;
    if cfg.episodes_dir.is_none() {
        cfg.episodes_dir = Some(PathBuf::from(DEFAULT_EPISODES_DIR));
    }
    let episodes_dir = cfg.episodes_dir.clone().unwrap_or_default();
    let budget_ms = cfg.budget_ms;
    let engine = dualtrack_service::live_engine(cfg)?;
    let session = engine.open_session(user, persona)?;
    println!("session {session} open; type /quit to leave");

    let (stop_tx, mut stop_rx) = watch::channel(false);
    let mut printer = Printer {
        engine: engine.clone(),
        session: session.clone(),
        next_seq: 0,
        last_user_at: 0,
        budget_ms,
        steps: BTreeMap::new(),
    };
    let mut transcript = engine.store().watch_transcript(&session)?;
    let mut board = engine.board().watch();
    let printing = tokio::spawn(async move {
        loop {
            transcript.borrow_and_update();
            board.borrow_and_update();
            printer.flush();
            if *stop_rx.borrow() {
                return;
            }
            tokio::select! {
                _ = transcript.changed() => {}
                _ = board.changed() => {}
                _ = stop_rx.changed() => {}
            }
        }
    });

    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    while let Some(line) = lines.next_line().await? {
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            break;
        }
        if let Err(e) = engine.say(&session, text).await {
            eprintln!("error: {e}");
        }
    }

    let episode = engine.close_session(&session).await?;
    let _ = stop_tx.send(true);
    let _ = printing.await;
    match episode {
        Some(ep) => println!("session closed; episode {} logged to {}", ep.episode_id, episodes_dir.display()),
        None => println!("session closed"),
    }
    Ok(())
}
