//! Interaction episodes: a window of one session's transcript together with
//! the routing decisions, execution traces and working memory it produced.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::judge::sentiment_score;
use crate::clock::Millis;
use crate::error::{Error, Result};
use crate::ids::SessionId;
use crate::router::RoutingDecision;
use crate::slow_track::ExecutionTrace;
use crate::state::{EntryKind, Role, SessionState, TraceItem, TranscriptEntry};
use crate::text::contains_phrase;

const CORRECTION_CUES: &[&str] = &["not that", "i meant", "that's wrong", "wrong", "no,", "actually"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSignals {
    pub followed_up: bool,
    pub user_sentiment: f64,
    pub corrections: u32,
}

/// Routing decision for the user turn at `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedTurn {
    pub seq: u64,
    pub tier: u8,
    pub decision: RoutingDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub session_id: SessionId,
    pub user_id: String,
    pub turns: Vec<TranscriptEntry>,
    pub traces: Vec<ExecutionTrace>,
    pub routing_decisions: Vec<RoutedTurn>,
    /// Working-memory items of this episode's tasks, folded or not.
    pub memory: Vec<TraceItem>,
    pub outcome_signals: OutcomeSignals,
    pub closed_at: Millis,
}

impl Episode {
    pub fn user_turns(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.turns.iter().filter(|t| t.role == Role::User)
    }

    pub fn last_deliverable(&self) -> Option<&TranscriptEntry> {
        self.turns.iter().rev().find(|t| t.kind == EntryKind::Deliverable)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("episode serializes")
    }
}

pub fn is_correction(text: &str) -> bool {
    let lower = text.trim().to_lowercase();
    CORRECTION_CUES.iter().any(|c| lower.starts_with(c) || contains_phrase(&lower, c))
}

/// Slice a session window (transcript seqs) into an episode. `decisions`
/// and `traces` are keyed by the seq of the user turn that caused them.
pub fn log_episode(
    session: &SessionState,
    window: Range<u64>,
    decisions: &[(u64, RoutingDecision)],
    traces: &[(u64, ExecutionTrace)],
) -> Result<Episode> {
    let turns: Vec<TranscriptEntry> = session.transcript.iter().filter(|e| window.contains(&e.seq)).cloned().collect();
    let completed = turns
        .iter()
        .position(|e| e.role == Role::User)
        .is_some_and(|i| turns[i + 1..].iter().any(|e| e.role != Role::User));
    if !completed {
        return Err(Error::Episode(format!(
            "window {}..{} of {} has no completed turn",
            window.start, window.end, session.session_id
        )));
    }
    let first = turns.first().map(|e| e.seq).unwrap_or(window.start);
    let last = turns.last().map(|e| e.seq).unwrap_or(window.start);
    let routing_decisions: Vec<RoutedTurn> = decisions
        .iter()
        .filter(|(seq, _)| window.contains(seq))
        .map(|(seq, d)| RoutedTurn { seq: *seq, tier: d.tier(), decision: d.clone() })
        .collect();
    let traces: Vec<ExecutionTrace> =
        traces.iter().filter(|(seq, _)| window.contains(seq)).map(|(_, t)| t.clone()).collect();
    let tasks: BTreeSet<_> = traces.iter().map(|t| t.task_id.clone()).collect();
    let memory = session
        .working_memory
        .iter()
        .filter(|m| m.task_id.as_ref().is_some_and(|t| tasks.contains(t)))
        .cloned()
        .collect();

    let user_texts: Vec<&str> = turns.iter().filter(|t| t.role == Role::User).map(|t| t.content.as_str()).collect();
    let first_reply = turns.iter().position(|t| t.role != Role::User);
    let followed_up = first_reply.is_some_and(|i| turns[i..].iter().any(|t| t.role == Role::User));
    let outcome_signals = OutcomeSignals {
        followed_up,
        user_sentiment: sentiment_score(&user_texts),
        corrections: user_texts.iter().skip(1).filter(|t| is_correction(t)).count() as u32,
    };
    Ok(Episode {
        episode_id: format!("{}-{first:04}-{last:04}", session.session_id),
        session_id: session.session_id.clone(),
        user_id: session.user_id.clone(),
        closed_at: turns.last().map(|e| e.timestamp).unwrap_or(session.last_active_at),
        turns,
        traces,
        routing_decisions,
        memory,
        outcome_signals,
    })
}

/// One JSON file per episode under a directory.
pub struct EpisodeStore {
    dir: PathBuf,
}

impl EpisodeStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn save(&self, episode: &Episode) -> Result<PathBuf> {
        let path = self.dir.join(format!("{}.json", episode.episode_id));
        std::fs::write(&path, episode.to_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// All episodes, ordered by file name.
    pub fn load_all(&self) -> Result<Vec<Episode>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_slice(&bytes)?)
            })
            .collect()
    }
}
