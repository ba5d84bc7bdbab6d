//! Per-session shared state: the ordered transcript, the working memory
//! trajectory and the set of in-flight tasks.
//!
//! Every mutation of a session goes through that session's write lock, which
//! is the single serialization point between the Fast Track, the Slow Track
//! integration consumer and any API writer. Readers take snapshots.

mod log;
mod memory;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

pub use memory::{
    AgentMemory, Document, HistoryFact, KnowledgeNugget, MemoryOwner, MemoryStore, NuggetScope, Persona, UserMemory,
};

use crate::clock::{Clock, Millis};
use crate::error::{Error, Result};
use crate::evolution::ArchiveRef;
use crate::ids::{EventId, IdGen, SessionId, TaskId};
use crate::text::estimate_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "user")]
    User,
    #[serde(rename = "assistant")]
    Assistant,
    #[serde(rename = "system-integration")]
    SystemIntegration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Turn,
    Bridge,
    Deliverable,
    Clarification,
    ProgressNote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub role: Role,
    pub kind: EntryKind,
    pub content: String,
    pub source_event_id: Option<EventId>,
    pub timestamp: Millis,
}

/// An entry before the session writer assigns its sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryDraft {
    pub role: Role,
    pub kind: EntryKind,
    pub content: String,
    pub source_event_id: Option<EventId>,
}

impl EntryDraft {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, kind: EntryKind::Turn, content: content.into(), source_event_id: None }
    }

    pub fn assistant(kind: EntryKind, content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, kind, content: content.into(), source_event_id: None }
    }

    pub fn from_event(kind: EntryKind, content: impl Into<String>, event: EventId) -> Self {
        let role = match kind {
            EntryKind::ProgressNote => Role::SystemIntegration,
            _ => Role::Assistant,
        };
        Self { role, kind, content: content.into(), source_event_id: Some(event) }
    }
}

/// One item of the agent's working-memory trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceItem {
    pub task_id: Option<TaskId>,
    pub step_id: Option<u32>,
    pub payload: String,
    pub archive_ref: Option<ArchiveRef>,
    pub token_estimate: u64,
    pub folded: bool,
}

impl TraceItem {
    pub fn new(task_id: Option<TaskId>, step_id: Option<u32>, payload: impl Into<String>) -> Self {
        let payload = payload.into();
        Self { token_estimate: estimate_tokens(&payload), task_id, step_id, payload, archive_ref: None, folded: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub user_id: String,
    pub persona_id: String,
    pub transcript: Vec<TranscriptEntry>,
    pub working_memory: Vec<TraceItem>,
    pub pending_tasks: BTreeSet<TaskId>,
    pub created_at: Millis,
    pub last_active_at: Millis,
}

impl SessionState {
    pub fn next_seq(&self) -> u64 {
        self.transcript.len() as u64
    }

    pub fn working_memory_tokens(&self) -> u64 {
        self.working_memory.iter().map(|t| t.token_estimate).sum()
    }
}

/// Recent transcript suffix plus the user's profile, fitted to a token budget.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ContextBundle {
    pub profile: Vec<(String, String)>,
    pub entries: Vec<TranscriptEntry>,
    pub token_estimate: u64,
}

impl ContextBundle {
    pub fn profile_value(&self, key: &str) -> Option<&str> {
        self.profile.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v.as_str())
    }
}

pub(crate) fn profile_line(key: &str, value: &str) -> String {
    format!("{key}: {value}")
}

/// Fit the newest transcript suffix into what the profile leaves of the
/// budget. Profile entries are never dropped.
pub fn fit_context(profile: Vec<(String, String)>, transcript: &[TranscriptEntry], token_budget: u64) -> ContextBundle {
    let profile_tokens: u64 = profile.iter().map(|(k, v)| estimate_tokens(&profile_line(k, v))).sum();
    let mut remaining = token_budget.saturating_sub(profile_tokens);
    let mut kept = Vec::new();
    for entry in transcript.iter().rev() {
        let cost = estimate_tokens(&entry.content);
        if cost > remaining {
            break;
        }
        remaining -= cost;
        kept.push(entry.clone());
    }
    kept.reverse();
    let entry_tokens: u64 = kept.iter().map(|e| estimate_tokens(&e.content)).sum();
    ContextBundle { profile, entries: kept, token_estimate: profile_tokens + entry_tokens }
}

struct SessionCell {
    state: RwLock<SessionState>,
    integrated: Mutex<HashSet<EventId>>,
    closed: Mutex<bool>,
    log: Option<Mutex<log::SessionLog>>,
    len_tx: watch::Sender<u64>,
}

/// Owner of all live sessions.
pub struct SessionStore {
    sessions: RwLock<HashMap<SessionId, Arc<SessionCell>>>,
    memory: Arc<MemoryStore>,
    ids: IdGen,
    clock: Clock,
    log_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(memory: Arc<MemoryStore>, ids: IdGen, clock: Clock) -> Self {
        Self { sessions: RwLock::new(HashMap::new()), memory, ids, clock, log_dir: None }
    }

    /// Persist every session as `<session_id>.log.jsonl` under `dir`.
    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.log_dir = Some(dir);
        Ok(self)
    }

    pub fn memory(&self) -> &Arc<MemoryStore> {
        &self.memory
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn create_session(&self, user_id: &str, persona_id: &str) -> Result<SessionState> {
        if !self.memory.has_persona(persona_id) {
            return Err(Error::Config(format!("unknown persona '{persona_id}'")));
        }
        let now = self.clock.now_ms();
        let session_id = SessionId::new(self.ids.next_id());
        let state = SessionState {
            session_id: session_id.clone(),
            user_id: user_id.to_string(),
            persona_id: persona_id.to_string(),
            transcript: Vec::new(),
            working_memory: Vec::new(),
            pending_tasks: BTreeSet::new(),
            created_at: now,
            last_active_at: now,
        };
        let log = match &self.log_dir {
            Some(dir) => Some(Mutex::new(log::SessionLog::create(dir, &state)?)),
            None => None,
        };
        self.insert_cell(state.clone(), log);
        self.memory.touch_session(user_id, &session_id);
        Ok(state)
    }

    fn insert_cell(&self, state: SessionState, log: Option<Mutex<log::SessionLog>>) {
        let integrated = state.transcript.iter().filter_map(|e| e.source_event_id.clone()).collect();
        let (len_tx, _) = watch::channel(state.transcript.len() as u64);
        let cell = Arc::new(SessionCell {
            state: RwLock::new(state.clone()),
            integrated: Mutex::new(integrated),
            closed: Mutex::new(false),
            log,
            len_tx,
        });
        self.sessions.write().insert(state.session_id, cell);
    }

    fn cell(&self, id: &SessionId) -> Result<Arc<SessionCell>> {
        self.sessions.read().get(id).cloned().ok_or_else(|| Error::SessionNotFound(id.clone()))
    }

    pub fn contains(&self, id: &SessionId) -> bool {
        self.sessions.read().contains_key(id)
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<_> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn close_session(&self, id: &SessionId) -> Result<()> {
        *self.cell(id)?.closed.lock() = true;
        Ok(())
    }

    pub fn is_closed(&self, id: &SessionId) -> Result<bool> {
        Ok(*self.cell(id)?.closed.lock())
    }

    /// Append an entry and return its sequence number.
    ///
    /// Entries carrying a `source_event_id` are admitted at most once; a
    /// repeat yields [`Error::DuplicateEvent`].
    pub fn append_transcript(&self, id: &SessionId, draft: EntryDraft) -> Result<u64> {
        self.append_entry(id, draft).map(|e| e.seq)
    }

    fn append_entry(&self, id: &SessionId, draft: EntryDraft) -> Result<TranscriptEntry> {
        if draft.kind == EntryKind::Deliverable && draft.source_event_id.is_none() {
            return Err(Error::InvalidEntry("deliverable entries must carry a source event".into()));
        }
        let cell = self.cell(id)?;
        let mut state = cell.state.write();
        if let Some(ev) = &draft.source_event_id {
            let mut integrated = cell.integrated.lock();
            if !integrated.insert(ev.clone()) {
                return Err(Error::DuplicateEvent(ev.clone()));
            }
        }
        let now = self.clock.now_ms().max(state.created_at);
        let entry = TranscriptEntry {
            seq: state.next_seq(),
            role: draft.role,
            kind: draft.kind,
            content: draft.content,
            source_event_id: draft.source_event_id,
            timestamp: now,
        };
        if let Some(log) = &cell.log {
            log.lock().append(&entry)?;
        }
        state.transcript.push(entry.clone());
        state.last_active_at = now;
        cell.len_tx.send_replace(state.transcript.len() as u64);
        Ok(entry)
    }

    /// Exactly-once integration of a Slow Track output: returns `None` when
    /// the event has already produced an entry.
    pub fn append_integration(&self, id: &SessionId, draft: EntryDraft) -> Result<Option<TranscriptEntry>> {
        if draft.source_event_id.is_none() {
            return Err(Error::InvalidEntry("integration requires a source event".into()));
        }
        match self.append_entry(id, draft) {
            Ok(e) => Ok(Some(e)),
            Err(Error::DuplicateEvent(ev)) => {
                tracing::debug!(session = %id, event = %ev, "duplicate integration ignored");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn read_context(&self, id: &SessionId, token_budget: u64) -> Result<ContextBundle> {
        if token_budget == 0 {
            return Err(Error::InvalidInput("token budget must be positive".into()));
        }
        let cell = self.cell(id)?;
        let state = cell.state.read();
        let profile: Vec<_> = self.memory.user(&state.user_id).profile.into_iter().collect();
        Ok(fit_context(profile, &state.transcript, token_budget))
    }

    pub fn snapshot(&self, id: &SessionId) -> Result<SessionState> {
        Ok(self.cell(id)?.state.read().clone())
    }

    pub fn transcript_from(&self, id: &SessionId, from_seq: u64) -> Result<Vec<TranscriptEntry>> {
        let cell = self.cell(id)?;
        let state = cell.state.read();
        Ok(state.transcript.iter().skip(from_seq as usize).cloned().collect())
    }

    /// Receiver tracking the transcript length.
    pub fn watch_transcript(&self, id: &SessionId) -> Result<watch::Receiver<u64>> {
        Ok(self.cell(id)?.len_tx.subscribe())
    }

    pub fn add_pending(&self, id: &SessionId, task: &TaskId) -> Result<()> {
        self.cell(id)?.state.write().pending_tasks.insert(task.clone());
        Ok(())
    }

    pub fn remove_pending(&self, id: &SessionId, task: &TaskId) -> Result<bool> {
        Ok(self.cell(id)?.state.write().pending_tasks.remove(task))
    }

    pub fn push_trace(&self, id: &SessionId, item: TraceItem) -> Result<()> {
        self.cell(id)?.state.write().working_memory.push(item);
        Ok(())
    }

    /// All unfolded trace items of a task, in insertion order.
    pub fn task_traces(&self, id: &SessionId, task: &TaskId) -> Result<Vec<TraceItem>> {
        let cell = self.cell(id)?;
        let state = cell.state.read();
        Ok(state.working_memory.iter().filter(|t| t.task_id.as_ref() == Some(task)).cloned().collect())
    }

    /// Replace every trace item of `task` with `replacement`, positioned where
    /// the first one was. Returns working-memory token totals before and after.
    pub fn replace_task_traces(&self, id: &SessionId, task: &TaskId, replacement: TraceItem) -> Result<(u64, u64)> {
        let cell = self.cell(id)?;
        let mut state = cell.state.write();
        let before = state.working_memory_tokens();
        let Some(first) = state.working_memory.iter().position(|t| t.task_id.as_ref() == Some(task)) else {
            return Ok((before, before));
        };
        state.working_memory.retain(|t| t.task_id.as_ref() != Some(task));
        state.working_memory.insert(first, replacement);
        Ok((before, state.working_memory_tokens()))
    }

    /// Rebuild sessions from a log directory written by a previous process.
    pub fn restore(&self, dir: &Path) -> Result<usize> {
        let restored = log::load_all(dir)?;
        let n = restored.len();
        for state in restored {
            let log = Some(Mutex::new(log::SessionLog::reopen(dir, &state.session_id)?));
            self.insert_cell(state, log);
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> SessionStore {
        let memory = Arc::new(MemoryStore::new());
        memory.register_persona(
            "companion",
            AgentMemory::new(Persona {
                name: "Mia".into(),
                descriptor: "empathetic companion".into(),
                traits: vec!["Empathetic".into()],
            })
            .unwrap(),
        );
        SessionStore::new(memory, IdGen::sequential("s"), Clock::virtual_start())
    }

    #[tokio::test]
    async fn create_session_starts_empty() {
        let store = store();
        let s = store.create_session("u1", "companion").unwrap();
        assert!(s.transcript.is_empty());
        assert_eq!(s.next_seq(), 0);
        assert!(s.pending_tasks.is_empty());
        assert!(s.last_active_at >= s.created_at);
    }

    #[tokio::test]
    async fn unknown_persona_is_config_error() {
        let store = store();
        let err = store.create_session("u1", "ghost-persona").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[tokio::test]
    async fn two_sessions_are_independent() {
        let store = store();
        let a = store.create_session("u1", "companion").unwrap();
        let b = store.create_session("u1", "companion").unwrap();
        assert_ne!(a.session_id, b.session_id);
        store.append_transcript(&a.session_id, EntryDraft::user("hi")).unwrap();
        assert_eq!(store.snapshot(&b.session_id).unwrap().transcript.len(), 0);
    }

    #[tokio::test]
    async fn thousand_creations_have_unique_ids() {
        let store = store();
        let ids: HashSet<_> = (0..1000).map(|_| store.create_session("u1", "companion").unwrap().session_id).collect();
        assert_eq!(ids.len(), 1000);
    }

    #[tokio::test]
    async fn appends_are_gap_free() {
        let store = store();
        let s = store.create_session("u1", "companion").unwrap().session_id;
        let seqs: Vec<_> =
            (0..3).map(|i| store.append_transcript(&s, EntryDraft::user(format!("m{i}"))).unwrap()).collect();
        assert_eq!(seqs, vec![0, 1, 2]);
    }

    #[tokio::test]
    async fn append_to_unknown_session_is_not_found() {
        let store = store();
        let err = store.append_transcript(&SessionId::new("nope"), EntryDraft::user("x")).unwrap_err();
        assert!(matches!(err, Error::SessionNotFound(_)));
    }

    #[test]
    fn racing_producers_yield_a_dense_run() {
        let rt = tokio::runtime::Builder::new_current_thread().enable_time().build().unwrap();
        let store = rt.block_on(async { Arc::new(store()) });
        let s = store.create_session("u1", "companion").unwrap().session_id;
        let handles: Vec<_> = (0..4)
            .map(|p| {
                let store = store.clone();
                let s = s.clone();
                std::thread::spawn(move || {
                    (0..25)
                        .map(|i| store.append_transcript(&s, EntryDraft::user(format!("p{p}-{i}"))).unwrap())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut seqs: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        seqs.sort_unstable();
        assert_eq!(seqs, (0..100).collect::<Vec<_>>());
        let snap = store.snapshot(&s).unwrap();
        for (i, e) in snap.transcript.iter().enumerate() {
            assert_eq!(e.seq, i as u64);
        }
    }

    #[tokio::test]
    async fn deliverable_requires_event_and_is_exactly_once() {
        let store = store();
        let s = store.create_session("u1", "companion").unwrap().session_id;
        let bad = EntryDraft::assistant(EntryKind::Deliverable, "x");
        assert!(matches!(store.append_transcript(&s, bad), Err(Error::InvalidEntry(_))));
        let ev = EventId::new("t1#3");
        let d = EntryDraft::from_event(EntryKind::Deliverable, "done", ev.clone());
        assert!(store.append_integration(&s, d.clone()).unwrap().is_some());
        assert!(store.append_integration(&s, d).unwrap().is_none());
        let snap = store.snapshot(&s).unwrap();
        assert_eq!(snap.transcript.iter().filter(|e| e.source_event_id.as_ref() == Some(&ev)).count(), 1);
    }

    #[tokio::test]
    async fn empty_session_context_holds_profile_only() {
        let store = store();
        store.memory().set_profile("u1", "Hobby", "Basketball");
        let s = store.create_session("u1", "companion").unwrap().session_id;
        let ctx = store.read_context(&s, 100).unwrap();
        assert!(ctx.entries.is_empty());
        assert_eq!(ctx.profile, vec![("Hobby".to_string(), "Basketball".to_string())]);
        assert_eq!(ctx.profile_value("hobby"), Some("Basketball"));
    }

    #[tokio::test]
    async fn context_keeps_newest_suffix_within_budget() {
        let store = store();
        let s = store.create_session("u1", "companion").unwrap().session_id;
        for i in 0..50 {
            // seven words estimate to exactly ten tokens
            store.append_transcript(&s, EntryDraft::user(format!("m{i} a b c d e f"))).unwrap();
        }
        let ctx = store.read_context(&s, 100).unwrap();
        // greedy suffix oracle
        let mut budget = 100u64;
        let mut expected = Vec::new();
        for e in store.snapshot(&s).unwrap().transcript.iter().rev() {
            let c = estimate_tokens(&e.content);
            if c > budget {
                break;
            }
            budget -= c;
            expected.push(e.seq);
        }
        expected.reverse();
        assert_eq!(ctx.entries.iter().map(|e| e.seq).collect::<Vec<_>>(), expected);
        assert_eq!(ctx.entries.len(), 10);
        assert_eq!(ctx.entries[0].seq, 40);
        assert!(ctx.token_estimate <= 100);
    }

    #[tokio::test]
    async fn zero_budget_is_rejected() {
        let store = store();
        let s = store.create_session("u1", "companion").unwrap().session_id;
        assert!(store.read_context(&s, 0).is_err());
    }

    #[tokio::test]
    async fn replace_task_traces_shrinks_working_memory() {
        let store = store();
        let s = store.create_session("u1", "companion").unwrap().session_id;
        let t = TaskId::new("t1");
        store.push_trace(&s, TraceItem::new(Some(t.clone()), Some(1), "a ".repeat(100))).unwrap();
        store.push_trace(&s, TraceItem::new(None, None, "routing")).unwrap();
        store.push_trace(&s, TraceItem::new(Some(t.clone()), Some(2), "b ".repeat(100))).unwrap();
        let (before, after) =
            store.replace_task_traces(&s, &t, TraceItem::new(Some(t.clone()), None, "summary")).unwrap();
        assert!(after < before);
        let wm = store.snapshot(&s).unwrap().working_memory;
        assert_eq!(wm.len(), 2);
        assert_eq!(wm[0].payload, "summary");
    }

    #[test]
    fn log_restore_reproduces_transcript() {
        let dir = tempfile::tempdir().unwrap();
        let rt = tokio::runtime::Builder::new_current_thread().enable_time().build().unwrap();
        rt.block_on(async {
            let s1 = store().with_log_dir(dir.path()).unwrap();
            let id = s1.create_session("u1", "companion").unwrap().session_id;
            s1.append_transcript(&id, EntryDraft::user("hello")).unwrap();
            s1.append_integration(&id, EntryDraft::from_event(EntryKind::Deliverable, "done", EventId::new("t#2")))
                .unwrap();
            let before = s1.transcript_from(&id, 0).unwrap();

            let s2 = store();
            assert_eq!(s2.restore(dir.path()).unwrap(), 1);
            assert_eq!(s2.transcript_from(&id, 0).unwrap(), before);
            // exactly-once survives the restart
            assert!(s2
                .append_integration(&id, EntryDraft::from_event(EntryKind::Deliverable, "done", EventId::new("t#2")),)
                .unwrap()
                .is_none());
            // and new appends continue the sequence
            assert_eq!(s2.append_transcript(&id, EntryDraft::user("again")).unwrap(), 2);
        });
    }
}
