//! Event-driven synchronization between the tracks.
//!
//! Slow Track tasks emit [`StateUpdateEvent`]s with a dense per-task
//! `causal_seq`. The [`Bus`] keeps one append-only queue per session
//! (optionally mirrored to `<session_id>.events.jsonl`); a [`Subscription`]
//! replays it from the start and restores per-task causal order. The session's
//! integration consumer feeds delivered events to [`integrate`], which turns
//! user-visible kinds into transcript entries exactly once.

mod board;
mod fault;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::watch;

pub use board::{PlanBoard, PlanSnapshot, StepView, TaskPhase};
pub use fault::FaultyEmitter;

use crate::clock::{Clock, Millis};
use crate::error::{Error, Result};
use crate::ids::{EventId, SessionId, TaskId};
use crate::state::{EntryDraft, EntryKind, SessionStore, TranscriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Progress,
    Artifact,
    Clarification,
    Final,
    Failure,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::Final | EventKind::Failure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateUpdateEvent {
    pub event_id: EventId,
    pub session_id: SessionId,
    pub task_id: TaskId,
    pub kind: EventKind,
    pub payload: Value,
    pub causal_seq: u64,
    pub emitted_at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitOutcome {
    Accepted,
    /// Same event id seen before; the queue keeps one logical event.
    Duplicate,
}

/// Where a running task publishes its updates.
pub trait EventSink: Send + Sync {
    fn emit(&self, kind: EventKind, payload: Value);
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _: EventKind, _: Value) {}
}

/// Keeps emitted updates in memory, for inspection in tests.
#[derive(Default)]
pub struct RecordingSink(Mutex<Vec<(EventKind, Value)>>);

impl RecordingSink {
    pub fn events(&self) -> Vec<(EventKind, Value)> {
        self.0.lock().clone()
    }
}

impl EventSink for RecordingSink {
    fn emit(&self, kind: EventKind, payload: Value) {
        self.0.lock().push((kind, payload));
    }
}

struct TaskEntry {
    session: SessionId,
    terminal: Option<(EventId, u64)>,
}

struct SessionQueue {
    log: Vec<StateUpdateEvent>,
    ids: HashSet<EventId>,
    duplicates: u64,
    file: Option<File>,
    len_tx: watch::Sender<usize>,
}

#[derive(Default)]
struct BusInner {
    sessions: HashMap<SessionId, SessionQueue>,
    tasks: HashMap<TaskId, TaskEntry>,
}

/// In-process per-session event queues with replay.
pub struct Bus {
    inner: Mutex<BusInner>,
    log_dir: Option<PathBuf>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self { inner: Mutex::new(BusInner::default()), log_dir: None }
    }

    /// Mirror every accepted event to `<dir>/<session_id>.events.jsonl`.
    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.log_dir = Some(dir);
        Ok(self)
    }

    pub fn open_session(&self, session: &SessionId) -> Result<()> {
        let mut inner = self.inner.lock();
        if inner.sessions.contains_key(session) {
            return Ok(());
        }
        let file = match &self.log_dir {
            Some(dir) => {
                let path = dir.join(format!("{session}.events.jsonl"));
                Some(OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?)
            }
            None => None,
        };
        let (len_tx, _) = watch::channel(0);
        inner.sessions.insert(
            session.clone(),
            SessionQueue { log: Vec::new(), ids: HashSet::new(), duplicates: 0, file, len_tx },
        );
        Ok(())
    }

    /// Register a task so its events are admitted. Registration outlives
    /// termination so late duplicates are recognised rather than rejected.
    pub fn register_task(&self, session: &SessionId, task: &TaskId) -> Result<()> {
        let mut inner = self.inner.lock();
        if !inner.sessions.contains_key(session) {
            return Err(Error::SessionNotFound(session.clone()));
        }
        inner.tasks.entry(task.clone()).or_insert(TaskEntry { session: session.clone(), terminal: None });
        Ok(())
    }

    pub fn emit(&self, event: StateUpdateEvent) -> Result<EmitOutcome> {
        let reject = |reason: &str| Error::EventRejected { task: event.task_id.clone(), reason: reason.to_string() };
        let mut inner = self.inner.lock();
        let Some(task) = inner.tasks.get(&event.task_id) else {
            return Err(reject("task is not registered with the bus"));
        };
        if task.session != event.session_id {
            return Err(reject("task belongs to another session"));
        }
        if event.causal_seq == 0 || event.event_id != EventId::for_task(&event.task_id, event.causal_seq) {
            return Err(reject("event id does not match task and causal_seq"));
        }
        let terminal = task.terminal.clone();
        let queue = inner.sessions.get_mut(&event.session_id).expect("registered task has a session");
        if queue.ids.contains(&event.event_id) {
            queue.duplicates += 1;
            return Ok(EmitOutcome::Duplicate);
        }
        if let Some((tid, tseq)) = &terminal {
            if event.kind.is_terminal() {
                return Err(reject(&format!("task already terminated by {tid}")));
            }
            if event.causal_seq > *tseq {
                return Err(reject("event follows the task's terminal event"));
            }
        }
        if let Some(f) = queue.file.as_mut() {
            let line = serde_json::to_string(&event)?;
            writeln!(f, "{line}").map_err(|e| Error::io(format!("{}.events.jsonl", event.session_id), e))?;
        }
        queue.ids.insert(event.event_id.clone());
        queue.log.push(event.clone());
        queue.len_tx.send_replace(queue.log.len());
        if event.kind.is_terminal() {
            inner.tasks.get_mut(&event.task_id).expect("checked").terminal =
                Some((event.event_id.clone(), event.causal_seq));
        }
        Ok(EmitOutcome::Accepted)
    }

    /// Logical events in arrival order.
    pub fn events(&self, session: &SessionId) -> Result<Vec<StateUpdateEvent>> {
        let inner = self.inner.lock();
        inner.sessions.get(session).map(|q| q.log.clone()).ok_or_else(|| Error::SessionNotFound(session.clone()))
    }

    pub fn duplicate_count(&self, session: &SessionId) -> u64 {
        self.inner.lock().sessions.get(session).map_or(0, |q| q.duplicates)
    }

    pub fn is_terminated(&self, task: &TaskId) -> bool {
        self.inner.lock().tasks.get(task).is_some_and(|t| t.terminal.is_some())
    }

    fn slice_from(&self, session: &SessionId, from: usize) -> Result<(Vec<StateUpdateEvent>, watch::Receiver<usize>)> {
        let inner = self.inner.lock();
        let q = inner.sessions.get(session).ok_or_else(|| Error::SessionNotFound(session.clone()))?;
        Ok((q.log.get(from..).unwrap_or_default().to_vec(), q.len_tx.subscribe()))
    }

    /// Ordered feed of a session's events, replayed from the beginning.
    pub fn subscribe(self: &Arc<Self>, session: &SessionId) -> Result<Subscription> {
        self.slice_from(session, 0)?;
        Ok(Subscription {
            bus: self.clone(),
            session: session.clone(),
            cursor: 0,
            next_seq: HashMap::new(),
            held: HashMap::new(),
            ready: VecDeque::new(),
        })
    }
}

/// Restores per-task causal order over the arrival-ordered queue; events of
/// different tasks keep their arrival interleaving.
pub struct Subscription {
    bus: Arc<Bus>,
    session: SessionId,
    cursor: usize,
    next_seq: HashMap<TaskId, u64>,
    held: HashMap<TaskId, BTreeMap<u64, StateUpdateEvent>>,
    ready: VecDeque<StateUpdateEvent>,
}

impl Subscription {
    fn absorb(&mut self, batch: Vec<StateUpdateEvent>) {
        self.cursor += batch.len();
        for ev in batch {
            let task = ev.task_id.clone();
            let expected = self.next_seq.entry(task.clone()).or_insert(1);
            if ev.causal_seq < *expected {
                continue;
            }
            let held = self.held.entry(task).or_default();
            held.insert(ev.causal_seq, ev);
            while let Some(next) = held.remove(expected) {
                self.ready.push_back(next);
                *expected += 1;
            }
        }
    }

    /// Next in-order event if one is available now.
    pub fn try_next(&mut self) -> Option<StateUpdateEvent> {
        if self.ready.is_empty() {
            if let Ok((batch, _)) = self.bus.slice_from(&self.session, self.cursor) {
                self.absorb(batch);
            }
        }
        self.ready.pop_front()
    }

    /// Wait for the next in-order event. The feed stays open indefinitely.
    pub async fn next(&mut self) -> StateUpdateEvent {
        loop {
            if let Some(ev) = self.ready.pop_front() {
                return ev;
            }
            let Ok((batch, mut rx)) = self.bus.slice_from(&self.session, self.cursor) else {
                return std::future::pending().await;
            };
            if batch.is_empty() {
                let seen = self.cursor;
                if rx.wait_for(|len| *len > seen).await.is_err() {
                    return std::future::pending().await;
                }
                continue;
            }
            self.absorb(batch);
        }
    }

    /// Events held back waiting for an earlier causal_seq.
    pub fn buffered(&self) -> usize {
        self.held.values().map(BTreeMap::len).sum()
    }
}

/// Publishes one task's events with a dense causal_seq starting at 1.
pub struct TaskEmitter {
    bus: Arc<Bus>,
    clock: Clock,
    session: SessionId,
    task: TaskId,
    seq: AtomicU64,
}

impl TaskEmitter {
    pub fn new(bus: Arc<Bus>, clock: Clock, session: SessionId, task: TaskId) -> Self {
        Self { bus, clock, session, task, seq: AtomicU64::new(0) }
    }

    pub fn task_id(&self) -> &TaskId {
        &self.task
    }

    /// Build the next event without publishing it.
    pub fn make_event(&self, kind: EventKind, payload: Value) -> StateUpdateEvent {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        StateUpdateEvent {
            event_id: EventId::for_task(&self.task, seq),
            session_id: self.session.clone(),
            task_id: self.task.clone(),
            kind,
            payload,
            causal_seq: seq,
            emitted_at: self.clock.now_ms(),
        }
    }

    pub fn bus(&self) -> &Arc<Bus> {
        &self.bus
    }
}

impl EventSink for TaskEmitter {
    fn emit(&self, kind: EventKind, payload: Value) {
        let ev = self.make_event(kind, payload);
        if let Err(e) = self.bus.emit(ev) {
            tracing::warn!(task = %self.task, error = %e, "event rejected");
        }
    }
}

fn payload_text(ev: &StateUpdateEvent) -> String {
    for key in ["text", "question", "summary"] {
        if let Some(s) = ev.payload.get(key).and_then(Value::as_str) {
            return s.to_string();
        }
    }
    match &ev.payload {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Apply one delivered event to the session. Progress only touches the plan
/// view; artifacts (when surfaced), clarifications and terminal events become
/// transcript entries at most once per event id.
pub fn integrate(
    event: &StateUpdateEvent,
    store: &SessionStore,
    board: &PlanBoard,
    surface_artifacts: bool,
) -> Result<Option<TranscriptEntry>> {
    board.apply(event);
    let kind = match event.kind {
        EventKind::Progress => return Ok(None),
        EventKind::Artifact if !surface_artifacts => return Ok(None),
        EventKind::Artifact => EntryKind::ProgressNote,
        EventKind::Clarification => EntryKind::Clarification,
        EventKind::Final | EventKind::Failure => EntryKind::Deliverable,
    };
    let draft = EntryDraft::from_event(kind, payload_text(event), event.event_id.clone());
    let entry = store.append_integration(&event.session_id, draft)?;
    if event.kind.is_terminal() {
        store.remove_pending(&event.session_id, &event.task_id)?;
    }
    Ok(entry)
}
