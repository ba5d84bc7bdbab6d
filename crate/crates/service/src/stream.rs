//! Server-sent event feed for one session.
//!
//! Frames, by SSE event name:
//! - `entry`: a [`TranscriptEntry`], with the SSE `id` set to its seq;
//! - `clarification`: same body, for entries asking the user a question;
//! - `plan`: a [`PlanSnapshot`] whenever a task's plan state changes;
//! - `error`: `{"error": ...}`, after which the stream ends.
//!
//! Reconnecting with `from_seq = last id + 1` (or a `Last-Event-ID` header)
//! resumes the transcript without gaps or repeats. Plan frames carry state,
//! so a reconnect re-sends the current snapshot of every task.

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::sync::Arc;

use axum::response::sse::Event;
use dualtrack_core::bus::PlanSnapshot;
use dualtrack_core::state::{EntryKind, TranscriptEntry};
use dualtrack_core::{Engine, SessionId, TaskId};
use futures::Stream;
use serde_json::json;
use tokio::sync::watch;

pub(crate) fn entry_frame(e: &TranscriptEntry) -> Event {
    let name = if e.kind == EntryKind::Clarification { "clarification" } else { "entry" };
    Event::default()
        .event(name)
        .id(e.seq.to_string())
        .data(serde_json::to_string(e).expect("transcript entries serialize"))
}

fn plan_frame(p: &PlanSnapshot) -> Event {
    Event::default().event("plan").data(serde_json::to_string(p).expect("plan snapshots serialize"))
}

pub(crate) fn error_frame(message: &str) -> Event {
    Event::default().event("error").data(json!({ "error": message }).to_string())
}

struct Tail {
    engine: Arc<Engine>,
    session: SessionId,
    next_seq: u64,
    sent_plans: BTreeMap<TaskId, PlanSnapshot>,
    transcript: watch::Receiver<u64>,
    board: watch::Receiver<u64>,
    queue: VecDeque<Event>,
    done: bool,
}

impl Tail {
    fn collect(&mut self) {
        match self.engine.store().transcript_from(&self.session, self.next_seq) {
            Ok(entries) => {
                for e in &entries {
                    self.queue.push_back(entry_frame(e));
                    self.next_seq = e.seq + 1;
                }
            }
            Err(e) => {
                self.queue.push_back(error_frame(&e.to_string()));
                self.done = true;
                return;
            }
        }
        for snap in self.engine.plan(&self.session) {
            if self.sent_plans.get(&snap.task_id) != Some(&snap) {
                self.queue.push_back(plan_frame(&snap));
                self.sent_plans.insert(snap.task_id.clone(), snap);
            }
        }
    }
}

/// Replay from `from_seq`, then follow the session live. `from_seq` past the
/// end of the transcript yields a single error frame.
pub fn session_stream(
    engine: Arc<Engine>,
    session: SessionId,
    from_seq: u64,
) -> dualtrack_core::Result<impl Stream<Item = Result<Event, Infallible>>> {
    let transcript = engine.store().watch_transcript(&session)?;
    let board = engine.board().watch();
    let len = engine.snapshot(&session)?.next_seq();
    let mut tail = Tail {
        engine,
        session,
        next_seq: from_seq,
        sent_plans: BTreeMap::new(),
        transcript,
        board,
        queue: VecDeque::new(),
        done: false,
    };
    if from_seq > len {
        tail.queue.push_back(error_frame(&format!("from_seq {from_seq} is past the transcript end {len}")));
        tail.done = true;
    }
    Ok(futures::stream::unfold(tail, |mut st| async move {
        loop {
            if let Some(ev) = st.queue.pop_front() {
                return Some((Ok(ev), st));
            }
            if st.done {
                return None;
            }
            // Mark both channels seen before reading so no change is missed.
            st.transcript.borrow_and_update();
            st.board.borrow_and_update();
            st.collect();
            if !st.queue.is_empty() {
                continue;
            }
            tokio::select! {
                r = st.transcript.changed() => if r.is_err() { st.done = true },
                r = st.board.changed() => if r.is_err() { st.done = true },
            }
        }
    }))
}
