use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use serde_json::Value;

use super::{Bus, EventKind, EventSink, StateUpdateEvent, TaskEmitter};
use crate::augmentation::seeded_rng;

/// Fault-injecting sink for delivery tests: holds each task's events until
/// its terminal event, then publishes every event twice in a seeded shuffled
/// order. Not suitable for tasks that wait on a clarification, since the
/// question would be held back too.
pub struct FaultyEmitter {
    inner: TaskEmitter,
    seed: u64,
    held: Mutex<Vec<StateUpdateEvent>>,
    stats: Arc<Mutex<HashMap<&'static str, u64>>>,
}

impl FaultyEmitter {
    pub fn new(inner: TaskEmitter, seed: u64) -> Self {
        Self { inner, seed, held: Mutex::new(Vec::new()), stats: Arc::default() }
    }

    fn bus(&self) -> &Arc<Bus> {
        self.inner.bus()
    }

    /// Counts of `accepted`, `duplicate` and `rejected` emits so far.
    pub fn stats(&self) -> HashMap<&'static str, u64> {
        self.stats.lock().clone()
    }
}

impl EventSink for FaultyEmitter {
    fn emit(&self, kind: EventKind, payload: Value) {
        let ev = self.inner.make_event(kind, payload);
        let mut held = self.held.lock();
        held.push(ev);
        if !kind.is_terminal() {
            return;
        }
        let mut batch: Vec<StateUpdateEvent> = held.drain(..).flat_map(|e| [e.clone(), e]).collect();
        let mut rng = seeded_rng(self.seed, self.inner.task_id().as_str());
        batch.shuffle(&mut rng);
        let mut stats = self.stats.lock();
        for e in batch {
            let key = match self.bus().emit(e) {
                Ok(super::EmitOutcome::Accepted) => "accepted",
                Ok(super::EmitOutcome::Duplicate) => "duplicate",
                Err(_) => "rejected",
            };
            *stats.entry(key).or_default() += 1;
        }
    }
}
