use std::collections::BTreeMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::watch;

use super::{EventKind, StateUpdateEvent};
use crate::clock::Millis;
use crate::ids::{SessionId, TaskId};
use crate::slow_track::StepState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPhase {
    Planning,
    Running,
    Suspended,
    Completed,
    PartialFailure,
    Failed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepView {
    pub step_id: u32,
    pub tool: String,
    pub state: StepState,
    pub depends_on: Vec<u32>,
}

/// Plan-state snapshot of one task, as served to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSnapshot {
    pub task_id: TaskId,
    pub phase: TaskPhase,
    pub steps: Vec<StepView>,
    pub updated_at: Millis,
}

fn rank(s: StepState) -> u8 {
    match s {
        StepState::Pending => 0,
        StepState::Running => 1,
        StepState::Done | StepState::Failed | StepState::Skipped => 2,
    }
}

/// Plan view per session, updated from progress and terminal events.
/// Step states only move forward, so replays and duplicates are harmless.
pub struct PlanBoard {
    plans: RwLock<BTreeMap<SessionId, BTreeMap<TaskId, PlanSnapshot>>>,
    version: watch::Sender<u64>,
}

impl Default for PlanBoard {
    fn default() -> Self {
        Self::new()
    }
}

impl PlanBoard {
    pub fn new() -> Self {
        Self { plans: RwLock::new(BTreeMap::new()), version: watch::channel(0).0 }
    }

    /// Incremented on every change; lets stream endpoints wait for updates.
    pub fn watch(&self) -> watch::Receiver<u64> {
        self.version.subscribe()
    }

    pub fn snapshot(&self, session: &SessionId) -> Vec<PlanSnapshot> {
        self.plans.read().get(session).map(|m| m.values().cloned().collect()).unwrap_or_default()
    }

    pub fn task(&self, session: &SessionId, task: &TaskId) -> Option<PlanSnapshot> {
        self.plans.read().get(session)?.get(task).cloned()
    }

    pub fn apply(&self, ev: &StateUpdateEvent) {
        let changed = {
            let mut plans = self.plans.write();
            let snap = plans.entry(ev.session_id.clone()).or_default().entry(ev.task_id.clone()).or_insert_with(|| {
                PlanSnapshot {
                    task_id: ev.task_id.clone(),
                    phase: TaskPhase::Planning,
                    steps: Vec::new(),
                    updated_at: ev.emitted_at,
                }
            });
            let before = snap.clone();
            apply_to(snap, ev);
            snap.updated_at = snap.updated_at.max(ev.emitted_at);
            *snap != before
        };
        if changed {
            self.version.send_modify(|v| *v += 1);
        }
    }
}

fn is_final_phase(p: TaskPhase) -> bool {
    matches!(p, TaskPhase::Completed | TaskPhase::PartialFailure | TaskPhase::Failed | TaskPhase::Abandoned)
}

fn apply_to(snap: &mut PlanSnapshot, ev: &StateUpdateEvent) {
    let p = &ev.payload;
    match ev.kind {
        EventKind::Progress => match p.get("phase").and_then(Value::as_str) {
            Some("planned") => {
                if snap.steps.is_empty() {
                    if let Some(steps) =
                        p.get("steps").and_then(|s| serde_json::from_value::<Vec<StepView>>(s.clone()).ok())
                    {
                        snap.steps = steps;
                    }
                }
                if snap.phase == TaskPhase::Planning {
                    snap.phase = TaskPhase::Running;
                }
            }
            Some("step_started") | Some("step_finished") | Some("step_resumed") => {
                let id = p.get("step_id").and_then(Value::as_u64).unwrap_or(0) as u32;
                let state = p.get("state").and_then(|s| serde_json::from_value::<StepState>(s.clone()).ok());
                if let (Some(step), Some(state)) = (snap.steps.iter_mut().find(|s| s.step_id == id), state) {
                    if rank(state) > rank(step.state) {
                        step.state = state;
                    }
                }
                if snap.phase == TaskPhase::Suspended && p.get("phase").and_then(Value::as_str) == Some("step_resumed")
                {
                    snap.phase = TaskPhase::Running;
                }
            }
            _ => {}
        },
        EventKind::Clarification => {
            if !is_final_phase(snap.phase) {
                snap.phase = TaskPhase::Suspended;
            }
        }
        EventKind::Artifact => {}
        EventKind::Final | EventKind::Failure => {
            let phase = p
                .get("status")
                .and_then(|s| serde_json::from_value::<TaskPhase>(s.clone()).ok())
                .unwrap_or(if ev.kind == EventKind::Final { TaskPhase::Completed } else { TaskPhase::Failed });
            snap.phase = phase;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::EventId;
    use serde_json::json;

    fn ev(seq: u64, kind: EventKind, payload: Value) -> StateUpdateEvent {
        let t = TaskId::new("t");
        StateUpdateEvent {
            event_id: EventId::for_task(&t, seq),
            session_id: SessionId::new("s"),
            task_id: t,
            kind,
            payload,
            causal_seq: seq,
            emitted_at: seq,
        }
    }

    #[test]
    fn states_only_move_forward() {
        let b = PlanBoard::new();
        let s = SessionId::new("s");
        b.apply(&ev(
            1,
            EventKind::Progress,
            json!({"phase": "planned", "steps": [
                {"step_id": 1, "tool": "a", "state": "pending", "depends_on": []}
            ]}),
        ));
        b.apply(&ev(3, EventKind::Progress, json!({"phase": "step_finished", "step_id": 1, "state": "done"})));
        b.apply(&ev(2, EventKind::Progress, json!({"phase": "step_started", "step_id": 1, "state": "running"})));
        let snap = &b.snapshot(&s)[0];
        assert_eq!(snap.steps[0].state, StepState::Done);
        b.apply(&ev(4, EventKind::Final, json!({"status": "completed"})));
        assert_eq!(b.snapshot(&s)[0].phase, TaskPhase::Completed);
    }
}
