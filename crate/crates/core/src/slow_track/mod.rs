//! Slow Track: dispatch a request to an agent profile, plan a task graph,
//! execute it with failure isolation, and generate the deliverable.

mod clarify;
mod constraints;
mod executor;
mod generator;
mod graph;
mod planner;
mod profiles;
pub mod slots;

use serde::{Deserialize, Serialize};

pub use clarify::{
    detect_ambiguity, question_for, rerank, Ambiguity, ClarificationOutcome, Clarifier, FixedClarifier, NoClarifier,
};
pub use constraints::{
    apply_constraints, constraints_from_memory, violated_by, Candidate, Constraint, ConstraintKind, FusionRecord,
};
pub use executor::{
    ClarificationRecord, ContextEntry, ExecutionTrace, Executor, ExecutorConfig, Invocation, NullTraces, TaskContext,
    TaskOutcome, TaskRequest, TaskScope, TraceWriter,
};
pub use generator::{BackendGenerator, Deliverable, Generator, ModalityHint, ReferenceGenerator};
pub use graph::{PlanStep, StepRef, StepState, TaskGraph};
pub use planner::{referenced_steps, ModelPlanner, Planner, TemplatePlanner};
pub use profiles::{default_profiles, dispatch, AgentProfile, ProfileRegistry};

/// Terminal status of a Slow Track task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Completed,
    PartialFailure,
    Failed,
    /// A clarification went unanswered.
    Abandoned,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Completed => "completed",
            TaskStatus::PartialFailure => "partial_failure",
            TaskStatus::Failed => "failed",
            TaskStatus::Abandoned => "abandoned",
        }
    }
}
