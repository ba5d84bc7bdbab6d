use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::descriptor::{ArgSpec, Args};
use crate::clock::Millis;
use crate::slow_track::TaskStatus;

/// One tool call. `context_slice` holds folded session facts the tool may
/// read; tools receive the envelope by shared reference only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionEnvelope {
    pub envelope_id: String,
    pub tool_id: String,
    pub args: Args,
    #[serde(default)]
    pub context_slice: Vec<String>,
    pub issued_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub envelope_id: String,
    pub tool_id: String,
    pub value: Value,
    pub summary: String,
    pub latency_ms: Millis,
    pub completed_at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Arguments rejected by the schema; no latency was charged.
    Validity,
    UnknownTool,
    Timeout,
    /// Seeded failure drawn from the tool's failure rate.
    Injected,
    Backend,
    /// Result did not match the declared result schema.
    SchemaMismatch,
    /// Delegation refused (depth or global sub-task cap).
    Refused,
    /// A clarification went unanswered.
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolFailure {
    pub kind: FailureKind,
    pub message: String,
    pub elapsed_ms: Millis,
}

impl ToolFailure {
    pub fn new(kind: FailureKind, message: impl Into<String>, elapsed_ms: Millis) -> Self {
        Self { kind, message: message.into(), elapsed_ms }
    }
}

impl fmt::Display for ToolFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Agreement under which one agent profile hands a sub-task to another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationContract {
    pub contract_id: String,
    pub delegate_profile_id: String,
    pub task_statement: String,
    pub expected_result_schema: BTreeMap<String, ArgSpec>,
    pub deadline_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAgentResult {
    pub contract_id: String,
    pub delegate_profile_id: String,
    pub status: TaskStatus,
    pub value: Value,
    pub deliverable: String,
}
