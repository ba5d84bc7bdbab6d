//! Deliverable synthesis from a terminal execution trace. Generators only
//! read the trace; they never invoke tools.

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::executor::ExecutionTrace;
use super::graph::StepState;
use super::TaskStatus;
use crate::augmentation::MEDIA_TOOLS;
use crate::backend::TextBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityHint {
    Text,
    Image,
    Audio,
}

impl ModalityHint {
    /// Richest modality among the trace's completed steps.
    pub fn for_trace(trace: &ExecutionTrace) -> Self {
        let done = |tool: &str| {
            trace.graph.as_ref().is_some_and(|g| g.steps.iter().any(|s| s.tool == tool && s.state == StepState::Done))
        };
        if done(MEDIA_TOOLS[0]) {
            ModalityHint::Image
        } else if done(MEDIA_TOOLS[1]) {
            ModalityHint::Audio
        } else {
            ModalityHint::Text
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deliverable {
    pub text: String,
    pub status: TaskStatus,
    pub modality: ModalityHint,
}

#[async_trait]
pub trait Generator: Send + Sync {
    async fn generate(&self, trace: &ExecutionTrace, hint: ModalityHint) -> Deliverable;
}

/// Deterministic structured summary, one line per step in plan order.
pub struct ReferenceGenerator;

impl ReferenceGenerator {
    pub fn render(trace: &ExecutionTrace, hint: ModalityHint) -> Deliverable {
        let text = match &trace.graph {
            None => {
                format!("I couldn't put a plan together for that: {}", trace.plan_error.as_deref().unwrap_or("no plan"))
            }
            Some(g) if g.steps.len() == 1 && trace.status == TaskStatus::Completed => {
                g.steps[0].result.as_ref().map(|r| r.summary.clone()).unwrap_or_default()
            }
            Some(g) => {
                let header = match trace.status {
                    TaskStatus::Completed => "Here is everything I found:",
                    TaskStatus::PartialFailure => "I finished part of this:",
                    TaskStatus::Failed => "I wasn't able to complete this:",
                    TaskStatus::Abandoned => "I stopped this task because the question went unanswered:",
                };
                let mut lines = vec![header.to_string()];
                for s in &g.steps {
                    let line = match s.state {
                        StepState::Done => format!(
                            "- Step {} ({}): {}",
                            s.step_id,
                            s.tool,
                            s.result.as_ref().map(|r| r.summary.as_str()).unwrap_or("")
                        ),
                        StepState::Failed => format!(
                            "- Step {} ({}) failed: {}",
                            s.step_id,
                            s.tool,
                            s.failure.as_ref().map(|f| f.message.as_str()).unwrap_or("unknown error")
                        ),
                        StepState::Skipped => {
                            format!("- Step {} ({}) skipped: it depended on a failed step", s.step_id, s.tool)
                        }
                        StepState::Pending | StepState::Running => {
                            format!("- Step {} ({}) did not run", s.step_id, s.tool)
                        }
                    };
                    lines.push(line);
                }
                if trace.status != TaskStatus::Completed {
                    let (done, failed, skipped) = trace.census();
                    let list = |v: &[u32]| {
                        if v.is_empty() {
                            "none".to_string()
                        } else {
                            v.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
                        }
                    };
                    lines.push(format!(
                        "Completed: {}. Failed: {}. Skipped: {}.",
                        list(&done),
                        list(&failed),
                        list(&skipped)
                    ));
                }
                lines.join("\n")
            }
        };
        Deliverable { text, status: trace.status, modality: hint }
    }
}

#[async_trait]
impl Generator for ReferenceGenerator {
    async fn generate(&self, trace: &ExecutionTrace, hint: ModalityHint) -> Deliverable {
        Self::render(trace, hint)
    }
}

/// Model-backed generator; falls back to the reference rendering when the
/// backend fails.
pub struct BackendGenerator {
    backend: Arc<dyn TextBackend>,
}

impl BackendGenerator {
    pub fn new(backend: Arc<dyn TextBackend>) -> Self {
        Self { backend }
    }
}

#[async_trait]
impl Generator for BackendGenerator {
    async fn generate(&self, trace: &ExecutionTrace, hint: ModalityHint) -> Deliverable {
        let reference = ReferenceGenerator::render(trace, hint);
        let prompt = format!(
            "Rewrite this task report for the user in a warm, helpful voice. Keep every fact.\n{}",
            reference.text
        );
        match self.backend.complete(&prompt).await {
            Ok(text) if !text.trim().is_empty() => Deliverable { text, ..reference },
            _ => reference,
        }
    }
}
