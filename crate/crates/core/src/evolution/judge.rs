//! Episode judging on next-turn engagement, instruction compliance and
//! sentiment alignment.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::episode::Episode;
use crate::augmentation::{ToolDescriptor, AGENT_TOOL_PREFIX};
use crate::backend::TextBackend;
use crate::error::{Error, Result};
use crate::state::{EntryKind, Role};
use crate::text::tokenize;

const POSITIVE: &[&str] = &[
    "great",
    "good",
    "thanks",
    "thank",
    "love",
    "awesome",
    "perfect",
    "nice",
    "wonderful",
    "excellent",
    "happy",
    "helpful",
    "amazing",
    "glad",
    "cool",
    "fantastic",
    "yes",
];
const NEGATIVE: &[&str] = &[
    "bad",
    "terrible",
    "wrong",
    "hate",
    "awful",
    "useless",
    "annoying",
    "angry",
    "horrible",
    "worse",
    "disappointed",
    "exhausted",
    "tired",
    "sad",
    "stressed",
    "broken",
];
const TERMINAL_TOKENS: &[&str] = &["bye", "stop", "cancel", ""];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub engagement: bool,
    pub compliance: bool,
    pub sentiment: f64,
    pub reasoning: String,
}

impl JudgeVerdict {
    pub fn passes(&self, sentiment_threshold: f64) -> bool {
        self.engagement && self.compliance && self.sentiment >= sentiment_threshold
    }
}

#[async_trait]
pub trait Judge: Send + Sync {
    async fn judge(&self, episode: &Episode) -> Result<JudgeVerdict>;
}

/// `(pos - neg) / max(1, pos + neg)` over lexicon hits, in [-1, 1].
pub fn sentiment_score<S: AsRef<str>>(texts: &[S]) -> f64 {
    let (mut pos, mut neg) = (0i64, 0i64);
    for t in texts {
        for tok in tokenize(t.as_ref()) {
            if POSITIVE.contains(&tok.as_str()) {
                pos += 1;
            } else if NEGATIVE.contains(&tok.as_str()) {
                neg += 1;
            }
        }
    }
    ((pos - neg) as f64 / (pos + neg).max(1) as f64).clamp(-1.0, 1.0)
}

pub fn is_terminal_turn(text: &str) -> bool {
    TERMINAL_TOKENS.contains(&tokenize(text).join(" ").as_str())
}

/// The next user turn after the last deliverable (or after the first reply
/// when the episode has none) exists and is not a terminal token.
pub fn engagement(episode: &Episode) -> bool {
    let anchor = episode
        .turns
        .iter()
        .rposition(|t| t.kind == EntryKind::Deliverable)
        .or_else(|| episode.turns.iter().position(|t| t.role != Role::User));
    let Some(anchor) = anchor else { return false };
    episode.turns[anchor + 1..].iter().find(|t| t.role == Role::User).is_some_and(|t| !is_terminal_turn(&t.content))
}

/// Invoked tools that the episode's plans never declared, or whose
/// arguments fail their schema.
pub fn compliance_violations(episode: &Episode, catalog: &BTreeMap<String, ToolDescriptor>) -> Vec<String> {
    let declared: BTreeSet<&str> = episode
        .routing_decisions
        .iter()
        .filter_map(|r| r.decision.plan.as_ref())
        .flatten()
        .map(|i| i.tool.as_str())
        .collect();
    let mut out = Vec::new();
    for trace in &episode.traces {
        for inv in &trace.invocations {
            if !declared.contains(inv.tool.as_str()) {
                out.push(format!("{} was invoked but never planned", inv.tool));
                continue;
            }
            if inv.tool.starts_with(AGENT_TOOL_PREFIX) || catalog.is_empty() {
                continue;
            }
            match catalog.get(&inv.tool) {
                Some(d) => {
                    if let Err(e) = d.validate_args(&inv.args) {
                        out.push(format!("{}: {e}", inv.tool));
                    }
                }
                None => out.push(format!("{} is not in the catalog", inv.tool)),
            }
        }
    }
    out
}

/// Reference judge over the transcript, traces and a sentiment lexicon.
#[derive(Default)]
pub struct RuleJudge {
    catalog: BTreeMap<String, ToolDescriptor>,
}

impl RuleJudge {
    pub fn new(catalog: Vec<ToolDescriptor>) -> Self {
        Self { catalog: catalog.into_iter().map(|d| (d.tool_id.clone(), d)).collect() }
    }

    pub fn verdict(&self, episode: &Episode) -> JudgeVerdict {
        let engaged = engagement(episode);
        let violations = compliance_violations(episode, &self.catalog);
        let user: Vec<&str> = episode.user_turns().map(|t| t.content.as_str()).collect();
        let sentiment = sentiment_score(&user);
        let reasoning = format!(
            "engagement {}; {}; sentiment {sentiment:.2}",
            if engaged { "yes" } else { "no" },
            if violations.is_empty() { "all invocations planned and valid".to_string() } else { violations.join("; ") },
        );
        JudgeVerdict { engagement: engaged, compliance: violations.is_empty(), sentiment, reasoning }
    }
}

#[async_trait]
impl Judge for RuleJudge {
    async fn judge(&self, episode: &Episode) -> Result<JudgeVerdict> {
        Ok(self.verdict(episode))
    }
}

/// Scores emitted by a model judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelScores {
    pub persona_score: u8,
    pub empathy_score: u8,
    pub fidelity_hit: bool,
    pub reasoning: String,
}

pub fn parse_model_verdict(raw: &str) -> Result<ModelScores> {
    let scores: ModelScores = serde_json::from_str(raw).map_err(|e| Error::SchemaViolation {
        offset: raw.lines().take(e.line().saturating_sub(1)).map(|l| l.len() + 1).sum::<usize>()
            + e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    for (key, v) in [("persona_score", scores.persona_score), ("empathy_score", scores.empathy_score)] {
        if !(1..=5).contains(&v) {
            return Err(Error::SchemaViolation {
                offset: raw.find(&format!("\"{key}\"")).unwrap_or(0),
                message: format!("{key} must be between 1 and 5, got {v}"),
            });
        }
    }
    Ok(scores)
}

/// Persona 3+ counts as engaged, a fidelity hit as compliant, and empathy
/// maps linearly from 1..5 onto -1..1.
impl From<ModelScores> for JudgeVerdict {
    fn from(s: ModelScores) -> Self {
        JudgeVerdict {
            engagement: s.persona_score >= 3,
            compliance: s.fidelity_hit,
            sentiment: (s.empathy_score as f64 - 3.0) / 2.0,
            reasoning: s.reasoning,
        }
    }
}

pub struct ModelJudge {
    backend: Arc<dyn TextBackend>,
}

impl ModelJudge {
    pub fn new(backend: Arc<dyn TextBackend>) -> Self {
        Self { backend }
    }
}

#[async_trait]
impl Judge for ModelJudge {
    async fn judge(&self, episode: &Episode) -> Result<JudgeVerdict> {
        let query: Vec<&str> = episode.user_turns().map(|t| t.content.as_str()).collect();
        let response = episode.last_deliverable().or_else(|| episode.turns.iter().rev().find(|t| t.role != Role::User));
        let prompt = format!(
            "Rate the response.\nUser: {}\nResponse: {}\n\
             Reply with JSON: reasoning, persona_score (1-5), empathy_score (1-5), fidelity_hit (bool).",
            query.join(" | "),
            response.map(|t| t.content.as_str()).unwrap_or(""),
        );
        let raw = self.backend.complete(&prompt).await?;
        Ok(parse_model_verdict(raw.trim())?.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::episode::log_episode;
    use crate::ids::{SessionId, TaskId};
    use crate::router::{Mode, PlanItem, RoutingDecision};
    use crate::slow_track::{ExecutionTrace, Invocation, TaskContext, TaskStatus};
    use crate::state::{SessionState, TranscriptEntry};
    use serde_json::json;

    fn entry(seq: u64, role: Role, kind: EntryKind, content: &str) -> TranscriptEntry {
        TranscriptEntry { seq, role, kind, content: content.into(), source_event_id: None, timestamp: seq }
    }

    fn episode(turns: Vec<TranscriptEntry>) -> Episode {
        let s = SessionState {
            session_id: SessionId::new("s"),
            user_id: "u".into(),
            persona_id: "p".into(),
            transcript: turns,
            working_memory: vec![],
            pending_tasks: Default::default(),
            created_at: 0,
            last_active_at: 0,
        };
        let n = s.transcript.len() as u64;
        log_episode(&s, 0..n, &[], &[]).unwrap()
    }

    fn trace_with(tools: &[(&str, serde_json::Value)]) -> ExecutionTrace {
        ExecutionTrace {
            task_id: TaskId::new("t"),
            profile_id: None,
            graph: None,
            plan_error: None,
            context: TaskContext { task_id: TaskId::new("t"), entries: vec![], constraints: vec![] },
            invocations: tools
                .iter()
                .enumerate()
                .map(|(i, (t, a))| Invocation {
                    step_id: i as u32 + 1,
                    tool: t.to_string(),
                    args: serde_json::from_value(a.clone()).unwrap(),
                    at: 0,
                })
                .collect(),
            fusions: vec![],
            clarifications: vec![],
            status: TaskStatus::Completed,
            started_at: 0,
            ended_at: 0,
        }
    }

    #[test]
    fn positive_follow_up_after_deliverable_is_engaged() {
        let ep = episode(vec![
            entry(0, Role::User, EntryKind::Turn, "plan a trip to Tokyo"),
            entry(1, Role::Assistant, EntryKind::Bridge, "On it"),
            entry(2, Role::Assistant, EntryKind::Deliverable, "Here is the plan"),
            entry(3, Role::User, EntryKind::Turn, "great, book it!"),
        ]);
        let v = RuleJudge::default().verdict(&ep);
        assert!(v.engagement);
        assert!(v.sentiment > 0.0);
        assert!(v.passes(0.0));
    }

    #[test]
    fn terminal_follow_up_is_not_engagement() {
        for last in ["bye", "Stop!", "  "] {
            let ep = episode(vec![
                entry(0, Role::User, EntryKind::Turn, "hello"),
                entry(1, Role::Assistant, EntryKind::Turn, "hi"),
                entry(2, Role::User, EntryKind::Turn, last),
            ]);
            assert!(!engagement(&ep), "{last:?}");
        }
    }

    #[test]
    fn sentiment_matches_the_formula() {
        assert_eq!(sentiment_score(&["great thanks"]), 1.0);
        assert_eq!(sentiment_score(&["great but terrible and awful"]), -1.0 / 3.0);
        assert_eq!(sentiment_score::<&str>(&[]), 0.0);
    }

    #[test]
    fn unplanned_tool_breaks_compliance() {
        let mut ep = episode(vec![
            entry(0, Role::User, EntryKind::Turn, "weather in Paris"),
            entry(1, Role::Assistant, EntryKind::Bridge, "checking"),
        ]);
        ep.routing_decisions.push(crate::evolution::RoutedTurn {
            seq: 0,
            tier: 2,
            decision: RoutingDecision {
                thought: String::new(),
                mode: Mode::Tool,
                routing_target: None,
                plan: Some(vec![PlanItem { step: 1, tool: "weather".into(), args: Default::default() }]),
                confidence: 1.0,
            },
        });
        let judge = RuleJudge::new(crate::augmentation::builtin_descriptors());
        ep.traces = vec![trace_with(&[("weather", json!({"city": "Paris"}))])];
        assert!(judge.verdict(&ep).compliance);
        ep.traces = vec![trace_with(&[("weather", json!({"city": "Paris"})), ("search", json!({"query": "x"}))])];
        assert!(!judge.verdict(&ep).compliance);
        ep.traces = vec![trace_with(&[("weather", json!({"town": "Paris"}))])];
        assert!(!judge.verdict(&ep).compliance);
    }

    #[test]
    fn model_scores_parse_and_map() {
        let raw = r#"{"persona_score":5,"empathy_score":4,"fidelity_hit":true,"reasoning":"Acknowledges emotion and keeps persona"}"#;
        let s = parse_model_verdict(raw).unwrap();
        assert!(s.fidelity_hit);
        let v: JudgeVerdict = s.into();
        assert!(v.engagement && v.compliance);
        assert_eq!(v.sentiment, 0.5);
    }

    #[test]
    fn model_scores_reject_bad_payloads() {
        for raw in [
            r#"{"persona_score":6,"empathy_score":4,"fidelity_hit":true,"reasoning":""}"#,
            r#"{"persona_score":5,"empathy_score":4,"fidelity_hit":"yes","reasoning":""}"#,
            r#"{"persona_score":5,"empathy_score":4,"fidelity_hit":true,"reasoning":"","extra":1}"#,
            r#"{"persona_score":5}"#,
        ] {
            assert!(matches!(parse_model_verdict(raw), Err(Error::SchemaViolation { .. })), "{raw}");
        }
    }
}
