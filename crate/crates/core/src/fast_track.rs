//! Fast Track: the reply a user sees inside the time-to-first-token budget.
//!
//! Chat turns get a persona-grounded direct reply; tool and agent turns get
//! an acknowledgement bridge. [`enforce_budget`] races any reply against the
//! deadline and substitutes a holding message when the reply is late.

use std::future::Future;
use std::sync::Arc;

use async_trait::async_trait;
use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};

use crate::augmentation::{retrieve, CorpusDoc, Source};
use crate::backend::TextBackend;
use crate::clock::{Clock, Millis};
use crate::error::{Error, Result};
use crate::perception::RequestObject;
use crate::router::{Mode, RoutingDecision};
use crate::slow_track::slots::{self, ToolIntent};
use crate::state::{ContextBundle, Persona};
use crate::text::contains_phrase;

pub const FALLBACK_ACK: &str = "One moment, let me gather my thoughts...";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseKind {
    Direct,
    Bridge,
    FallbackAck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsePlan {
    pub kind: ResponseKind,
    pub text: String,
    pub deadline_ms: Millis,
    pub produced_at: Millis,
}

/// Produces the direct reply for chat turns.
#[async_trait]
pub trait Responder: Send + Sync {
    async fn respond(&self, request: &RequestObject, context: &ContextBundle, persona: &Persona) -> Result<String>;
}

const WEARY_CUES: &[&str] = &["exhausted", "tired", "slumped", "stressed", "worn out", "sad", "drained"];
const GREETINGS: &[&str] = &["hello", "hi", "hey", "good morning", "good evening"];

/// Profile entry most related to the utterance, or the first one.
fn pick_fact<'c>(utterance: &str, context: &'c ContextBundle) -> Option<&'c (String, String)> {
    let docs: Vec<CorpusDoc> = context
        .profile
        .iter()
        .enumerate()
        .map(|(i, (k, v))| CorpusDoc { doc_id: i.to_string(), source: Source::UserHistory, text: format!("{k} {v}") })
        .collect();
    let best = retrieve(utterance, &docs, 1).into_iter().next();
    match best {
        Some(s) => context.profile.get(s.doc_id.parse::<usize>().ok()?),
        None => context.profile.first(),
    }
}

/// Deterministic template reply over persona traits and profile facts.
pub struct TemplateResponder {
    clock: Clock,
    latency_ms: Millis,
}

impl TemplateResponder {
    pub fn new(clock: Clock, latency_ms: Millis) -> Self {
        Self { clock, latency_ms }
    }

    pub fn render(request: &RequestObject, context: &ContextBundle, persona: &Persona) -> String {
        let cue_text = format!("{} {}", request.utterance, request.visual_tags.join(" "));
        let weary = WEARY_CUES.iter().any(|c| contains_phrase(&cue_text, c));
        let greeting = GREETINGS.iter().any(|g| contains_phrase(&request.utterance, g));
        let mut parts = Vec::new();
        if greeting {
            parts.push(format!("Hello! {} here.", persona.name));
        }
        if weary {
            parts.push("That sounds draining, I'm sorry you're feeling worn out.".to_string());
        }
        match pick_fact(&request.utterance, context) {
            Some((k, v)) if weary => parts.push(format!(
                "Would some {} help you unwind? I remember your {} is {}.",
                v.to_lowercase(),
                k.to_lowercase(),
                v
            )),
            Some((k, v)) => parts.push(format!("I remember your {} is {}.", k.to_lowercase(), v)),
            None => {}
        }
        if parts.is_empty() || (!weary && !greeting) {
            let style = persona.traits.first().map(|t| t.to_lowercase()).unwrap_or_else(|| "happy".into());
            parts.push(format!("I'm {style} to chat. What's on your mind?"));
        }
        parts.join(" ")
    }
}

#[async_trait]
impl Responder for TemplateResponder {
    async fn respond(&self, request: &RequestObject, context: &ContextBundle, persona: &Persona) -> Result<String> {
        self.clock.sleep_ms(self.latency_ms).await;
        Ok(Self::render(request, context, persona))
    }
}

/// Responder delegating to a text-completion backend.
pub struct BackendResponder {
    backend: Arc<dyn TextBackend>,
}

impl BackendResponder {
    pub fn new(backend: Arc<dyn TextBackend>) -> Self {
        Self { backend }
    }
}

#[async_trait]
impl Responder for BackendResponder {
    async fn respond(&self, request: &RequestObject, context: &ContextBundle, persona: &Persona) -> Result<String> {
        let profile: Vec<String> = context.profile.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let recent: Vec<String> = context.entries.iter().map(|e| e.content.clone()).collect();
        let prompt = format!(
            "You are {} ({}; {}).\nUser profile: {}\nRecent: {}\nSeen: {}\nUser: {}\nReply briefly and warmly.",
            persona.name,
            persona.descriptor,
            persona.traits.join(", "),
            profile.join("; "),
            recent.join(" | "),
            request.visual_tags.join(", "),
            request.utterance
        );
        self.backend.complete(&prompt).await
    }
}

/// Acknowledgement for a tool or agent turn naming what is being worked on.
pub fn bridge_text(request: &RequestObject, decision: &RoutingDecision) -> String {
    let utterance = &request.utterance;
    match decision.mode {
        Mode::Agent => {
            let subject = match decision.routing_target.as_deref() {
                Some("TravelPlanner") => match slots::extract_destination(utterance) {
                    Some(dest) => format!("your trip to {dest}"),
                    None => "your trip".to_string(),
                },
                Some("FoodExpert") => "your dining plans".to_string(),
                Some("MedicalExpert") => "your health question".to_string(),
                Some("LegalAdvisor") => "your legal question".to_string(),
                _ => "your request".to_string(),
            };
            format!("I've received your request and I'm working on {subject} now. I'll share the results shortly.")
        }
        _ => {
            let intent = decision.plan.as_ref().and_then(|p| p.first()).and_then(|i| ToolIntent::from_tool_id(&i.tool));
            match intent {
                Some(ToolIntent::Weather) => "I will check the latest reports for you...".to_string(),
                Some(i) => format!("I will look into {} for you...", i.domain()),
                None => "I will look into that for you...".to_string(),
            }
        }
    }
}

/// Acknowledgement for a turn that answers a pending clarification.
pub fn resume_text() -> String {
    "Thanks, that helps. Picking up where I left off...".to_string()
}

/// Result of racing a reply against its deadline.
pub enum Budgeted<'a, T> {
    OnTime(T),
    /// The reply failed before the deadline.
    Failed(Error),
    /// Deadline passed; the reply is still running.
    Late(BoxFuture<'a, Result<T>>),
}

/// Race `fut` against the absolute virtual deadline `deadline_at`.
pub async fn race_deadline<'a, T, F>(clock: &Clock, deadline_at: Millis, fut: F) -> Budgeted<'a, T>
where
    F: Future<Output = Result<T>> + Send + 'a,
{
    let mut fut: BoxFuture<'a, Result<T>> = Box::pin(fut);
    tokio::select! {
        biased;
        r = &mut fut => match r {
            Ok(v) => Budgeted::OnTime(v),
            Err(e) => Budgeted::Failed(e),
        },
        _ = clock.sleep_until_ms(deadline_at) => Budgeted::Late(fut),
    }
}

/// Pass a direct reply through if it beats the deadline, otherwise emit the
/// holding message at the deadline (or immediately on error) and hand back
/// the still-running reply.
pub async fn enforce_budget<'a, F>(
    clock: &Clock,
    turn_start: Millis,
    budget_ms: Millis,
    fut: F,
) -> (ResponsePlan, Option<BoxFuture<'a, Result<String>>>)
where
    F: Future<Output = Result<String>> + Send + 'a,
{
    let plan = |kind, text: String| ResponsePlan { kind, text, deadline_ms: budget_ms, produced_at: clock.now_ms() };
    match race_deadline(clock, turn_start + budget_ms, fut).await {
        Budgeted::OnTime(text) => (plan(ResponseKind::Direct, text), None),
        Budgeted::Failed(_) => (plan(ResponseKind::FallbackAck, FALLBACK_ACK.into()), None),
        Budgeted::Late(rest) => (plan(ResponseKind::FallbackAck, FALLBACK_ACK.into()), Some(rest)),
    }
}
