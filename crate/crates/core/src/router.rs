//! Three-tier routing: every request becomes a chat, tool or agent decision.
//!
//! The decision wire format has exactly the fields `thought`, `mode`,
//! `routing_target` and `plan`; plan items have `step`, `tool` and `args`.

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::augmentation::Args;
use crate::backend::TextBackend;
use crate::error::{Error, Result};
use crate::perception::RequestObject;
use crate::slow_track::slots::{agent_keywords_in, detect_tool_intents, intent_args};
use crate::slow_track::{dispatch, ProfileRegistry, TemplatePlanner};
use crate::state::ContextBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Chat,
    Tool,
    Agent,
}

impl Mode {
    pub fn tier(self) -> u8 {
        match self {
            Mode::Chat => 1,
            Mode::Tool => 2,
            Mode::Agent => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Chat => "chat",
            Mode::Tool => "tool",
            Mode::Agent => "agent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanItem {
    pub step: u32,
    pub tool: String,
    #[serde(default)]
    pub args: Args,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingDecision {
    #[serde(default)]
    pub thought: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing_target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<PlanItem>>,
    /// Internal only: never serialized, parsed decisions carry 1.0.
    #[serde(skip, default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

/// Confidence is excluded: it is not part of the wire format.
impl PartialEq for RoutingDecision {
    fn eq(&self, other: &Self) -> bool {
        self.thought == other.thought
            && self.mode == other.mode
            && self.routing_target == other.routing_target
            && self.plan == other.plan
    }
}

impl RoutingDecision {
    pub fn chat(thought: impl Into<String>, confidence: f64) -> Self {
        Self { thought: thought.into(), mode: Mode::Chat, routing_target: None, plan: None, confidence }
    }

    pub fn tier(&self) -> u8 {
        self.mode.tier()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decision serializes")
    }

    /// Check the structural invariants; the error names the offending key.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        match self.mode {
            Mode::Chat if self.plan.is_some() => {
                return Err(("plan", "chat decisions carry no plan".into()));
            }
            Mode::Agent if self.routing_target.as_deref().is_none_or(str::is_empty) => {
                return Err(("routing_target", "agent decisions need a routing_target".into()));
            }
            _ => {}
        }
        if let Some(plan) = &self.plan {
            for (i, item) in plan.iter().enumerate() {
                if item.step != i as u32 + 1 {
                    return Err(("plan", format!("plan step {} found where step {} was expected", item.step, i + 1)));
                }
                if item.tool.is_empty() {
                    return Err(("plan", format!("plan step {} has an empty tool", item.step)));
                }
            }
        }
        Ok(())
    }
}

fn byte_offset(raw: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = raw.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(raw.len())
}

/// Parse a backend's raw output against the decision schema.
pub fn validate_decision(raw: &str) -> Result<RoutingDecision> {
    let decision: RoutingDecision = serde_json::from_str(raw).map_err(|e| Error::SchemaViolation {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;
    decision.check().map_err(|(key, message)| Error::SchemaViolation {
        offset: raw.find(&format!("\"{key}\"")).unwrap_or(raw.len()),
        message,
    })?;
    Ok(decision)
}

#[async_trait]
pub trait Classifier: Send + Sync {
    async fn classify(&self, request: &RequestObject, context: &ContextBundle) -> Result<RoutingDecision>;
}

/// Classify, falling back to chat with zero confidence if the classifier
/// errors. Never fails.
pub async fn classify_total(
    classifier: &dyn Classifier,
    request: &RequestObject,
    context: &ContextBundle,
) -> RoutingDecision {
    match classifier.classify(request, context).await {
        Ok(d) => d,
        Err(e) => RoutingDecision::chat(format!("classifier unavailable ({e}); answering directly"), 0.0),
    }
}

/// Ordered keyword cascade: tool table, then agent table (or more than one
/// tool intent), then chat. Agent wins when both tables match.
pub struct RuleClassifier {
    profiles: Arc<ProfileRegistry>,
    planner: TemplatePlanner,
    generalist: String,
}

impl RuleClassifier {
    pub fn new(profiles: Arc<ProfileRegistry>, generalist: impl Into<String>) -> Self {
        Self { profiles, planner: TemplatePlanner::new(), generalist: generalist.into() }
    }

    pub fn with_planner(mut self, planner: TemplatePlanner) -> Self {
        self.planner = planner;
        self
    }

    pub fn decide(&self, utterance: &str, context: &ContextBundle) -> Result<RoutingDecision> {
        let intents = detect_tool_intents(utterance);
        let agent_kw = agent_keywords_in(utterance);
        if !agent_kw.is_empty() || intents.len() > 1 {
            let profile = dispatch(utterance, &self.profiles, &self.generalist)?;
            let plan = self.planner.build(&profile.profile_id, utterance, context).ok();
            let why = if agent_kw.is_empty() {
                format!("{} distinct tool intents", intents.len())
            } else {
                format!("domain request ({})", agent_kw.join(", "))
            };
            return Ok(RoutingDecision {
                thought: format!("{why} -> tier 3"),
                mode: Mode::Agent,
                routing_target: Some(profile.profile_id),
                plan,
                confidence: 1.0,
            });
        }
        if let Some(&intent) = intents.first() {
            let args = intent_args(intent, utterance, context.profile_value("City"));
            return Ok(RoutingDecision {
                thought: format!("single {} intent -> tier 2", intent.tool_id()),
                mode: Mode::Tool,
                routing_target: None,
                plan: Some(vec![PlanItem { step: 1, tool: intent.tool_id().into(), args }]),
                confidence: 1.0,
            });
        }
        Ok(RoutingDecision::chat("no tool or domain keywords -> tier 1", 0.5))
    }
}

#[async_trait]
impl Classifier for RuleClassifier {
    async fn classify(&self, request: &RequestObject, context: &ContextBundle) -> Result<RoutingDecision> {
        self.decide(&request.utterance, context)
    }
}

/// Classifier backed by a text-completion model that must answer with the
/// decision schema.
pub struct ModelClassifier {
    backend: Arc<dyn TextBackend>,
    profiles: Vec<String>,
    tools: Vec<String>,
}

impl ModelClassifier {
    pub fn new(backend: Arc<dyn TextBackend>, profiles: Vec<String>, tools: Vec<String>) -> Self {
        Self { backend, profiles, tools }
    }

    fn prompt(&self, request: &RequestObject, context: &ContextBundle) -> String {
        let recent: Vec<String> = context.entries.iter().map(|e| e.content.clone()).collect();
        let profile: Vec<String> = context.profile.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        format!(
            "Route the latest user query.\n\
             Modes: chat (small talk, memory questions), tool (one lookup), agent (multi-step domain work).\n\
             Agents: {}\nTools: {}\nProfile: {}\nRecent: {}\nQuery: {}\nVisual: {}\n\
             Reply with one JSON object with keys thought, mode, routing_target, plan.",
            self.profiles.join(", "),
            self.tools.join(", "),
            profile.join("; "),
            recent.join(" | "),
            request.utterance,
            request.visual_tags.join(", "),
        )
    }
}

#[async_trait]
impl Classifier for ModelClassifier {
    async fn classify(&self, request: &RequestObject, context: &ContextBundle) -> Result<RoutingDecision> {
        let raw = self.backend.complete(&self.prompt(request, context)).await?;
        validate_decision(raw.trim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const SAMPLE: &str = r#"{
  "thought": "User requests travel plan -> Tier-3",
  "mode": "agent",
  "routing_target": "TravelPlanner",
  "plan": [
    {"step": 1, "tool": "flight_search", "args": {"dest": "Tokyo"}},
    {"step": 2, "tool": "hotel_book", "args": {"type": "Onsen"}}
  ]
}"#;

    fn rules() -> RuleClassifier {
        RuleClassifier::new(Arc::new(ProfileRegistry::with_defaults()), "Generalist")
    }

    fn decide(u: &str) -> RoutingDecision {
        rules().decide(u, &ContextBundle::default()).unwrap()
    }

    #[test]
    fn sample_decision_parses_with_two_steps() {
        let d = validate_decision(SAMPLE).unwrap();
        assert_eq!(d.mode, Mode::Agent);
        assert_eq!(d.tier(), 3);
        assert_eq!(d.routing_target.as_deref(), Some("TravelPlanner"));
        let plan = d.plan.unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[0].tool, "flight_search");
        assert_eq!(plan[1].args["type"], json!("Onsen"));
    }

    #[test]
    fn minimal_chat_is_tier_one() {
        let d = validate_decision(r#"{"mode":"chat","thought":"hi"}"#).unwrap();
        assert_eq!(d.tier(), 1);
        assert!(d.plan.is_none());
        assert_eq!(d.confidence, 1.0);
    }

    #[test]
    fn unknown_mode_is_rejected_with_offset() {
        let raw = r#"{"mode":"fly"}"#;
        match validate_decision(raw).unwrap_err() {
            Error::SchemaViolation { offset, .. } => {
                assert!(offset > raw.find("fly").unwrap() && offset <= raw.len(), "offset {offset}")
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        for raw in [
            r#"{"mode":"chat","confidence":0.9}"#,
            r#"{"mode":"tool","plan":[{"step":1,"tool":"weather","args":{},"why":"x"}]}"#,
        ] {
            assert!(matches!(validate_decision(raw), Err(Error::SchemaViolation { .. })), "{raw}");
        }
    }

    #[test]
    fn structural_violations_point_at_the_key() {
        let raw = r#"{"mode":"agent","thought":"x"}"#;
        assert!(matches!(validate_decision(raw), Err(Error::SchemaViolation { offset, .. }) if offset == raw.len()));
        let raw = r#"{"mode":"tool","plan":[{"step":2,"tool":"weather","args":{}}]}"#;
        let at = raw.find("\"plan\"").unwrap();
        assert!(matches!(validate_decision(raw), Err(Error::SchemaViolation { offset, .. }) if offset == at));
        let raw = r#"{"mode":"chat","plan":[]}"#;
        assert!(validate_decision(raw).is_err());
    }

    #[test]
    fn offset_accounts_for_multiline_input() {
        let raw = "{\n  \"mode\": 7\n}";
        match validate_decision(raw).unwrap_err() {
            Error::SchemaViolation { offset, .. } => assert_eq!(&raw[offset..offset + 1], "7"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn greeting_routes_to_chat() {
        let d = decide("hello there");
        assert_eq!(d.mode, Mode::Chat);
        assert_eq!(d.confidence, 0.5);
    }

    #[test]
    fn weather_routes_to_tool() {
        let d = decide("what's the weather in Beijing");
        assert_eq!(d.mode, Mode::Tool);
        let plan = d.plan.unwrap();
        assert_eq!(plan[0].tool, "weather");
        assert_eq!(plan[0].args["city"], json!("Beijing"));
    }

    #[test]
    fn trip_routes_to_travel_planner() {
        let d = decide("plan a trip to Tokyo");
        assert_eq!(d.mode, Mode::Agent);
        assert_eq!(d.routing_target.as_deref(), Some("TravelPlanner"));
        assert_eq!(d.confidence, 1.0);
    }

    #[test]
    fn agent_wins_when_both_tables_match() {
        let d = decide("plan a trip to Tokyo and check the weather");
        assert_eq!(d.mode, Mode::Agent);
    }

    #[test]
    fn two_tool_intents_route_to_agent() {
        let d = decide("check the weather in Paris and my calendar");
        assert_eq!(d.mode, Mode::Agent);
        assert_eq!(d.routing_target.as_deref(), Some("Generalist"));
    }

    struct Broken;

    #[async_trait]
    impl Classifier for Broken {
        async fn classify(&self, _: &RequestObject, _: &ContextBundle) -> Result<RoutingDecision> {
            Err(Error::Backend("down".into()))
        }
    }

    #[tokio::test]
    async fn classifier_failure_falls_back_to_chat() {
        let req = RequestObject {
            session_id: "s".into(),
            utterance: "plan a trip".into(),
            visual_tags: vec![],
            origin_timestamps: Default::default(),
        };
        let d = classify_total(&Broken, &req, &ContextBundle::default()).await;
        assert_eq!(d.mode, Mode::Chat);
        assert_eq!(d.confidence, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn item(step: u32) -> impl Strategy<Value = PlanItem> {
            ("[a-z_]{1,12}", proptest::collection::btree_map("[a-z]{1,6}", "[A-Za-z0-9 ]{0,10}", 0..4)).prop_map(
                move |(tool, args)| PlanItem {
                    step,
                    tool,
                    args: args.into_iter().map(|(k, v)| (k, json!(v))).collect(),
                },
            )
        }

        fn plan() -> impl Strategy<Value = Vec<PlanItem>> {
            (1u32..6).prop_flat_map(|n| (1..=n).map(item).collect::<Vec<_>>())
        }

        fn decision() -> impl Strategy<Value = RoutingDecision> {
            let thought = "[ -~]{0,30}";
            prop_oneof![
                thought.prop_map(|t| RoutingDecision::chat(t, 1.0)),
                (thought, proptest::option::of(plan())).prop_map(|(t, p)| RoutingDecision {
                    thought: t,
                    mode: Mode::Tool,
                    routing_target: None,
                    plan: p,
                    confidence: 1.0
                }),
                (thought, "[A-Z][a-zA-Z]{1,12}", proptest::option::of(plan())).prop_map(|(t, r, p)| {
                    RoutingDecision { thought: t, mode: Mode::Agent, routing_target: Some(r), plan: p, confidence: 1.0 }
                }),
            ]
        }

        proptest! {
            #[test]
            fn serialize_then_validate_round_trips(d in decision()) {
                let raw = d.to_json();
                prop_assert_eq!(validate_decision(&raw).unwrap(), d.clone());
                let pretty = serde_json::to_string_pretty(&d).unwrap();
                prop_assert_eq!(validate_decision(&pretty).unwrap(), d);
            }

            #[test]
            fn truncated_payloads_report_an_in_range_offset(d in decision(), cut in 0usize..200) {
                let raw = d.to_json();
                let cut = cut.min(raw.len() - 1);
                if let Err(Error::SchemaViolation { offset, .. }) = validate_decision(&raw[..cut]) {
                    prop_assert!(offset <= cut);
                } else {
                    prop_assert!(false, "truncated payload accepted");
                }
            }
        }
    }
}
