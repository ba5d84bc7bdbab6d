//! Planners turn a request and an agent profile into a task graph.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use async_trait::async_trait;
use serde_json::Value;

use super::graph::{StepRef, TaskGraph};
use super::profiles::AgentProfile;
use super::slots::{self, ToolIntent};
use crate::augmentation::Args;
use crate::backend::TextBackend;
use crate::error::{Error, Result};
use crate::ids::TaskId;
use crate::router::{validate_decision, PlanItem};
use crate::state::ContextBundle;

#[async_trait]
pub trait Planner: Send + Sync {
    async fn plan(
        &self,
        task_id: &TaskId,
        request: &str,
        profile: &AgentProfile,
        context: &ContextBundle,
    ) -> Result<TaskGraph>;
}

/// Declarative per-profile templates: a tool sequence, a dependency pattern
/// and slot-extraction rules over the utterance.
#[derive(Default, Clone)]
pub struct TemplatePlanner {
    fixed: BTreeMap<String, Vec<PlanItem>>,
}

fn put(args: &mut Args, key: &str, v: Option<String>) {
    if let Some(v) = v {
        args.insert(key.to_string(), Value::String(v));
    }
}

impl TemplatePlanner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Use a fixed plan for `profile_id` regardless of the utterance.
    pub fn with_fixed_plan(mut self, profile_id: impl Into<String>, items: Vec<PlanItem>) -> Self {
        self.fixed.insert(profile_id.into(), items);
        self
    }

    /// Plan items for a request; `$stepN` references define the edges.
    pub fn build(&self, profile_id: &str, utterance: &str, context: &ContextBundle) -> Result<Vec<PlanItem>> {
        if let Some(items) = self.fixed.get(profile_id) {
            return Ok(items.clone());
        }
        let home_city = context.profile_value("City");
        let items = match profile_id {
            "TravelPlanner" => travel_plan(utterance, context)?,
            "FoodExpert" => {
                let dest = slots::extract_destination(utterance)
                    .or_else(|| home_city.map(str::to_string))
                    .ok_or_else(|| Error::PlanValidation("dining request names no city".into()))?;
                let mut args = Args::new();
                put(&mut args, "dest", Some(dest));
                vec![PlanItem { step: 1, tool: "dining_search".into(), args }]
            }
            "MedicalExpert" | "LegalAdvisor" => {
                let mut args = Args::new();
                put(&mut args, "query", Some(slots::extract_query(utterance)));
                vec![PlanItem { step: 1, tool: "search".into(), args }]
            }
            _ => {
                let mut intents = slots::detect_tool_intents(utterance);
                if intents.is_empty() {
                    intents.push(ToolIntent::Search);
                }
                intents
                    .into_iter()
                    .zip(1..)
                    .map(|(i, step)| PlanItem {
                        step,
                        tool: i.tool_id().into(),
                        args: slots::intent_args(i, utterance, home_city),
                    })
                    .collect()
            }
        };
        Ok(items)
    }
}

fn travel_plan(utterance: &str, context: &ContextBundle) -> Result<Vec<PlanItem>> {
    let dest = slots::extract_destination(utterance)
        .ok_or_else(|| Error::PlanValidation("trip request names no destination".into()))?;
    let mut flight = Args::new();
    put(&mut flight, "dest", Some(dest.clone()));
    put(&mut flight, "origin", slots::extract_origin(utterance));
    put(&mut flight, "date", slots::extract_date(utterance));

    let mut activity = Args::new();
    put(&mut activity, "dest", Some(dest.clone()));
    put(&mut activity, "interest", context.profile_value("Hobby").map(str::to_string));

    let mut dining = Args::new();
    put(&mut dining, "dest", Some(dest));
    dining.insert("arrival".into(), StepRef::render(1, Some("arrival")));
    dining.insert("near".into(), StepRef::render(2, Some("selection")));

    let mut items = vec![
        PlanItem { step: 1, tool: "flight_search".into(), args: flight },
        PlanItem { step: 2, tool: "activity_search".into(), args: activity },
        PlanItem { step: 3, tool: "dining_search".into(), args: dining },
    ];
    if let Some(ty) = slots::extract_hotel_type(utterance) {
        let mut hotel = Args::new();
        put(&mut hotel, "type", Some(ty));
        items.push(PlanItem { step: items.len() as u32 + 1, tool: "hotel_book".into(), args: hotel });
    }
    Ok(items)
}

#[async_trait]
impl Planner for TemplatePlanner {
    async fn plan(
        &self,
        task_id: &TaskId,
        request: &str,
        profile: &AgentProfile,
        context: &ContextBundle,
    ) -> Result<TaskGraph> {
        let items = self.build(&profile.profile_id, request, context)?;
        TaskGraph::from_plan_items(task_id.clone(), &items)
    }
}

/// Planner backed by a text-completion model that answers with the routing
/// schema (only its `plan` array is used).
pub struct ModelPlanner {
    backend: Arc<dyn TextBackend>,
    catalog: Vec<String>,
}

impl ModelPlanner {
    pub fn new(backend: Arc<dyn TextBackend>, catalog: Vec<String>) -> Self {
        Self { backend, catalog }
    }
}

#[async_trait]
impl Planner for ModelPlanner {
    async fn plan(
        &self,
        task_id: &TaskId,
        request: &str,
        profile: &AgentProfile,
        context: &ContextBundle,
    ) -> Result<TaskGraph> {
        let profile_lines: Vec<String> = context.profile.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let prompt = format!(
            "You are the {} planner. Tools: {}.\nUser profile: {}\nRequest: {}\nAnswer with JSON only.",
            profile.profile_id,
            self.catalog.join(", "),
            profile_lines.join("; "),
            request
        );
        let raw = self.backend.complete(&prompt).await?;
        let decision = validate_decision(&raw)?;
        let items = decision
            .plan
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::PlanValidation("model returned no plan".into()))?;
        TaskGraph::from_plan_items(task_id.clone(), &items)
    }
}

/// Step ids referenced by an item's arguments.
pub fn referenced_steps(item: &PlanItem) -> BTreeSet<u32> {
    item.args.values().filter_map(StepRef::parse).map(|r| r.step).collect()
}
