//! Dependency-driven execution of a task graph under the virtual clock.

use std::collections::{BTreeMap, BTreeSet};
use std::pin::Pin;
use std::sync::Arc;

use futures::future::BoxFuture;
use futures::stream::{FuturesUnordered, StreamExt};
use futures::Future;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::clarify::{detect_ambiguity, question_for, rerank, ClarificationOutcome, Clarifier, NoClarifier};
use super::constraints::{apply_constraints, violated_by, Candidate, Constraint, FusionRecord};
use super::generator::{Deliverable, Generator, ModalityHint};
use super::graph::{PlanStep, StepRef, StepState, TaskGraph};
use super::planner::Planner;
use super::profiles::{dispatch, ProfileRegistry};
use super::TaskStatus;
use crate::augmentation::{
    ArgSpec, Args, DelegationContract, Delegator, ExecutionEnvelope, FailureKind, InvokeOptions, SubAgentResult,
    ToolFailure, ToolRegistry, ToolResult, AGENT_TOOL_PREFIX, MEDIA_TOOLS,
};
use crate::bus::{EventKind, EventSink, NullSink, StepView};
use crate::clock::{Clock, Millis};
use crate::ids::TaskId;
use crate::router::{Mode, RoutingDecision};
use crate::state::{ContextBundle, TraceItem};

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    /// Ready steps running at once within one task.
    pub concurrency: usize,
    pub step_timeout_ms: Millis,
    pub ambiguity_min_candidates: usize,
    pub ambiguity_margin: f64,
    pub run_seed: u64,
    pub generalist_profile: String,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            concurrency: 4,
            step_timeout_ms: 8_000,
            ambiguity_min_candidates: 5,
            ambiguity_margin: 0.05,
            run_seed: 42,
            generalist_profile: "Generalist".into(),
        }
    }
}

/// Destination of working-memory trace items.
pub trait TraceWriter: Send + Sync {
    fn write(&self, item: TraceItem);
}

pub struct NullTraces;

impl TraceWriter for NullTraces {
    fn write(&self, _: TraceItem) {}
}

/// Per-task environment: where events and traces go, who answers
/// clarifications, and the memory-derived constraints.
pub struct TaskScope<'a> {
    pub task_id: TaskId,
    pub sink: &'a dyn EventSink,
    pub clarifier: &'a dyn Clarifier,
    pub traces: &'a dyn TraceWriter,
    pub constraints: Vec<Constraint>,
    pub context: ContextBundle,
    pub context_slice: Vec<String>,
    /// Delegation nesting; top-level tasks are 0.
    pub depth: u32,
}

impl<'a> TaskScope<'a> {
    /// Scope that discards events and traces and cannot ask the user.
    pub fn detached(task_id: TaskId) -> TaskScope<'static> {
        TaskScope {
            task_id,
            sink: &NullSink,
            clarifier: &NoClarifier,
            traces: &NullTraces,
            constraints: Vec::new(),
            context: ContextBundle::default(),
            context_slice: Vec::new(),
            depth: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub step_id: u32,
    pub summary: String,
}

/// Results written back as steps finish, in completion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub task_id: TaskId,
    pub entries: Vec<ContextEntry>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub step_id: u32,
    pub tool: String,
    /// Arguments as invoked, minus those bound from predecessor results.
    pub args: Args,
    pub at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationRecord {
    pub step_id: u32,
    pub question: String,
    pub answer: Option<String>,
    pub args_before: Args,
    pub args_after: Args,
    pub asked_at: Millis,
    pub resolved_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub task_id: TaskId,
    pub profile_id: Option<String>,
    pub graph: Option<TaskGraph>,
    pub plan_error: Option<String>,
    pub context: TaskContext,
    pub invocations: Vec<Invocation>,
    pub fusions: Vec<FusionRecord>,
    pub clarifications: Vec<ClarificationRecord>,
    pub status: TaskStatus,
    pub started_at: Millis,
    pub ended_at: Millis,
}

impl ExecutionTrace {
    fn planning_failure(task_id: TaskId, error: String, at: Millis) -> Self {
        Self {
            context: TaskContext { task_id: task_id.clone(), entries: Vec::new(), constraints: Vec::new() },
            task_id,
            profile_id: None,
            graph: None,
            plan_error: Some(error),
            invocations: Vec::new(),
            fusions: Vec::new(),
            clarifications: Vec::new(),
            status: TaskStatus::Failed,
            started_at: at,
            ended_at: at,
        }
    }

    /// Step ids by terminal state: (done, failed, skipped).
    pub fn census(&self) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
        let mut out = (Vec::new(), Vec::new(), Vec::new());
        if let Some(g) = &self.graph {
            for s in &g.steps {
                match s.state {
                    StepState::Done => out.0.push(s.step_id),
                    StepState::Failed => out.1.push(s.step_id),
                    StepState::Skipped => out.2.push(s.step_id),
                    _ => {}
                }
            }
        }
        out
    }

    pub fn makespan(&self) -> Millis {
        self.ended_at - self.started_at
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRequest {
    pub utterance: String,
    pub decision: Option<RoutingDecision>,
    /// Skip dispatch and plan under this profile.
    pub profile: Option<String>,
}

impl TaskRequest {
    pub fn new(utterance: impl Into<String>) -> Self {
        Self { utterance: utterance.into(), decision: None, profile: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub trace: ExecutionTrace,
    pub deliverable: Deliverable,
}

impl TaskOutcome {
    fn into_subagent_result(self, contract_id: String, profile: String) -> SubAgentResult {
        let mut value = serde_json::Map::new();
        value.insert("summary".into(), json!(self.deliverable.text));
        value.insert("status".into(), json!(self.trace.status));
        let mut steps = serde_json::Map::new();
        if let Some(g) = &self.trace.graph {
            for s in g.steps.iter().filter(|s| s.state == StepState::Done) {
                let r = s.result.as_ref().expect("done step has a result");
                steps.insert(s.step_id.to_string(), json!(r.summary));
                for key in ["candidates", "selection"] {
                    if let Some(v) = r.value.get(key) {
                        value.insert(key.into(), v.clone());
                    }
                }
            }
        }
        value.insert("steps".into(), Value::Object(steps));
        SubAgentResult {
            contract_id,
            delegate_profile_id: profile,
            status: self.trace.status,
            value: Value::Object(value),
            deliverable: self.deliverable.text,
        }
    }
}

struct StepOutcome {
    result: Result<ToolResult, ToolFailure>,
    args: Args,
    fusion: Option<FusionRecord>,
    clarification: Option<ClarificationRecord>,
}

type StepFuture<'a> = Pin<Box<dyn Future<Output = (u32, StepOutcome)> + Send + 'a>>;

/// Dispatch, plan, execute and generate.
pub struct Executor {
    pub registry: Arc<ToolRegistry>,
    pub profiles: Arc<ProfileRegistry>,
    pub planner: Arc<dyn Planner>,
    pub generator: Arc<dyn Generator>,
    pub delegator: Arc<Delegator>,
    pub clock: Clock,
    pub cfg: ExecutorConfig,
}

fn resolve_args(step: &PlanStep, graph: &TaskGraph) -> (Args, BTreeSet<String>) {
    let mut out = Args::new();
    let mut bound = BTreeSet::new();
    for (k, v) in &step.args {
        match StepRef::parse(v) {
            Some(r) => {
                let result = graph.step(r.step).and_then(|s| s.result.as_ref());
                let resolved = match (result, r.field.as_deref()) {
                    (Some(res), Some(f)) => {
                        res.value.get(f).cloned().unwrap_or_else(|| Value::String(res.summary.clone()))
                    }
                    (Some(res), None) => Value::String(res.summary.clone()),
                    (None, _) => Value::Null,
                };
                out.insert(k.clone(), resolved);
                bound.insert(k.clone());
            }
            None => {
                out.insert(k.clone(), v.clone());
            }
        }
    }
    (out, bound)
}

fn step_views(graph: &TaskGraph) -> Vec<StepView> {
    graph
        .steps
        .iter()
        .map(|s| StepView {
            step_id: s.step_id,
            tool: s.tool.clone(),
            state: s.state,
            depends_on: graph.parents(s.step_id),
        })
        .collect()
}

fn status_of(graph: &TaskGraph) -> TaskStatus {
    let abandoned = graph.steps.iter().any(|s| s.failure.as_ref().is_some_and(|f| f.kind == FailureKind::Abandoned));
    let done = graph.steps.iter().filter(|s| s.state == StepState::Done).count();
    if abandoned {
        TaskStatus::Abandoned
    } else if done == graph.steps.len() {
        TaskStatus::Completed
    } else if done == 0 {
        TaskStatus::Failed
    } else {
        TaskStatus::PartialFailure
    }
}

impl Executor {
    /// Build the graph for a request: the decision's skeleton in tool mode,
    /// otherwise a plan from the dispatched profile.
    pub async fn plan_for(&self, req: &TaskRequest, scope: &TaskScope<'_>) -> crate::Result<(TaskGraph, String)> {
        let skeleton = req
            .decision
            .as_ref()
            .filter(|d| d.mode == Mode::Tool)
            .and_then(|d| d.plan.clone())
            .filter(|p| !p.is_empty());
        let (graph, profile_id) = match skeleton {
            Some(items) => {
                (TaskGraph::from_plan_items(scope.task_id.clone(), &items)?, self.cfg.generalist_profile.clone())
            }
            None => {
                let named = req
                    .profile
                    .clone()
                    .or_else(|| req.decision.as_ref().and_then(|d| d.routing_target.clone()))
                    .and_then(|p| self.profiles.get(&p).cloned());
                let profile = match named {
                    Some(p) => p,
                    None => dispatch(&req.utterance, &self.profiles, &self.cfg.generalist_profile)?,
                };
                let g = self.planner.plan(&scope.task_id, &req.utterance, &profile, &scope.context).await?;
                (g, profile.profile_id)
            }
        };
        graph.validate_tools(|t| self.registry.contains(t), |p| self.profiles.get(p).is_some())?;
        Ok((graph, profile_id))
    }

    pub fn run_task<'a, 'b: 'a>(
        &'a self,
        req: &'a TaskRequest,
        scope: &'a TaskScope<'b>,
    ) -> BoxFuture<'a, TaskOutcome> {
        Box::pin(async move {
            let started = self.clock.now_ms();
            let mut trace = match self.plan_for(req, scope).await {
                Ok((graph, profile)) => {
                    let mut t = self.execute(graph, scope).await;
                    t.profile_id = Some(profile);
                    t
                }
                Err(e) => ExecutionTrace::planning_failure(scope.task_id.clone(), e.to_string(), started),
            };
            trace.started_at = started;
            let hint = ModalityHint::for_trace(&trace);
            let deliverable = self.generator.generate(&trace, hint).await;
            TaskOutcome { trace, deliverable }
        })
    }

    /// Run every step once its parents are done, up to the concurrency cap.
    /// A failed step's descendants are skipped; its siblings continue.
    pub async fn execute(&self, mut graph: TaskGraph, scope: &TaskScope<'_>) -> ExecutionTrace {
        let started = self.clock.now_ms();
        let mut ctx =
            TaskContext { task_id: scope.task_id.clone(), entries: Vec::new(), constraints: scope.constraints.clone() };
        let mut invocations = Vec::new();
        let mut fusions = Vec::new();
        let mut clarifications = Vec::new();
        scope.sink.emit(EventKind::Progress, json!({"phase": "planned", "steps": step_views(&graph)}));

        let mut running: FuturesUnordered<StepFuture<'_>> = FuturesUnordered::new();
        loop {
            let ready: Vec<u32> = graph
                .topo_order()
                .into_iter()
                .filter(|id| {
                    graph.step(*id).is_some_and(|s| s.state == StepState::Pending)
                        && graph.parents(*id).iter().all(|p| graph.step(*p).is_some_and(|s| s.state == StepState::Done))
                })
                .collect();
            for id in ready {
                if running.len() >= self.cfg.concurrency.max(1) {
                    break;
                }
                let now = self.clock.now_ms();
                let (args, bound) = resolve_args(graph.step(id).expect("ready step"), &graph);
                let step = graph.step_mut(id).expect("ready step");
                step.transition(StepState::Running).expect("pending step can start");
                step.started_at = Some(now);
                step.args = args.clone();
                step.bound_args = bound.clone();
                let tool = step.tool.clone();
                invocations.push(Invocation {
                    step_id: id,
                    tool: tool.clone(),
                    args: args
                        .iter()
                        .filter(|(k, _)| !bound.contains(*k))
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect(),
                    at: now,
                });
                scope.sink.emit(
                    EventKind::Progress,
                    json!({"phase": "step_started", "step_id": id, "tool": tool, "state": StepState::Running}),
                );
                running.push(Box::pin(async move {
                    let out = self.run_step(scope, id, tool, args).await;
                    (id, out)
                }));
            }
            let Some((id, out)) = running.next().await else {
                break;
            };
            let now = self.clock.now_ms();
            let step = graph.step_mut(id).expect("running step");
            step.ended_at = Some(now);
            step.args = out.args;
            let (state, summary, payload) = match out.result {
                Ok(r) => {
                    let summary = r.summary.clone();
                    let payload = json!({"tool": step.tool, "args": step.args, "result": r.value});
                    step.result = Some(r);
                    (StepState::Done, summary, payload)
                }
                Err(f) => {
                    let summary = format!("failed: {}", f.message);
                    let payload = json!({"tool": step.tool, "args": step.args, "error": f});
                    step.failure = Some(f);
                    (StepState::Failed, summary, payload)
                }
            };
            step.transition(state).expect("running step can finish");
            let tool = step.tool.clone();
            let artifact = step
                .result
                .as_ref()
                .filter(|_| MEDIA_TOOLS.contains(&tool.as_str()))
                .map(|r| json!({"step_id": id, "artifact": r.value.get("artifact"), "summary": r.summary}));
            fusions.extend(out.fusion);
            clarifications.extend(out.clarification);
            ctx.entries.push(ContextEntry { step_id: id, summary: summary.clone() });
            scope.traces.write(TraceItem::new(
                Some(scope.task_id.clone()),
                Some(id),
                serde_json::to_string_pretty(&payload).expect("json value serializes"),
            ));
            scope.sink.emit(
                EventKind::Progress,
                json!({"phase": "step_finished", "step_id": id, "tool": tool, "state": state, "summary": summary}),
            );
            if let Some(a) = artifact {
                scope.sink.emit(EventKind::Artifact, a);
            }
            if state == StepState::Failed {
                for d in graph.descendants(id) {
                    let s = graph.step_mut(d).expect("descendant exists");
                    if s.state == StepState::Pending {
                        s.transition(StepState::Skipped).expect("pending step can be skipped");
                        scope.sink.emit(
                            EventKind::Progress,
                            json!({"phase": "step_finished", "step_id": d, "tool": s.tool, "state": StepState::Skipped}),
                        );
                    }
                }
            }
        }

        let status = status_of(&graph);
        ExecutionTrace {
            task_id: scope.task_id.clone(),
            profile_id: None,
            graph: Some(graph),
            plan_error: None,
            context: ctx,
            invocations,
            fusions,
            clarifications,
            status,
            started_at: started,
            ended_at: self.clock.now_ms(),
        }
    }

    async fn run_step(&self, scope: &TaskScope<'_>, step_id: u32, tool: String, mut args: Args) -> StepOutcome {
        let envelope_id = format!("{}/s{step_id}", scope.task_id);
        let result = match tool.strip_prefix(AGENT_TOOL_PREFIX) {
            Some(profile) => self.delegate_step(scope, step_id, &envelope_id, profile, &args).await,
            None => {
                let env = ExecutionEnvelope {
                    envelope_id,
                    tool_id: tool.clone(),
                    args: args.clone(),
                    context_slice: scope.context_slice.clone(),
                    issued_at: self.clock.now_ms(),
                };
                let opts = InvokeOptions { run_seed: self.cfg.run_seed, timeout_ms: Some(self.cfg.step_timeout_ms) };
                self.registry.invoke(&env, &self.clock, opts).await
            }
        };
        let mut result = match result {
            Ok(r) => r,
            Err(f) => return StepOutcome { result: Err(f), args, fusion: None, clarification: None },
        };
        let Some(cands) = Candidate::list_from(&result.value) else {
            return StepOutcome { result: Ok(result), args, fusion: None, clarification: None };
        };

        let kept = apply_constraints(&cands, &scope.constraints);
        let fusion = (kept.len() != cands.len()).then(|| FusionRecord {
            step_id,
            constraints: scope.constraints.clone(),
            kept: kept.iter().map(|c| c.name.clone()).collect(),
            removed: cands
                .iter()
                .filter_map(|c| violated_by(c, &scope.constraints).map(|k| (c.name.clone(), k.to_string())))
                .collect(),
        });
        let mut chosen = kept.clone();
        let mut clarification = None;
        if let Some(amb) =
            detect_ambiguity(cands.len(), &kept, self.cfg.ambiguity_min_candidates, self.cfg.ambiguity_margin)
        {
            let listed = if kept.is_empty() { &cands } else { &kept };
            let names: Vec<String> = scope.constraints.iter().map(|c| c.to_string()).collect();
            let question = question_for(&amb, listed, &names);
            let options: Vec<&str> = listed.iter().map(|c| c.name.as_str()).collect();
            scope
                .sink
                .emit(EventKind::Clarification, json!({"step_id": step_id, "question": question, "options": options}));
            let asked_at = self.clock.now_ms();
            let args_before = args.clone();
            match scope.clarifier.ask(&scope.task_id, step_id, &question).await {
                ClarificationOutcome::Answered(answer) => {
                    args.insert("clarification".into(), Value::String(answer.clone()));
                    chosen = rerank(listed, &answer);
                    scope.sink.emit(
                        EventKind::Progress,
                        json!({"phase": "step_resumed", "step_id": step_id, "state": StepState::Running}),
                    );
                    clarification = Some(ClarificationRecord {
                        step_id,
                        question,
                        answer: Some(answer),
                        args_before,
                        args_after: args.clone(),
                        asked_at,
                        resolved_at: self.clock.now_ms(),
                    });
                }
                ClarificationOutcome::Abandoned => {
                    let record = ClarificationRecord {
                        step_id,
                        question,
                        answer: None,
                        args_after: args.clone(),
                        args_before,
                        asked_at,
                        resolved_at: self.clock.now_ms(),
                    };
                    let failure = ToolFailure::new(
                        FailureKind::Abandoned,
                        "clarification went unanswered",
                        self.clock.now_ms() - asked_at,
                    );
                    return StepOutcome { result: Err(failure), args, fusion, clarification: Some(record) };
                }
            }
        }

        if fusion.is_some() || clarification.is_some() {
            let selection = chosen.first().map(|c| c.name.clone());
            let mut summary = match &selection {
                Some(s) => format!("Selected {s}"),
                None => "No option fits".to_string(),
            };
            if let Some(f) = &fusion {
                let why: Vec<String> = f.removed.iter().map(|(n, r)| format!("{n}: user {r}")).collect();
                summary.push_str(&format!(" (excluded {})", why.join("; ")));
            }
            if let Value::Object(obj) = &mut result.value {
                obj.insert("candidates".into(), serde_json::to_value(&chosen).unwrap_or(Value::Null));
                obj.insert("selection".into(), selection.map_or(Value::Null, Value::String));
                obj.insert("summary".into(), Value::String(summary.clone()));
            }
            result.summary = summary;
        }
        StepOutcome { result: Ok(result), args, fusion, clarification }
    }

    async fn delegate_step(
        &self,
        scope: &TaskScope<'_>,
        step_id: u32,
        envelope_id: &str,
        profile: &str,
        args: &Args,
    ) -> Result<ToolResult, ToolFailure> {
        let statement = match args.get("task").and_then(Value::as_str) {
            Some(t) => t.to_string(),
            None => serde_json::to_string(args).unwrap_or_default(),
        };
        let expected: BTreeMap<String, ArgSpec> =
            args.get("expect").and_then(|v| serde_json::from_value(v.clone()).ok()).unwrap_or_else(|| {
                [("summary".to_string(), ArgSpec::required(crate::augmentation::ValueType::String))].into()
            });
        let contract = DelegationContract {
            contract_id: envelope_id.to_string(),
            delegate_profile_id: profile.to_string(),
            task_statement: statement.clone(),
            expected_result_schema: expected,
            deadline_ms: self.cfg.step_timeout_ms,
        };
        let nested = TaskScope {
            task_id: TaskId::new(format!("{}/{step_id}", scope.task_id)),
            sink: &NullSink,
            clarifier: &NoClarifier,
            traces: scope.traces,
            constraints: scope.constraints.clone(),
            context: scope.context.clone(),
            context_slice: scope.context_slice.clone(),
            depth: scope.depth + 1,
        };
        let req = TaskRequest { utterance: statement, decision: None, profile: Some(profile.to_string()) };
        let start = self.clock.now_ms();
        let sub = async {
            let out = self.run_task(&req, &nested).await;
            out.into_subagent_result(contract.contract_id.clone(), profile.to_string())
        };
        let r = self.delegator.delegate(&contract, nested.depth, &self.clock, sub).await?;
        let now = self.clock.now_ms();
        Ok(ToolResult {
            envelope_id: envelope_id.to_string(),
            tool_id: format!("{AGENT_TOOL_PREFIX}{profile}"),
            summary: r.deliverable.clone(),
            value: r.value,
            latency_ms: now - start,
            completed_at: now,
        })
    }
}
