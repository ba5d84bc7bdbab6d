use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augmentation::{Args, ToolFailure, ToolResult, AGENT_TOOL_PREFIX};
use crate::clock::Millis;
use crate::error::{Error, Result};
use crate::ids::TaskId;
use crate::router::PlanItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepState {
    Pending,
    Running,
    Done,
    Failed,
    Skipped,
}

impl StepState {
    pub fn is_terminal(self) -> bool {
        matches!(self, StepState::Done | StepState::Failed | StepState::Skipped)
    }

    pub fn can_become(self, next: StepState) -> bool {
        matches!(
            (self, next),
            (StepState::Pending, StepState::Running)
                | (StepState::Pending, StepState::Skipped)
                | (StepState::Running, StepState::Done)
                | (StepState::Running, StepState::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step_id: u32,
    pub tool: String,
    /// Literal values, or `"$stepN"` / `"$stepN.field"` references to a
    /// predecessor's result, resolved when the step starts.
    pub args: Args,
    pub state: StepState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ToolResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<ToolFailure>,
    #[serde(default)]
    pub started_at: Option<Millis>,
    #[serde(default)]
    pub ended_at: Option<Millis>,
    /// Argument names that were bound from predecessor results.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub bound_args: BTreeSet<String>,
}

impl PlanStep {
    pub fn new(step_id: u32, tool: impl Into<String>, args: Args) -> Self {
        Self {
            step_id,
            tool: tool.into(),
            args,
            state: StepState::Pending,
            result: None,
            failure: None,
            started_at: None,
            ended_at: None,
            bound_args: BTreeSet::new(),
        }
    }

    pub fn transition(&mut self, next: StepState) -> Result<()> {
        if !self.state.can_become(next) {
            return Err(Error::PlanValidation(format!(
                "step {} cannot move from {:?} to {:?}",
                self.step_id, self.state, next
            )));
        }
        self.state = next;
        Ok(())
    }

    pub fn is_delegation(&self) -> bool {
        self.tool.starts_with(AGENT_TOOL_PREFIX)
    }

    pub fn duration(&self) -> Option<Millis> {
        Some(self.ended_at? - self.started_at?)
    }
}

/// A `$stepN[.field]` reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRef {
    pub step: u32,
    pub field: Option<String>,
}

impl StepRef {
    pub fn parse(v: &Value) -> Option<Self> {
        let s = v.as_str()?.strip_prefix("$step")?;
        let (num, field) = match s.split_once('.') {
            Some((n, f)) => (n, Some(f.to_string())),
            None => (s, None),
        };
        Some(StepRef { step: num.parse().ok()?, field })
    }

    pub fn render(step: u32, field: Option<&str>) -> Value {
        match field {
            Some(f) => Value::String(format!("$step{step}.{f}")),
            None => Value::String(format!("$step{step}")),
        }
    }
}

/// Dependency graph of plan steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub task_id: TaskId,
    pub steps: Vec<PlanStep>,
    pub edges: BTreeSet<(u32, u32)>,
}

impl TaskGraph {
    /// Build and validate: at least one step, unique ids, known edge
    /// endpoints, no cycles.
    pub fn new(task_id: TaskId, mut steps: Vec<PlanStep>, edges: BTreeSet<(u32, u32)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::PlanValidation("plan has no steps".into()));
        }
        steps.sort_by_key(|s| s.step_id);
        if let Some(w) = steps.windows(2).find(|w| w[0].step_id == w[1].step_id) {
            return Err(Error::PlanValidation(format!("duplicate step id {}", w[0].step_id)));
        }
        let ids: BTreeSet<u32> = steps.iter().map(|s| s.step_id).collect();
        for (a, b) in &edges {
            if !ids.contains(a) || !ids.contains(b) {
                return Err(Error::PlanValidation(format!("edge {a}->{b} names an unknown step")));
            }
            if a == b {
                return Err(Error::PlanValidation(format!("step {a} depends on itself")));
            }
        }
        let g = TaskGraph { task_id, steps, edges };
        if g.topo_order().len() != g.steps.len() {
            return Err(Error::PlanValidation("plan contains a dependency cycle".into()));
        }
        Ok(g)
    }

    /// Graph from wire plan items; every `$stepN` reference in an argument
    /// becomes an edge N → step.
    pub fn from_plan_items(task_id: TaskId, items: &[PlanItem]) -> Result<Self> {
        let mut edges = BTreeSet::new();
        let steps = items
            .iter()
            .map(|it| {
                for v in it.args.values() {
                    if let Some(r) = StepRef::parse(v) {
                        edges.insert((r.step, it.step));
                    }
                }
                PlanStep::new(it.step, it.tool.clone(), it.args.clone())
            })
            .collect();
        Self::new(task_id, steps, edges)
    }

    pub fn to_plan_items(&self) -> Vec<PlanItem> {
        self.steps.iter().map(|s| PlanItem { step: s.step_id, tool: s.tool.clone(), args: s.args.clone() }).collect()
    }

    /// Every tool must be in the catalog, and every delegation must name a
    /// known profile.
    pub fn validate_tools(
        &self,
        tool_known: impl Fn(&str) -> bool,
        profile_known: impl Fn(&str) -> bool,
    ) -> Result<()> {
        for s in &self.steps {
            let ok = match s.tool.strip_prefix(AGENT_TOOL_PREFIX) {
                Some(p) => profile_known(p),
                None => tool_known(&s.tool),
            };
            if !ok {
                return Err(Error::PlanValidation(format!("step {} uses unknown tool '{}'", s.step_id, s.tool)));
            }
        }
        Ok(())
    }

    pub fn step(&self, id: u32) -> Option<&PlanStep> {
        self.steps.iter().find(|s| s.step_id == id)
    }

    pub fn step_mut(&mut self, id: u32) -> Option<&mut PlanStep> {
        self.steps.iter_mut().find(|s| s.step_id == id)
    }

    pub fn parents(&self, id: u32) -> Vec<u32> {
        self.edges.iter().filter(|(_, b)| *b == id).map(|(a, _)| *a).collect()
    }

    pub fn children(&self, id: u32) -> Vec<u32> {
        self.edges.iter().filter(|(a, _)| *a == id).map(|(_, b)| *b).collect()
    }

    pub fn descendants(&self, id: u32) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        let mut stack = self.children(id);
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                stack.extend(self.children(n));
            }
        }
        out
    }

    /// Kahn's algorithm, smallest ready id first. Shorter than the step list
    /// iff the graph has a cycle.
    pub fn topo_order(&self) -> Vec<u32> {
        let mut indeg: BTreeMap<u32, usize> = self.steps.iter().map(|s| (s.step_id, 0)).collect();
        for (_, b) in &self.edges {
            if let Some(d) = indeg.get_mut(b) {
                *d += 1;
            }
        }
        let mut ready: BinaryHeap<Reverse<u32>> =
            indeg.iter().filter(|(_, d)| **d == 0).map(|(id, _)| Reverse(*id)).collect();
        let mut order = Vec::with_capacity(self.steps.len());
        while let Some(Reverse(n)) = ready.pop() {
            order.push(n);
            for c in self.children(n) {
                let d = indeg.get_mut(&c).expect("validated endpoint");
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        order
    }

    /// Whether some pair of steps has no path between them.
    pub fn has_parallel_steps(&self) -> bool {
        let ids: Vec<u32> = self.steps.iter().map(|s| s.step_id).collect();
        let desc: BTreeMap<u32, BTreeSet<u32>> = ids.iter().map(|&i| (i, self.descendants(i))).collect();
        ids.iter()
            .enumerate()
            .any(|(k, &a)| ids[k + 1..].iter().any(|&b| !desc[&a].contains(&b) && !desc[&b].contains(&a)))
    }

    /// Longest path weight, with each step weighted by `duration(step)`.
    pub fn critical_path(&self, duration: impl Fn(&PlanStep) -> Millis) -> Millis {
        let mut finish: BTreeMap<u32, Millis> = BTreeMap::new();
        for id in self.topo_order() {
            let start = self.parents(id).iter().map(|p| finish[p]).max().unwrap_or(0);
            finish.insert(id, start + duration(self.step(id).expect("step exists")));
        }
        finish.values().copied().max().unwrap_or(0)
    }
}
