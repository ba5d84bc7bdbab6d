use std::future::Future;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::Value;

use super::descriptor::ArgSpec;
use super::envelope::{DelegationContract, FailureKind, SubAgentResult, ToolFailure};
use crate::clock::Clock;
use crate::slow_track::TaskStatus;

/// Plan steps whose tool starts with this prefix are delegations to the
/// named agent profile, e.g. `agent:FoodExpert`.
pub const AGENT_TOOL_PREFIX: &str = "agent:";

#[derive(Debug, Clone, Copy)]
pub struct DelegatorConfig {
    /// Deepest permitted nesting; a top-level task is depth 0.
    pub depth_cap: u32,
    /// Maximum number of live delegated sub-tasks across the engine.
    pub global_cap: usize,
}

/// Admission control and result coercion for sub-agent delegation.
pub struct Delegator {
    cfg: DelegatorConfig,
    live: AtomicUsize,
    peak: AtomicUsize,
}

struct Slot<'a>(&'a AtomicUsize);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Delegator {
    pub fn new(cfg: DelegatorConfig) -> Self {
        Self { cfg, live: AtomicUsize::new(0), peak: AtomicUsize::new(0) }
    }

    pub fn config(&self) -> DelegatorConfig {
        self.cfg
    }

    pub fn live(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously live sub-tasks observed.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn admit(&self) -> Option<Slot<'_>> {
        let mut cur = self.live.load(Ordering::SeqCst);
        loop {
            if cur >= self.cfg.global_cap {
                return None;
            }
            match self.live.compare_exchange(cur, cur + 1, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => {
                    self.peak.fetch_max(cur + 1, Ordering::SeqCst);
                    return Some(Slot(&self.live));
                }
                Err(now) => cur = now,
            }
        }
    }

    /// Run `subtask` as the delegate at nesting `depth` under the contract's
    /// deadline. The returned value must conform to the expected schema or the
    /// delegation is reported as a failure.
    pub async fn delegate<F>(
        &self,
        contract: &DelegationContract,
        depth: u32,
        clock: &Clock,
        subtask: F,
    ) -> Result<SubAgentResult, ToolFailure>
    where
        F: Future<Output = SubAgentResult>,
    {
        if contract.deadline_ms == 0 {
            return Err(ToolFailure::new(FailureKind::Refused, "contract deadline must be positive", 0));
        }
        if depth > self.cfg.depth_cap {
            return Err(ToolFailure::new(
                FailureKind::Refused,
                format!(
                    "delegation to {} refused: depth {depth} exceeds cap {}",
                    contract.delegate_profile_id, self.cfg.depth_cap
                ),
                0,
            ));
        }
        let Some(_slot) = self.admit() else {
            return Err(ToolFailure::new(
                FailureKind::Refused,
                format!("delegation refused: {} live sub-tasks", self.cfg.global_cap),
                0,
            ));
        };
        let start = clock.now_ms();
        let result =
            tokio::time::timeout(Duration::from_millis(contract.deadline_ms), subtask).await.map_err(|_| {
                ToolFailure::new(
                    FailureKind::Timeout,
                    format!("{} missed its {} ms deadline", contract.delegate_profile_id, contract.deadline_ms),
                    clock.now_ms() - start,
                )
            })?;
        if result.status == TaskStatus::Failed || result.status == TaskStatus::Abandoned {
            return Err(ToolFailure::new(
                FailureKind::Backend,
                format!("{} could not complete: {}", contract.delegate_profile_id, result.deliverable),
                clock.now_ms() - start,
            ));
        }
        conforms(&contract.expected_result_schema, &result.value)
            .map_err(|m| ToolFailure::new(FailureKind::SchemaMismatch, m, clock.now_ms() - start))?;
        Ok(result)
    }
}

/// Required fields present with the declared types; extra fields allowed.
fn conforms(schema: &std::collections::BTreeMap<String, ArgSpec>, value: &Value) -> Result<(), String> {
    let obj = value.as_object().ok_or("delegate result is not an object")?;
    for (name, spec) in schema {
        match obj.get(name) {
            Some(v) if spec.ty.accepts(v) => {}
            Some(_) => return Err(format!("delegate result field '{name}' has the wrong type")),
            None if spec.required => return Err(format!("delegate result lacks '{name}'")),
            None => {}
        }
    }
    Ok(())
}
