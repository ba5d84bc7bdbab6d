use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::RwLock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::builtin::{builtin_descriptors, BuiltinTool};
use super::descriptor::ToolDescriptor;
use super::envelope::{ExecutionEnvelope, FailureKind, ToolFailure, ToolResult};
use super::http::HttpToolHandler;
use crate::clock::{Clock, Millis};
use crate::error::{Error, Result};

/// Computes a tool's result value. Latency and injected failures are applied
/// by the registry, not the handler.
#[async_trait]
pub trait ToolHandler: Send + Sync {
    async fn call(&self, envelope: &ExecutionEnvelope) -> std::result::Result<Value, String>;
}

struct RegisteredTool {
    descriptor: ToolDescriptor,
    handler: Arc<dyn ToolHandler>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InvokeOptions {
    pub run_seed: u64,
    /// Relative deadline for the call; `None` waits indefinitely.
    pub timeout_ms: Option<Millis>,
}

/// Read-mostly catalog of invocable tools.
#[derive(Default)]
pub struct ToolRegistry {
    tools: RwLock<BTreeMap<String, RegisteredTool>>,
}

/// Deterministic generator for one invocation, independent of the order in
/// which concurrent invocations happen to run.
pub fn seeded_rng(run_seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

/// Stable 64-bit hash of a string (first eight bytes of its SHA-256).
pub fn stable_hash(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding every simulated built-in tool with its default
    /// latency model.
    pub fn with_builtins() -> Self {
        let reg = Self::new();
        for d in builtin_descriptors() {
            reg.register(d).expect("builtin descriptors are valid");
        }
        reg
    }

    pub fn register_tool(&self, descriptor: ToolDescriptor, handler: Arc<dyn ToolHandler>) -> Result<()> {
        descriptor.validate()?;
        let mut tools = self.tools.write();
        if tools.contains_key(&descriptor.tool_id) {
            return Err(Error::Registration(format!("tool '{}' is already registered", descriptor.tool_id)));
        }
        tools.insert(descriptor.tool_id.clone(), RegisteredTool { descriptor, handler });
        Ok(())
    }

    /// Register a descriptor with the handler implied by it: an HTTP client
    /// when it names an endpoint, the simulated built-in of the same name
    /// otherwise, or a generic echo handler.
    pub fn register(&self, descriptor: ToolDescriptor) -> Result<()> {
        let handler: Arc<dyn ToolHandler> = match &descriptor.endpoint {
            Some(url) => Arc::new(HttpToolHandler::new(url.clone())),
            None => Arc::new(BuiltinTool::for_descriptor(&descriptor)),
        };
        self.register_tool(descriptor, handler)
    }

    /// Replace the latency model of a registered tool.
    pub fn set_latency(&self, tool_id: &str, model: super::LatencyModel) -> Result<()> {
        let mut tools = self.tools.write();
        let t = tools.get_mut(tool_id).ok_or_else(|| Error::Registration(format!("unknown tool '{tool_id}'")))?;
        t.descriptor.latency_model = model;
        t.descriptor.validate()
    }

    pub fn load_catalog(&self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let descriptors: Vec<ToolDescriptor> = serde_json::from_str(&text)?;
        let n = descriptors.len();
        for d in descriptors {
            self.register(d)?;
        }
        Ok(n)
    }

    pub fn catalog(&self) -> Vec<ToolDescriptor> {
        self.tools.read().values().map(|t| t.descriptor.clone()).collect()
    }

    pub fn contains(&self, tool_id: &str) -> bool {
        self.tools.read().contains_key(tool_id)
    }

    pub fn descriptor(&self, tool_id: &str) -> Option<ToolDescriptor> {
        self.tools.read().get(tool_id).map(|t| t.descriptor.clone())
    }

    pub fn len(&self) -> usize {
        self.tools.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Invoke a tool under the virtual clock.
    ///
    /// Argument validation happens before anything else, so an invalid call
    /// fails at zero elapsed time. Latency and the injected-failure draw come
    /// from a generator seeded by `(run_seed, envelope_id, tool_id)`.
    pub async fn invoke(
        &self,
        envelope: &ExecutionEnvelope,
        clock: &Clock,
        opts: InvokeOptions,
    ) -> std::result::Result<ToolResult, ToolFailure> {
        let (descriptor, handler) = {
            let tools = self.tools.read();
            let t = tools.get(&envelope.tool_id).ok_or_else(|| {
                ToolFailure::new(FailureKind::UnknownTool, format!("unknown tool '{}'", envelope.tool_id), 0)
            })?;
            (t.descriptor.clone(), t.handler.clone())
        };
        descriptor.validate_args(&envelope.args).map_err(|m| ToolFailure::new(FailureKind::Validity, m, 0))?;

        let mut rng = seeded_rng(opts.run_seed, &format!("{}\u{1f}{}", envelope.envelope_id, envelope.tool_id));
        let latency = descriptor.latency_model.sample(&mut rng);
        let injected = rng.random::<f64>() < descriptor.failure_rate;

        let start = clock.now_ms();
        let work = async {
            match latency {
                Some(ms) => clock.sleep_ms(ms).await,
                None => std::future::pending::<()>().await,
            }
            if injected {
                return Err(ToolFailure::new(
                    FailureKind::Injected,
                    format!("{} failed (simulated)", descriptor.tool_id),
                    clock.now_ms() - start,
                ));
            }
            handler.call(envelope).await.map_err(|m| ToolFailure::new(FailureKind::Backend, m, clock.now_ms() - start))
        };
        let value = match opts.timeout_ms {
            Some(t) => match tokio::time::timeout(Duration::from_millis(t), work).await {
                Ok(r) => r?,
                Err(_) => {
                    return Err(ToolFailure::new(
                        FailureKind::Timeout,
                        format!("{} exceeded {t} ms", descriptor.tool_id),
                        clock.now_ms() - start,
                    ))
                }
            },
            None => work.await?,
        };
        let now = clock.now_ms();
        descriptor
            .validate_result(&value)
            .map_err(|m| ToolFailure::new(FailureKind::SchemaMismatch, m, now - start))?;
        Ok(ToolResult {
            envelope_id: envelope.envelope_id.clone(),
            tool_id: envelope.tool_id.clone(),
            summary: summary_of(&value),
            value,
            latency_ms: now - start,
            completed_at: now,
        })
    }
}

pub(crate) fn summary_of(value: &Value) -> String {
    match value.get("summary").and_then(Value::as_str) {
        Some(s) => s.to_string(),
        None => value.to_string(),
    }
}
