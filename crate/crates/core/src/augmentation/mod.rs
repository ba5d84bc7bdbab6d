//! Tool and sub-agent ecosystem behind one execution interface.
//!
//! Tools are described by a [`ToolDescriptor`] (argument/result schema,
//! latency model, failure rate) and invoked through an [`ExecutionEnvelope`].
//! Sub-agents are reached through a [`DelegationContract`] and run as nested
//! Slow Track tasks, so a plan step may name either.

mod builtin;
mod delegation;
mod descriptor;
mod envelope;
mod http;
mod registry;
pub mod retrieval;

pub use builtin::{builtin_descriptors, BuiltinTool, MEDIA_TOOLS};
pub use delegation::{Delegator, DelegatorConfig, AGENT_TOOL_PREFIX};
pub use descriptor::{ArgSpec, Args, LatencyModel, ToolDescriptor, ValueType};
pub use envelope::{DelegationContract, ExecutionEnvelope, FailureKind, SubAgentResult, ToolFailure, ToolResult};
pub use http::HttpToolHandler;
pub use registry::{seeded_rng, stable_hash, InvokeOptions, ToolHandler, ToolRegistry};
pub use retrieval::{retrieve, CorpusDoc, Snippet, Source};
