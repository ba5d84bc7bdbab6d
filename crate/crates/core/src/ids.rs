//! Identifier newtypes and the generator that mints them.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque session identifier.
    SessionId
);
string_id!(
    /// Slow Track task identifier, unique per engine.
    TaskId
);
string_id!(
    /// Globally unique state-update event identifier.
    EventId
);

impl EventId {
    /// Events are keyed by their task and causal position, which makes a
    /// re-emitted event carry the same id as the original.
    pub fn for_task(task: &TaskId, causal_seq: u64) -> Self {
        Self(format!("{task}#{causal_seq}"))
    }
}

/// Mints session ids. Sequential ids keep benchmark runs replayable; random
/// ids are used by the live service so restarts never collide with logs on
/// disk.
#[derive(Debug)]
pub enum IdGen {
    Sequential { prefix: String, next: AtomicU64 },
    Random,
}

impl IdGen {
    pub fn sequential(prefix: impl Into<String>) -> Self {
        IdGen::Sequential { prefix: prefix.into(), next: AtomicU64::new(1) }
    }

    pub fn random() -> Self {
        IdGen::Random
    }

    pub fn next_id(&self) -> String {
        match self {
            IdGen::Sequential { prefix, next } => {
                let n = next.fetch_add(1, Ordering::Relaxed);
                format!("{prefix}{n:06}")
            }
            IdGen::Random => uuid::Uuid::new_v4().simple().to_string(),
        }
    }
}
