//! Dual-track conversational orchestration engine.
//!
//! A turn enters through the [`perception`] gateway, is routed by the
//! [`router`], and answered on the Fast Track ([`fast_track`]) inside a hard
//! time-to-first-token budget. Tool and agent requests continue on the Slow
//! Track ([`slow_track`]): dispatch, plan, execute, generate. Results flow back
//! through the [`bus`] and are integrated exactly once into the session
//! transcript owned by [`state`]. The [`evolution`] pipeline judges, folds and
//! distills finished episodes.
//!
//! All latencies are charged to a [`clock::Clock`] backed by tokio time, so
//! running under a paused runtime gives an exact discrete-event simulation.

pub mod augmentation;
pub mod backend;
pub mod bus;
pub mod clock;
pub mod config;
pub mod engine;
pub mod error;
pub mod evolution;
pub mod fast_track;
pub mod ids;
pub mod perception;
pub mod router;
pub mod slow_track;
pub mod state;
pub mod text;

pub use clock::{Clock, Millis};
pub use config::{EngineConfig, PerceptionMode};
pub use engine::{Engine, EngineBuilder, TurnReceipt};
pub use error::{Error, Result};
pub use ids::{EventId, IdGen, SessionId, TaskId};
