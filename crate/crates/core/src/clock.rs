//! Millisecond clock backed by tokio time.
//!
//! Under a paused runtime (`tokio::time::pause`, or `start_paused` in tests)
//! tokio advances straight to the next due timer whenever every task is idle,
//! which turns the engine into a discrete-event simulation: latencies are
//! charged exactly and runs are replayable. Under a normal runtime the same
//! code runs against the wall clock.

use std::time::Duration;

use tokio::time::Instant;

pub type Millis = u64;

#[derive(Debug, Clone, Copy)]
pub struct Clock {
    origin: Instant,
    base_ms: Millis,
}

impl Clock {
    /// A clock reading 0 at construction. Intended for paused runtimes.
    pub fn virtual_start() -> Self {
        Self { origin: Instant::now(), base_ms: 0 }
    }

    /// A clock reading unix epoch milliseconds.
    pub fn wall() -> Self {
        let base_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as Millis)
            .unwrap_or(0);
        Self { origin: Instant::now(), base_ms }
    }

    pub fn now_ms(&self) -> Millis {
        self.base_ms + Instant::now().duration_since(self.origin).as_millis() as Millis
    }

    pub fn instant_at(&self, at_ms: Millis) -> Instant {
        self.origin + Duration::from_millis(at_ms.saturating_sub(self.base_ms))
    }

    pub async fn sleep_ms(&self, ms: Millis) {
        if ms > 0 {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
    }

    pub async fn sleep_until_ms(&self, at_ms: Millis) {
        tokio::time::sleep_until(self.instant_at(at_ms)).await;
    }
}
