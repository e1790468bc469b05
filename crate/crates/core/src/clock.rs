//! Shared simulated time base.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

/// Monotonic simulated clock in nanoseconds. Clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    ns: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(t: Duration) -> Self {
        let c = Self::new();
        c.set(t);
        c
    }

    pub fn now(&self) -> Duration {
        Duration::from_nanos(self.ns.load(Ordering::Acquire))
    }

    pub fn secs(&self) -> f64 {
        self.now().as_secs_f64()
    }

    pub fn advance(&self, dt: Duration) -> Duration {
        let ns = self.ns.fetch_add(dt.as_nanos() as u64, Ordering::AcqRel) + dt.as_nanos() as u64;
        Duration::from_nanos(ns)
    }

    /// Move forward to `t`; never moves backwards.
    pub fn set(&self, t: Duration) {
        self.ns.fetch_max(t.as_nanos() as u64, Ordering::AcqRel);
    }
}
