//! Injectable time source.
//!
//! Every timestamp the engine records comes from a [`Clock`], so fixture runs
//! can produce byte-identical trajectories.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

/// Wall-clock time.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: every call to `now` returns the current instant and
/// then advances it by a fixed step.
#[derive(Debug)]
pub struct SteppingClock {
    millis: AtomicI64,
    step_millis: i64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step_millis: i64) -> Self {
        Self {
            millis: AtomicI64::new(start.timestamp_millis()),
            step_millis,
        }
    }

    /// Clock starting at `start` that never advances on its own.
    pub fn frozen(start: DateTime<Utc>) -> Self {
        Self::new(start, 0)
    }

    pub fn advance(&self, millis: i64) {
        self.millis.fetch_add(millis, Ordering::SeqCst);
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let ms = self.millis.fetch_add(self.step_millis, Ordering::SeqCst);
        Utc.timestamp_millis_opt(ms)
            .single()
            .expect("clock value out of range")
    }
}

/// Fixed epoch used by fixture profiles: 2025-06-01T09:00:00Z.
pub fn fixture_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 6, 1, 9, 0, 0).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stepping_clock_advances_per_call() {
        let clock = SteppingClock::new(fixture_epoch(), 1000);
        let a = clock.now();
        let b = clock.now();
        assert_eq!((b - a).num_milliseconds(), 1000);
    }

    #[test]
    fn frozen_clock_only_moves_on_advance() {
        let clock = SteppingClock::frozen(fixture_epoch());
        assert_eq!(clock.now(), clock.now());
        clock.advance(5);
        assert_eq!(clock.now(), fixture_epoch() + chrono::Duration::milliseconds(5));
    }
}
