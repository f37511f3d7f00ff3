//! Wall-clock source. Scripted runs swap in a frozen clock so that every
//! persisted record is reproducible byte for byte.

use std::time::Instant;

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    /// Seconds elapsed since `start`, as this clock sees it.
    fn elapsed_since(&self, start: Instant) -> f64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn elapsed_since(&self, start: Instant) -> f64 {
        start.elapsed().as_secs_f64()
    }
}

/// Always reports the same instant and zero elapsed time.
#[derive(Debug, Clone, Copy)]
pub struct FrozenClock(pub DateTime<Utc>);

impl Default for FrozenClock {
    fn default() -> Self {
        FrozenClock(Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap())
    }
}

impl Clock for FrozenClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }

    fn elapsed_since(&self, _start: Instant) -> f64 {
        0.0
    }
}
