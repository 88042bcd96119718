//! Time sources. The simulated clock makes transcripts and traces reproducible.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    /// Wall-clock UTC at millisecond precision, never decreasing.
    fn now(&self) -> DateTime<Utc>;

    /// Milliseconds on a monotonic scale, for offsets within a turn.
    fn monotonic_ms(&self) -> u64;
}

fn truncate_ms(t: DateTime<Utc>) -> DateTime<Utc> {
    Utc.timestamp_millis_opt(t.timestamp_millis()).single().expect("valid timestamp")
}

pub struct SystemClock {
    origin: Instant,
    last: Mutex<DateTime<Utc>>,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
            last: Mutex::new(DateTime::<Utc>::MIN_UTC),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        let mut last = self.last.lock().unwrap();
        let now = truncate_ms(Utc::now()).max(*last);
        *last = now;
        now
    }

    fn monotonic_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

/// Monotonic time from the tokio clock, so paused test time is honored.
pub struct TokioClock {
    origin: tokio::time::Instant,
    wall: SystemClock,
}

impl TokioClock {
    pub fn new() -> Self {
        Self {
            origin: tokio::time::Instant::now(),
            wall: SystemClock::new(),
        }
    }
}

impl Default for TokioClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for TokioClock {
    fn now(&self) -> DateTime<Utc> {
        self.wall.now()
    }

    fn monotonic_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

/// Deterministic clock: every `now()` advances by one millisecond.
pub struct SimClock {
    base: DateTime<Utc>,
    ticks: AtomicI64,
}

impl SimClock {
    pub fn new(base: DateTime<Utc>) -> Self {
        Self {
            base: truncate_ms(base),
            ticks: AtomicI64::new(0),
        }
    }

    /// 2024-01-01T00:00:00Z.
    pub fn fixed() -> Self {
        Self::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap())
    }
}

impl Clock for SimClock {
    fn now(&self) -> DateTime<Utc> {
        let t = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.base + chrono::Duration::milliseconds(t)
    }

    fn monotonic_ms(&self) -> u64 {
        self.ticks.load(Ordering::SeqCst) as u64
    }
}
