//! Injectable time sources.

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed::SeedKey;

/// Per-agent time source. Simulated clients call [`Clock::advance`] to model
/// page-load latency.
pub trait Clock: Send {
    fn now(&self) -> DateTime<Utc>;
    /// Blocks until `t` (or later, by scheduling jitter).
    fn sleep_until(&mut self, t: DateTime<Utc>);
    fn advance(&mut self, d: Duration);
}

/// Deterministic virtual time. Each wake-up lands up to `max_jitter` after the
/// requested instant, drawn from a seeded stream.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    now: DateTime<Utc>,
    max_jitter_ms: u64,
    rng: ChaCha8Rng,
}

impl VirtualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        VirtualClock {
            now: start,
            max_jitter_ms: 0,
            rng: SeedKey::new(0).rng(),
        }
    }

    pub fn with_jitter(mut self, max_jitter: Duration, seed: SeedKey) -> Self {
        self.max_jitter_ms = max_jitter.num_milliseconds().max(0) as u64;
        self.rng = seed.rng();
        self
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> DateTime<Utc> {
        self.now
    }

    fn sleep_until(&mut self, t: DateTime<Utc>) {
        let jitter = if self.max_jitter_ms == 0 {
            0
        } else {
            self.rng.gen_range(0..=self.max_jitter_ms)
        };
        self.now = self.now.max(t) + Duration::milliseconds(jitter as i64);
    }

    fn advance(&mut self, d: Duration) {
        self.now += d;
    }
}

/// Real time.
#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&mut self, t: DateTime<Utc>) {
        if let Ok(d) = (t - Utc::now()).to_std() {
            std::thread::sleep(d);
        }
    }

    fn advance(&mut self, d: Duration) {
        if let Ok(d) = d.to_std() {
            std::thread::sleep(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_never_goes_backwards() {
        let t0 = DateTime::parse_from_rfc3339("2020-02-26T08:00:00Z").unwrap().with_timezone(&Utc);
        let mut c = VirtualClock::new(t0).with_jitter(Duration::seconds(2), SeedKey::new(1));
        c.advance(Duration::seconds(30));
        c.sleep_until(t0);
        assert!(c.now() >= t0 + Duration::seconds(30));
        c.sleep_until(t0 + Duration::seconds(420));
        let late = c.now() - (t0 + Duration::seconds(420));
        assert!(late >= Duration::zero() && late <= Duration::seconds(2));
    }
}
