//! Time sources, token-bucket rate limiting, and a small counting semaphore.
//!
//! Everything that sleeps or reads the clock goes through the [`Clock`] trait
//! so throttling behavior can be tested on a fake clock without real waiting.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// Abstract time source. The production implementation is [`SystemClock`];
/// tests use [`FakeClock`] to advance time instantly.
pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Deterministic clock for tests: `sleep` advances the reported time instead
/// of blocking.
#[derive(Debug, Clone)]
pub struct FakeClock {
    base: Instant,
    offset: Arc<Mutex<Duration>>,
}

impl Default for FakeClock {
    fn default() -> Self {
        FakeClock {
            base: Instant::now(),
            offset: Arc::new(Mutex::new(Duration::ZERO)),
        }
    }
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Time elapsed on the fake clock since construction.
    pub fn elapsed(&self) -> Duration {
        *self.offset.lock().unwrap()
    }

    pub fn advance(&self, duration: Duration) {
        *self.offset.lock().unwrap() += duration;
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Instant {
        self.base + *self.offset.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }
}

/// Token bucket limiting sustained throughput to `per_minute` acquisitions
/// per minute.
///
/// Burst capacity is a single token: with refills spaced `60 / per_minute`
/// seconds apart this keeps every sliding 60-second window at or below
/// `per_minute` acquisitions, which a full-burst bucket would not.
pub struct TokenBucket {
    state: Mutex<BucketState>,
    capacity: f64,
    refill_per_sec: f64,
}

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

impl TokenBucket {
    /// `per_minute` must be positive; the bucket starts with one token.
    pub fn new(per_minute: u32, clock: &dyn Clock) -> Self {
        assert!(per_minute > 0, "rate limit must be positive");
        TokenBucket {
            state: Mutex::new(BucketState {
                tokens: 1.0,
                last_refill: clock.now(),
            }),
            capacity: 1.0,
            refill_per_sec: f64::from(per_minute) / 60.0,
        }
    }

    /// Blocks (via `clock.sleep`) until a token is available, then consumes it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = clock.now();
                let elapsed = now.saturating_duration_since(state.last_refill);
                state.tokens = (state.tokens + elapsed.as_secs_f64() * self.refill_per_sec)
                    .min(self.capacity);
                state.last_refill = now;
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.tokens) / self.refill_per_sec)
            };
            clock.sleep(wait);
        }
    }
}

/// Counting semaphore bounding in-flight completions. `std::sync` has no
/// semaphore, so this is the usual Mutex + Condvar construction.
pub struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        assert!(permits > 0, "semaphore needs at least one permit");
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fake_clock_sleep_advances_time() {
        let clock = FakeClock::new();
        let start = clock.now();
        clock.sleep(Duration::from_secs(5));
        assert_eq!(clock.now() - start, Duration::from_secs(5));
    }

    /// With a 60/min limit, no sliding 60-second window may contain more than
    /// 60 acquisitions.
    #[test]
    fn token_bucket_honors_rate_over_sliding_window() {
        let clock = FakeClock::new();
        let bucket = TokenBucket::new(60, &clock);
        let mut stamps = Vec::new();
        for _ in 0..240 {
            bucket.acquire(&clock);
            stamps.push(clock.elapsed());
        }
        for (i, start) in stamps.iter().enumerate() {
            let window_end = *start + Duration::from_secs(60);
            let count = stamps[i..].iter().take_while(|t| **t < window_end).count();
            assert!(count <= 60, "window starting at {start:?} had {count}");
        }
        // 240 acquisitions at one per second need about four minutes.
        assert!(stamps.last().unwrap() >= &Duration::from_secs(238));
    }

    /// A different configured rate is also respected on the fake clock.
    #[test]
    fn token_bucket_low_rate_spaces_requests() {
        let clock = FakeClock::new();
        let bucket = TokenBucket::new(6, &clock);
        let mut stamps = Vec::new();
        for _ in 0..13 {
            bucket.acquire(&clock);
            stamps.push(clock.elapsed());
        }
        for pair in stamps.windows(2) {
            let gap = pair[1] - pair[0];
            assert!(gap >= Duration::from_secs_f64(9.99), "gap was {gap:?}");
        }
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};

        let sem = Arc::new(Semaphore::new(3));
        let current = Arc::new(AtomicUsize::new(0));
        let high_water = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..16 {
            let sem = Arc::clone(&sem);
            let current = Arc::clone(&current);
            let high_water = Arc::clone(&high_water);
            handles.push(std::thread::spawn(move || {
                let _guard = sem.acquire();
                let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                high_water.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(10));
                current.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(high_water.load(Ordering::SeqCst) <= 3);
    }
}
