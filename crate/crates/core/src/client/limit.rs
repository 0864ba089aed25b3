//! Concurrency and rate limits applied per backend.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Counting semaphore bounding in-flight requests. Tracks the peak so tests
/// can observe the bound.
#[derive(Debug)]
pub struct InflightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

pub struct InflightPermit<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> InflightPermit<'_> {
        let mut cur = self.current.lock().expect("limiter poisoned");
        while *cur >= self.max {
            cur = self.freed.wait(cur).expect("limiter poisoned");
        }
        *cur += 1;
        self.peak.fetch_max(*cur, Ordering::SeqCst);
        InflightPermit { limiter: self }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn max(&self) -> usize {
        self.max
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut cur = self.limiter.current.lock().expect("limiter poisoned");
        *cur -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Token bucket refilled continuously at `per_minute / 60` tokens per
/// second, with a burst of `per_minute` tokens.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(per_minute: u32) -> Self {
        let capacity = f64::from(per_minute.max(1));
        Self {
            capacity,
            refill_per_sec: capacity / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("bucket poisoned");
                let now = Instant::now();
                let elapsed = now.duration_since(st.1).as_secs_f64();
                st.0 = (st.0 + elapsed * self.refill_per_sec).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.refill_per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}
