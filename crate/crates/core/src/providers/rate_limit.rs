use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Time source for rate limiting and retry backoff.
pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Manually advanced clock; `sleep` advances time instantly.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimits {
    pub max_concurrent: usize,
    /// Ceiling on requests started within any sliding 60 s window.
    pub requests_per_minute: Option<u32>,
}

impl Default for RateLimits {
    fn default() -> Self {
        Self {
            max_concurrent: 5,
            requests_per_minute: None,
        }
    }
}

const WINDOW: Duration = Duration::from_secs(60);

#[derive(Default)]
struct State {
    in_flight: usize,
    issued: VecDeque<Duration>,
}

/// Bounds concurrent requests and requests per sliding window for one provider.
pub struct RateLimiter {
    limits: RateLimits,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
    freed: Condvar,
}

impl RateLimiter {
    pub fn new(limits: RateLimits, clock: Arc<dyn Clock>) -> Self {
        Self {
            limits: RateLimits {
                max_concurrent: limits.max_concurrent.max(1),
                ..limits
            },
            clock,
            state: Mutex::new(State::default()),
            freed: Condvar::new(),
        }
    }

    pub fn limits(&self) -> RateLimits {
        self.limits
    }

    /// Blocks until a request may start. The slot is held until the permit drops.
    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.in_flight >= self.limits.max_concurrent {
                st = self.freed.wait(st).unwrap();
                continue;
            }
            let Some(ceiling) = self.limits.requests_per_minute else {
                break;
            };
            let now = self.clock.now();
            while st.issued.front().is_some_and(|&t| now >= t + WINDOW) {
                st.issued.pop_front();
            }
            if st.issued.len() < ceiling as usize {
                st.issued.push_back(now);
                break;
            }
            let wait = st.issued[0] + WINDOW - now;
            drop(st);
            self.clock.sleep(wait);
            st = self.state.lock().unwrap();
        }
        st.in_flight += 1;
        Permit { limiter: self }
    }
}

pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.limiter.state.lock().unwrap();
        st.in_flight -= 1;
        self.limiter.freed.notify_one();
    }
}
