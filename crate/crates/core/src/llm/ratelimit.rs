use std::collections::VecDeque;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Sliding-window limiter: at most `capacity` acquisitions inside any window.
///
/// Stricter than a refilling token bucket, which can admit up to twice the
/// budget across a window boundary.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        Self::new(requests as usize, Duration::from_secs(60))
    }

    pub fn new(capacity: usize, window: Duration) -> Self {
        assert!(capacity > 0, "rate limiter capacity must be positive");
        RateLimiter {
            capacity,
            window,
            issued: Mutex::new(VecDeque::with_capacity(capacity)),
        }
    }

    /// Blocks until a request may be sent, then records it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = Instant::now();
                while issued
                    .front()
                    .is_some_and(|&t| now.duration_since(t) >= self.window)
                {
                    issued.pop_front();
                }
                if issued.len() < self.capacity {
                    issued.push_back(now);
                    return;
                }
                self.window - now.duration_since(issued[0])
            };
            thread::sleep(wait);
        }
    }
}
