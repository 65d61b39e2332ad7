//! Token-bucket admission per provider.

use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug)]
pub struct RateLimiter {
    inner: Option<Mutex<Bucket>>,
}

#[derive(Debug)]
struct Bucket {
    capacity: f64,
    tokens: f64,
    per_sec: f64,
    last: Instant,
}

impl RateLimiter {
    /// `requests_per_minute == 0` disables limiting. Burst equals one
    /// second's worth of requests, at least one.
    pub fn per_minute(requests_per_minute: u32) -> Self {
        if requests_per_minute == 0 {
            return RateLimiter { inner: None };
        }
        let per_sec = requests_per_minute as f64 / 60.0;
        let capacity = per_sec.max(1.0);
        RateLimiter {
            inner: Some(Mutex::new(Bucket {
                capacity,
                tokens: capacity,
                per_sec,
                last: Instant::now(),
            })),
        }
    }

    pub fn unlimited() -> Self {
        RateLimiter { inner: None }
    }

    /// Block until one request may be admitted.
    pub fn acquire(&self) {
        let Some(bucket) = &self.inner else { return };
        loop {
            let wait = {
                let mut b = bucket.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(b.last).as_secs_f64();
                b.tokens = (b.tokens + elapsed * b.per_sec).min(b.capacity);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - b.tokens) / b.per_sec)
            };
            std::thread::sleep(wait);
        }
    }
}
