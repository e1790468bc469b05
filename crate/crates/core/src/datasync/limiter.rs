use std::time::Duration;

/// Token bucket measured in bits.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate_bps: f64,
    capacity: f64,
    tokens: f64,
    last: Duration,
}

impl TokenBucket {
    /// Burst capacity is the larger of one packet and 20 ms of rate.
    pub fn new(rate_bps: f64, packet_bytes: usize) -> Self {
        let capacity = (packet_bytes as f64 * 8.0).max(rate_bps / 50.0);
        Self {
            rate_bps,
            capacity,
            tokens: capacity,
            last: Duration::ZERO,
        }
    }

    pub fn rate_bps(&self) -> f64 {
        self.rate_bps
    }

    pub fn capacity_bits(&self) -> f64 {
        self.capacity
    }

    pub fn refill(&mut self, now: Duration) {
        if now > self.last {
            let dt = (now - self.last).as_secs_f64();
            self.tokens = (self.tokens + dt * self.rate_bps).min(self.capacity);
            self.last = now;
        }
    }

    pub fn available_bits(&self) -> f64 {
        self.tokens
    }

    pub fn try_take(&mut self, bits: f64) -> bool {
        if self.tokens + 1e-9 >= bits {
            self.tokens -= bits;
            true
        } else {
            false
        }
    }
}
