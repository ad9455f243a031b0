//! Token-bucket shaping of per-circuit forwarding.

/// Invariant: `0 ≤ tokens ≤ capacity`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TokenBucket {
    pub tokens: f64,
    pub rate: f64,
    pub capacity: f64,
}

impl TokenBucket {
    pub fn new(rate: f64, dt: f64) -> Self {
        let mut b = Self::default();
        b.set_rate(rate, dt);
        b
    }

    /// Bucket depth is two ticks of traffic at the new rate. Below one packet
    /// per tick the depth is one packet plus one tick, so credit is never
    /// discarded while waiting for a whole packet.
    pub fn set_rate(&mut self, rate: f64, dt: f64) {
        self.rate = rate.max(0.0);
        if self.rate == 0.0 {
            self.capacity = 0.0;
        } else {
            self.capacity = (2.0 * self.rate * dt).max(1.0 + self.rate * dt);
        }
        self.tokens = self.tokens.min(self.capacity);
    }

    /// Packets released this tick from a queue of `queue` packets.
    pub fn forward(&mut self, queue: usize, dt: f64) -> usize {
        self.tokens = (self.tokens + self.rate * dt).min(self.capacity);
        let n = (self.tokens.floor() as usize).min(queue);
        self.tokens -= n as f64;
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rate_limited_send() {
        let mut b = TokenBucket::new(100.0, 0.04);
        assert_eq!(b.forward(10, 0.04), 4);
    }

    #[test]
    fn queue_limited_send_keeps_tokens() {
        let mut b = TokenBucket::new(100.0, 0.04);
        assert_eq!(b.forward(2, 0.04), 2);
        assert!((b.tokens - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rate_sends_nothing() {
        let mut b = TokenBucket::new(100.0, 0.04);
        b.forward(0, 0.04);
        b.set_rate(0.0, 0.04);
        assert_eq!(b.forward(1000, 0.04), 0);
    }

    proptest! {
        #[test]
        fn long_run_average_matches_rate(rate in 1.0f64..5000.0, ticks in 50usize..400) {
            let dt = 0.04;
            let mut b = TokenBucket::new(rate, dt);
            let sent: usize = (0..ticks).map(|_| b.forward(usize::MAX, dt)).sum();
            let expect = rate * dt * ticks as f64;
            prop_assert!((sent as f64 - expect).abs() <= 1.0 + 1e-9);
            prop_assert!(b.tokens >= 0.0 && b.tokens <= b.capacity);
        }
    }
}
