//! Client traffic generators feeding the entry relays.

use serde::{Deserialize, Serialize};

/// Offered load of one circuit's client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceModel {
    /// Always active at `rate` packets/s.
    Infinite { rate: f64 },
    /// Active at `rate` only inside the `(start, stop)` windows, in seconds.
    OnOff { rate: f64, windows: Vec<(f64, f64)> },
}

impl SourceModel {
    pub fn rate(&self) -> f64 {
        match self {
            Self::Infinite { rate } | Self::OnOff { rate, .. } => *rate,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let rate = self.rate();
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(format!("source rate {rate} must be finite and non-negative"));
        }
        if let Self::OnOff { windows, .. } = self {
            let mut prev_stop = f64::NEG_INFINITY;
            for &(start, stop) in windows {
                if !(start < stop) || start < prev_stop {
                    return Err(format!("window ({start}, {stop}) is empty, unordered or overlapping"));
                }
                prev_stop = stop;
            }
        }
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        match self {
            Self::Infinite { .. } => true,
            Self::OnOff { windows, .. } => windows.iter().any(|&(a, b)| a <= t && t < b),
        }
    }

    /// Packets offered during `[t0, t1)`.
    pub fn emit(&self, t0: f64, t1: f64) -> f64 {
        let span = (t1 - t0).max(0.0);
        match self {
            Self::Infinite { rate } => rate * span,
            Self::OnOff { rate, windows } => {
                let active: f64 = windows.iter().map(|&(a, b)| (t1.min(b) - t0.max(a)).max(0.0)).sum();
                rate * active
            }
        }
    }
}

/// Client-side buffer between a source and its entry relay. Generation
/// beyond `capacity` is not offered; fractional packets carry over.
#[derive(Debug, Clone)]
pub struct ClientBuffer {
    pub queued: usize,
    pub capacity: usize,
    carry: f64,
    pub generated: u64,
}

impl ClientBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            queued: 0,
            capacity,
            carry: 0.0,
            generated: 0,
        }
    }

    pub fn fill(&mut self, source: &SourceModel, t0: f64, t1: f64) {
        self.carry += source.emit(t0, t1);
        let whole = self.carry.floor();
        self.carry -= whole;
        let room = self.capacity - self.queued;
        let add = (whole as usize).min(room);
        if add < whole as usize {
            // A full buffer blocks the client; nothing is carried over.
            self.carry = 0.0;
        }
        self.queued += add;
        self.generated += add as u64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_source_offers_rate_times_window() {
        let s = SourceModel::Infinite { rate: 100.0 };
        assert!((s.emit(0.0, 1.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn on_off_is_silent_outside_windows() {
        let s = SourceModel::OnOff {
            rate: 100.0,
            windows: vec![(2.0, 4.0)],
        };
        assert_eq!(s.emit(0.0, 1.0), 0.0);
        assert!((s.emit(1.0, 3.0) - 100.0).abs() < 1e-12);
        assert!(!s.is_active(4.0) && s.is_active(2.0));
    }

    #[test]
    fn stop_restart_twice_gives_three_segments() {
        let s = SourceModel::OnOff {
            rate: 10.0,
            windows: vec![(0.0, 10.0), (20.0, 35.0), (45.0, 60.0)],
        };
        s.validate().unwrap();
        let active: Vec<bool> = (0..600).map(|i| s.emit(i as f64 * 0.1, (i + 1) as f64 * 0.1) > 0.0).collect();
        let rising = active.windows(2).filter(|w| !w[0] && w[1]).count() + usize::from(active[0]);
        assert_eq!(rising, 3);
    }

    #[test]
    fn overlapping_windows_are_rejected() {
        let s = SourceModel::OnOff {
            rate: 1.0,
            windows: vec![(0.0, 5.0), (4.0, 6.0)],
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn buffer_carries_fractions_and_saturates() {
        let s = SourceModel::Infinite { rate: 25.0 };
        let mut b = ClientBuffer::new(3);
        b.fill(&s, 0.0, 0.04);
        assert_eq!(b.queued, 1);
        b.fill(&s, 0.04, 0.08);
        assert_eq!(b.queued, 2);
        for i in 2..10 {
            b.fill(&s, i as f64 * 0.04, (i + 1) as f64 * 0.04);
        }
        assert_eq!(b.queued, 3);
        assert_eq!(b.generated, 3);
    }
}
