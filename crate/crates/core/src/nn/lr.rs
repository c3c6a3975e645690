use serde::{Deserialize, Serialize};

/// Cosine annealing with warm restarts, in epoch units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub lr0: f64,
    pub t0: f64,
    pub t_mult: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 3e-4,
            t0: 10.0,
            t_mult: 2.0,
        }
    }
}

impl LrSchedule {
    /// Learning rate at a (fractional) epoch. Negative epochs are treated as zero.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let mut start = 0.0;
        let mut period = self.t0;
        let e = epoch.max(0.0);
        while e >= start + period {
            start += period;
            period *= self.t_mult;
        }
        let progress = (e - start) / period;
        self.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
