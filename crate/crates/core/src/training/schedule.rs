use crate::error::{ensure, Result};

/// Linear warm-up to `peak_lr`, then cosine decay to `min_lr` at `total`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub peak_lr: f64,
    pub warmup: usize,
    pub total: usize,
    pub min_lr: f64,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.min_lr > 0.0 && self.min_lr <= self.peak_lr,
            "need 0 < min_lr <= peak_lr, got {} and {}",
            self.min_lr,
            self.peak_lr
        );
        ensure!(
            self.warmup <= self.total,
            "warm-up {} exceeds total {}",
            self.warmup,
            self.total
        );
        Ok(())
    }
}

/// Learning rate at `step`; steps past `total` stay at `min_lr`.
pub fn lr_at(s: &ScheduleSpec, step: usize) -> f64 {
    if step < s.warmup {
        return s.peak_lr * step as f64 / s.warmup as f64;
    }
    if step >= s.total {
        return s.min_lr;
    }
    let progress = (step - s.warmup) as f64 / (s.total - s.warmup) as f64;
    s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}
