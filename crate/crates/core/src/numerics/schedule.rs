use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Linear warmup from 0 to `base_lr`, cosine decay to
/// `final_lr_fraction · base_lr` at `total_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    base_lr: f64,
    warmup_steps: u64,
    total_steps: u64,
    final_lr_fraction: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64, final_lr_fraction: f64) -> Result<Self> {
        if !(base_lr.is_finite() && base_lr >= 0.0) {
            return arg_err(format!("base learning rate must be non-negative, got {base_lr}"));
        }
        if total_steps <= warmup_steps {
            return arg_err(format!("total steps {total_steps} must exceed warmup steps {warmup_steps}"));
        }
        if !(0.0..=1.0).contains(&final_lr_fraction) {
            return arg_err(format!("final lr fraction must be in [0, 1], got {final_lr_fraction}"));
        }
        Ok(Self { base_lr, warmup_steps, total_steps, final_lr_fraction })
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup_steps
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let floor = self.final_lr_fraction;
        if step >= self.total_steps {
            return self.base_lr * floor;
        }
        let progress = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.base_lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchors() {
        let s = LrSchedule::new(1e-3, 100, 1100, 0.1).unwrap();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(100), 1e-3);
        assert!((s.lr_at(1100) - 1e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(5000), s.lr_at(1100));
        // halfway through the cosine phase cos(π/2) = 0
        let mid = s.lr_at(600);
        assert!((mid - 1e-3 * (0.1 + 0.9 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_warmup_starts_at_base() {
        let s = LrSchedule::new(0.5, 0, 10, 0.0).unwrap();
        assert_eq!(s.lr_at(0), 0.5);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(LrSchedule::new(1e-3, 100, 100, 0.0).is_err());
        assert!(LrSchedule::new(-1.0, 0, 10, 0.0).is_err());
        assert!(LrSchedule::new(1e-3, 0, 10, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn continuous_and_nonnegative(base in 1e-5f64..1.0, warmup in 1u64..200, extra in 1u64..2000, frac in 0.0f64..1.0, step in 0u64..4000) {
            let total = 2 * warmup + extra;
            let s = LrSchedule::new(base, warmup, total, frac).unwrap();
            let a = s.lr_at(step);
            let b = s.lr_at(step + 1);
            prop_assert!(a >= 0.0);
            prop_assert!((b - a).abs() <= base * (1.0 / warmup as f64 + PI / total as f64) + 1e-15);
        }
    }
}
