//! Learning-rate schedule: linear warm-up to the base rate, then staircase
//! decay anchored after the warm-up window.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    /// Starting fraction of the base rate.
    pub warmup_coefficient: f64,
    pub decay_factor: f64,
    /// Epochs between staircase drops, counted from the end of warm-up.
    pub decay_period: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 0.001,
            warmup_epochs: 10,
            warmup_coefficient: 0.01,
            decay_factor: 0.1,
            decay_period: 30,
        }
    }
}

/// `lr(e)`: for `e < warmup`, a linear ramp from `coefficient·base` toward
/// `base`; afterwards `base · factor^⌊(e − warmup)/period⌋`.
pub fn lr_at_epoch(epoch: usize, sched: &LrSchedule) -> f64 {
    if sched.warmup_epochs > 0 && epoch < sched.warmup_epochs {
        let ramp = sched.warmup_coefficient
            + (1.0 - sched.warmup_coefficient) * epoch as f64 / sched.warmup_epochs as f64;
        sched.base_lr * ramp
    } else {
        let steps = (epoch - sched.warmup_epochs)
            .checked_div(sched.decay_period)
            .unwrap_or(0);
        sched.base_lr * sched.decay_factor.powi(steps as i32)
    }
}
