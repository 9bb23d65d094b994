use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};

/// Cosine annealing from `base_lr` to `lr_min` over `total_iterations`
/// data iterations, after an optional linear warmup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub total_iterations: usize,
    pub lr_min: f64,
    pub warmup_iterations: usize,
}

impl ScheduleConfig {
    pub fn new(base_lr: f64, total_iterations: usize) -> Self {
        Self {
            base_lr,
            total_iterations,
            lr_min: 0.0,
            warmup_iterations: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iterations == 0 {
            return Err(Error::Config(
                "schedule needs at least one iteration".into(),
            ));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.base_lr) {
            return Err(Error::Config(format!(
                "lr_min {} must lie in [0, base_lr]",
                self.lr_min
            )));
        }
        if self.warmup_iterations >= self.total_iterations {
            return Err(Error::Config(
                "warmup must be shorter than the schedule".into(),
            ));
        }
        Ok(())
    }
}

static CLAMP_LOGGED: AtomicBool = AtomicBool::new(false);

/// Learning rate at data iteration `t`. Past the end of the schedule the
/// floor is returned.
pub fn cosine_lr(t: usize, cfg: &ScheduleConfig) -> f64 {
    let total = cfg.total_iterations;
    if t > total {
        if !CLAMP_LOGGED.swap(true, Ordering::Relaxed) {
            log::warn!("iteration {t} is past the schedule length {total}; using lr_min");
        }
        return cfg.lr_min;
    }
    let w = cfg.warmup_iterations;
    if t < w {
        return cfg.base_lr * (t + 1) as f64 / w as f64;
    }
    let progress = (t - w) as f64 / (total - w) as f64;
    cfg.lr_min + 0.5 * (cfg.base_lr - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}
