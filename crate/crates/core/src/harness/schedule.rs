//! Per-iteration learning-rate schedules.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub trait LrSchedule: Send + Sync {
    fn name(&self) -> &'static str;
    fn lr(&self, iteration: usize) -> f64;
}

/// Linear warmup to `base` over `warmup` iterations, then cosine decay to 0 at `total`.
pub struct CosineWarmup {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule for CosineWarmup {
    fn name(&self) -> &'static str {
        "cosine_warmup"
    }

    fn lr(&self, iteration: usize) -> f64 {
        if iteration < self.warmup {
            return self.base * (iteration + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1) as f64;
        let t = ((iteration - self.warmup) as f64 / span).min(1.0);
        self.base * 0.5 * (1.0 + (PI * t).cos())
    }
}

pub struct ConstantLr(pub f64);

impl LrSchedule for ConstantLr {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn lr(&self, _iteration: usize) -> f64 {
        self.0
    }
}

pub const LR_SCHEDULES: [&str; 2] = ["cosine_warmup", "constant"];

pub fn lr_schedule(name: &str, base: f64, warmup: usize, total: usize) -> Result<Box<dyn LrSchedule>> {
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {base}")));
    }
    match name {
        "cosine_warmup" => Ok(Box::new(CosineWarmup { base, warmup, total })),
        "constant" => Ok(Box::new(ConstantLr(base))),
        other => Err(Error::UnknownStrategy { kind: "lr schedule", name: other.into() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_monotone_decay() {
        let s = CosineWarmup { base: 0.01, warmup: 30, total: 300 };
        assert!(s.lr(0) <= s.lr(29));
        assert!((s.lr(29) - 0.01).abs() < 1e-15);
        assert!((s.lr(30) - 0.01).abs() < 1e-15);
        for i in 0..29 {
            assert!(s.lr(i) < s.lr(i + 1));
        }
        for i in 30..300 {
            assert!(s.lr(i + 1) <= s.lr(i));
        }
        assert!(s.lr(300) < 1e-12);
    }

    #[test]
    fn registry() {
        assert_eq!(lr_schedule("constant", 0.1, 0, 10).unwrap().lr(5), 0.1);
        assert!(lr_schedule("step", 0.1, 0, 10).is_err());
        assert!(lr_schedule("constant", 0.0, 0, 10).is_err());
    }
}
