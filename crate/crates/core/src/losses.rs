//! Pixel-wise BCE plus the uncertainty penalty `1 - (2p - 1)^2`, weighted by an
//! epoch-dependent schedule.

use std::f64::consts::PI;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::sigmoid;

pub const PROB_EPS: f64 = 1e-7;

fn check_pair(p: &Tensor, g: &Tensor) -> Result<()> {
    if p.dims() != g.dims() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs ground truth {:?}", p.dims(), g.dims())));
    }
    let v = g.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if v.iter().any(|x| *x != 0.0 && *x != 1.0) {
        return Err(Error::NonBinaryGT);
    }
    Ok(())
}

/// Mean BCE on logits: `max(x, 0) - x g + log(1 + exp(-|x|))`.
pub fn bce_with_logits(logits: &Tensor, g: &Tensor) -> Result<Tensor> {
    check_pair(logits, g)?;
    let soft = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((logits.relu()? - (logits * g)?)? + soft)?.mean_all()?)
}

/// Mean BCE on probabilities clamped to `[eps, 1 - eps]`.
pub fn bce(p: &Tensor, g: &Tensor) -> Result<Tensor> {
    check_pair(p, g)?;
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let pos = (g * p.log()?)?;
    let neg = (g.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.neg()?.mean_all()?)
}

/// Mean of `1 - (2p - 1)^2`.
pub fn ual(p: &Tensor) -> Result<Tensor> {
    Ok(p.affine(2.0, -1.0)?.sqr()?.affine(-1.0, 1.0)?.mean_all()?)
}

/// Weight of the uncertainty term as a function of the epoch.
pub trait LambdaSchedule: Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, epoch: usize, total: usize) -> f64;
}

/// `init * (1 + cos(pi e / T)) / 2`: starts at `init`, reaches 0 at the last epoch.
pub struct CosineDecay(pub f64);

/// Mirror of [`CosineDecay`]: 0 at the start, `init` at the end.
pub struct CosineRamp(pub f64);

pub struct Constant(pub f64);

impl LambdaSchedule for CosineDecay {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn value(&self, epoch: usize, total: usize) -> f64 {
        self.0 * (1.0 + (PI * epoch as f64 / total.max(1) as f64).cos()) / 2.0
    }
}

impl LambdaSchedule for CosineRamp {
    fn name(&self) -> &'static str {
        "cosine_ramp"
    }

    fn value(&self, epoch: usize, total: usize) -> f64 {
        self.0 * (1.0 - (PI * epoch as f64 / total.max(1) as f64).cos()) / 2.0
    }
}

impl LambdaSchedule for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn value(&self, _epoch: usize, _total: usize) -> f64 {
        self.0
    }
}

pub const LAMBDA_SCHEDULES: [&str; 3] = ["cosine", "cosine_ramp", "constant"];

pub fn lambda_schedule(name: &str, init: f64) -> Result<Box<dyn LambdaSchedule>> {
    match name {
        "cosine" => Ok(Box::new(CosineDecay(init))),
        "cosine_ramp" => Ok(Box::new(CosineRamp(init))),
        "constant" => Ok(Box::new(Constant(init))),
        other => Err(Error::UnknownStrategy { kind: "lambda schedule", name: other.into() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_init: f64,
    pub schedule: String,
    pub total_epochs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_init: 1.5, schedule: "cosine".into(), total_epochs: 150 }
    }
}

/// Epochs count from 0; `epoch == total_epochs` is the end of the schedule.
pub fn lambda_at(epoch: usize, cfg: &LossConfig) -> Result<f64> {
    if epoch > cfg.total_epochs {
        return Err(Error::EpochOutOfRange { epoch, total: cfg.total_epochs });
    }
    if cfg.lambda_init < 0.0 {
        return Err(Error::Config(format!("lambda_init must be non-negative, got {}", cfg.lambda_init)));
    }
    Ok(lambda_schedule(&cfg.schedule, cfg.lambda_init)?.value(epoch, cfg.total_epochs))
}

/// BCE (on logits) plus the scheduled uncertainty term.
pub fn total_loss(logits: &Tensor, g: &Tensor, epoch: usize, cfg: &LossConfig) -> Result<Tensor> {
    let lambda = lambda_at(epoch, cfg)?;
    let b = bce_with_logits(logits, g)?;
    if lambda == 0.0 {
        return Ok(b);
    }
    Ok((b + (ual(&sigmoid(logits)?)? * lambda)?)?)
}
