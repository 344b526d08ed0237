//! SGD with momentum and coupled weight decay, matching `torch.optim.SGD`:
//! `g = grad + wd * w`, `v = mu * v + g` (`v = g` on the first step), `w -= lr * v`.

use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::Result;
use crate::params::ParamStore;

pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: HashMap<String, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: HashMap::new() }
    }

    /// Updates every optimized parameter that received a gradient.
    pub fn step(&mut self, ps: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        for p in ps.optimized() {
            let Some(g) = grads.get(p.var.as_tensor()) else { continue };
            // gradients carry autograd history; keeping them in the velocity would pin
            // every past graph in memory
            let w = p.var.as_tensor().detach();
            let mut d = g.detach();
            if self.weight_decay != 0.0 {
                d = (d + (&w * self.weight_decay)?)?;
            }
            if self.momentum != 0.0 {
                d = match self.velocity.get(&p.name) {
                    Some(v) => ((v * self.momentum)? + d)?,
                    None => d,
                };
                self.velocity.insert(p.name.clone(), d.clone());
            }
            p.var.set(&(&w - (d * lr)?)?)?;
        }
        Ok(())
    }
}
