use candle_core::{Tensor, Var};

use crate::error::Result;
use crate::params::{join, ParamStore};

/// Whether normalization layers use batch statistics (and update running ones) or the
/// stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weight initialization of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvInit {
    /// Uniform on `+-1/sqrt(fan_in)`; keeps unnormalized stacks near unit gain.
    FanInUniform,
    /// Gaussian with std `sqrt(2/fan_out)`, for convolutions followed by batch norm.
    HeFanOut,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
    pub init: ConvInit,
}

impl ConvSpec {
    /// Same-size convolution with bias.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride: 1, padding: kernel / 2, bias: true, init: ConvInit::FanInUniform }
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn he(mut self) -> Self {
        self.init = ConvInit::HeFanOut;
        self
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
            + if self.bias { self.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    spec: ConvSpec,
}

impl Conv2d {
    /// Weights per `spec.init`, zero bias.
    pub fn new(ps: &mut ParamStore, name: &str, spec: ConvSpec) -> Result<Self> {
        let shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel);
        let k2 = spec.kernel * spec.kernel;
        let weight = match spec.init {
            ConvInit::FanInUniform => {
                ps.uniform(&join(name, "weight"), shape, 1.0 / ((spec.in_channels * k2) as f64).sqrt())?
            }
            ConvInit::HeFanOut => {
                ps.normal(&join(name, "weight"), shape, (2.0 / (spec.out_channels * k2) as f64).sqrt())?
            }
        };
        let bias = if spec.bias {
            Some(ps.constant(&join(name, "bias"), spec.out_channels, 0.0)?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = crate::ops::conv2d(x, self.weight.as_tensor(), self.spec.padding, self.spec.stride)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, self.spec.out_channels, 1, 1))?)?),
            None => Ok(y),
        }
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    weight: Var,
    bias: Var,
    running_mean: Var,
    running_var: Var,
    channels: usize,
    eps: f64,
    momentum: f64,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.constant(&join(name, "weight"), channels, 1.0)?,
            bias: ps.constant(&join(name, "bias"), channels, 0.0)?,
            running_mean: ps.buffer(&join(name, "running_mean"), channels, 0.0)?,
            running_var: ps.buffer(&join(name, "running_var"), channels, 1.0)?,
            channels,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels;
        let (mean, var) = match mode {
            Mode::Train => {
                let (b, _, h, w) = x.dims4()?;
                let mean = x.mean_keepdim((0, 2, 3))?;
                let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim((0, 2, 3))?;
                let n = (b * h * w) as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let m = self.momentum;
                let rm = ((self.running_mean.as_tensor().detach() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
                let rv = ((self.running_var.as_tensor().detach() * (1.0 - m))?
                    + (var.detach().flatten_all()? * (m * unbiased))?)?;
                self.running_mean.set(&rm)?;
                self.running_var.set(&rv)?;
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            ),
        };
        let xhat = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xhat
            .broadcast_mul(&self.weight.as_tensor().reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.as_tensor().reshape((1, c, 1, 1))?)?)
    }
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device};

    use super::*;

    #[test]
    fn conv_same_preserves_size() {
        let mut ps = ParamStore::new(DType::F32, 0);
        let conv = Conv2d::new(&mut ps, "c", ConvSpec::same(3, 5, 3)).unwrap();
        let x = Tensor::zeros((2, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[2, 5, 8, 8]);
        assert_eq!(ps.count_trainable(), ConvSpec::same(3, 5, 3).param_count());
    }

    #[test]
    fn batchnorm_train_normalizes_and_updates_running_stats() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let bn = BatchNorm::new(&mut ps, "bn", 2).unwrap();
        let x = Tensor::randn(0f64, 1.0, (4, 2, 3, 3), &Device::Cpu).unwrap().affine(3.0, 5.0).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let mean = y.mean_keepdim((0, 2, 3)).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-10));
        let rm = ps.get("bn.running_mean").unwrap().var.to_vec1::<f64>().unwrap();
        assert!(rm.iter().all(|m| *m > 0.0));
        assert_eq!(ps.count_trainable(), 4);
    }
}
