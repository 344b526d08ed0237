//! Co-attention over multi-view features at one pyramid level.
//!
//! Stage one (per branch): compress the concatenated views, derive one sigmoid gate per
//! view through three mode products of the compressed map, and sum the gated views.
//! Stage two (angle branch only): channel gate then spatial gate. The two branches are
//! concatenated and fused back to the level width.

use candle_core::{Tensor, Var, D};

use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvSpec};
use crate::ops::{mode_product, sigmoid};
use crate::params::{join, ParamStore};

/// One view's gate factors `(U1, U2, U3)`: `c x c`, `h x h`, `w x w`.
#[derive(Debug, Clone)]
pub struct ModeMatrices {
    pub channel: Var,
    pub height: Var,
    pub width: Var,
}

impl ModeMatrices {
    fn new(ps: &mut ParamStore, prefix: &str, c: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            channel: ps.normal(&join(prefix, "u1"), (c, c), (1.0 / c as f64).sqrt())?,
            height: ps.identity(&join(prefix, "u2"), h)?,
            width: ps.identity(&join(prefix, "u3"), w)?,
        })
    }

    /// `sigmoid(f x1 U1 x2 U2 x3 U3)`.
    pub fn gate(&self, f: &Tensor) -> Result<Tensor> {
        let t = mode_product(f, self.channel.as_tensor(), 1)?;
        let t = mode_product(&t, self.height.as_tensor(), 2)?;
        let t = mode_product(&t, self.width.as_tensor(), 3)?;
        sigmoid(&t)
    }
}

/// Gated sum over `n` aligned views of one branch.
pub struct IntraAttention {
    compress: Conv2d,
    modes: Vec<ModeMatrices>,
    channels: usize,
}

impl IntraAttention {
    pub fn new(ps: &mut ParamStore, prefix: &str, views: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        let compress = Conv2d::new(ps, &join(prefix, "compress"), ConvSpec::same(views * c, c, 3))?;
        let modes = (0..views)
            .map(|k| ModeMatrices::new(ps, &format!("{prefix}.gate.{k}"), c, h, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { compress, modes, channels: c })
    }

    pub fn views(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[ModeMatrices] {
        &self.modes
    }

    /// Compressed branch map that every gate is computed from.
    pub fn compressed(&self, feats: &[Tensor]) -> Result<Tensor> {
        self.check(feats)?;
        Ok(self.compress.forward(&Tensor::cat(feats, 1)?)?.relu()?)
    }

    pub fn gates(&self, feats: &[Tensor]) -> Result<Vec<Tensor>> {
        let f = self.compressed(feats)?;
        self.modes.iter().map(|m| m.gate(&f)).collect()
    }

    pub fn forward(&self, feats: &[Tensor]) -> Result<Tensor> {
        let gates = self.gates(feats)?;
        let mut acc: Option<Tensor> = None;
        for (f, u) in feats.iter().zip(&gates) {
            let term = (f * u)?;
            acc = Some(match acc {
                None => term,
                Some(a) => (a + term)?,
            });
        }
        Ok(acc.expect("at least one view"))
    }

    fn check(&self, feats: &[Tensor]) -> Result<()> {
        if feats.len() != self.modes.len() {
            return Err(Error::DimMismatch(format!("expected {} views, got {}", self.modes.len(), feats.len())));
        }
        let m = &self.modes[0];
        let want = [self.channels, m.height.dims()[0], m.width.dims()[0]];
        for f in feats {
            let d = f.dims();
            if d.len() != 4 || d[1..] != want {
                return Err(Error::DimMismatch(format!("view feature {d:?}, expected (_, {}, {}, {})", want[0], want[1], want[2])));
            }
        }
        Ok(())
    }
}

/// `F * sigmoid(MLP(avgpool F) + MLP(maxpool F))`, gate broadcast over space.
pub struct ChannelGate {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl ChannelGate {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: usize, reduction: usize) -> Result<Self> {
        let hidden = (c / reduction).max(1);
        Ok(Self {
            fc1: Conv2d::new(ps, &join(prefix, "fc1"), ConvSpec::same(c, hidden, 1))?,
            fc2: Conv2d::new(ps, &join(prefix, "fc2"), ConvSpec::same(hidden, c, 1))?,
        })
    }

    pub fn gate(&self, f: &Tensor) -> Result<Tensor> {
        let avg = f.mean_keepdim((2, 3))?;
        let max = f.max_keepdim(2)?.max_keepdim(3)?;
        let mlp = |x: &Tensor| -> Result<Tensor> { self.fc2.forward(&self.fc1.forward(x)?.relu()?) };
        sigmoid(&(mlp(&avg)? + mlp(&max)?)?)
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        Ok(f.broadcast_mul(&self.gate(f)?)?)
    }
}

/// `F * sigmoid(conv7x7([mean_c F, max_c F]))`, gate broadcast over channels.
pub struct SpatialGate {
    conv: Conv2d,
}

impl SpatialGate {
    pub fn new(ps: &mut ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self { conv: Conv2d::new(ps, &join(prefix, "conv"), ConvSpec::same(2, 1, 7))? })
    }

    pub fn gate(&self, f: &Tensor) -> Result<Tensor> {
        let avg = f.mean_keepdim(1)?;
        let max = f.max_keepdim(1)?;
        sigmoid(&self.conv.forward(&Tensor::cat(&[avg, max], 1)?)?)
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        Ok(f.broadcast_mul(&self.gate(f)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CamvShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub angle_views: usize,
    pub distance_views: usize,
}

/// Parameters and forward pass for one pyramid level.
pub struct CamvLevel {
    angle: IntraAttention,
    distance: IntraAttention,
    channel_gate: ChannelGate,
    spatial_gate: SpatialGate,
    fusion: Conv2d,
}

impl CamvLevel {
    pub fn new(ps: &mut ParamStore, prefix: &str, s: CamvShape) -> Result<Self> {
        let c = s.channels;
        Ok(Self {
            angle: IntraAttention::new(ps, &join(prefix, "angle"), s.angle_views, c, s.height, s.width)?,
            distance: IntraAttention::new(ps, &join(prefix, "distance"), s.distance_views, c, s.height, s.width)?,
            channel_gate: ChannelGate::new(ps, &join(prefix, "channel_gate"), c, 4)?,
            spatial_gate: SpatialGate::new(ps, &join(prefix, "spatial_gate"))?,
            fusion: Conv2d::new(ps, &join(prefix, "fusion"), ConvSpec::same(2 * c, c, 3))?,
        })
    }

    pub fn angle(&self) -> &IntraAttention {
        &self.angle
    }

    pub fn distance(&self) -> &IntraAttention {
        &self.distance
    }

    pub fn channel_gate(&self) -> &ChannelGate {
        &self.channel_gate
    }

    pub fn spatial_gate(&self) -> &SpatialGate {
        &self.spatial_gate
    }

    /// Fuses the angle-branch and distance-branch views into one enhanced map.
    pub fn forward(&self, angle: &[Tensor], distance: &[Tensor], stage2: bool) -> Result<Tensor> {
        let mut fa = self.angle.forward(angle)?;
        let fd = self.distance.forward(distance)?;
        if stage2 {
            fa = self.spatial_gate.forward(&self.channel_gate.forward(&fa)?)?;
        }
        self.fusion.forward(&Tensor::cat(&[fa, fd], D::Minus(3))?)
    }
}

/// One [`CamvLevel`] per pyramid level.
pub struct Camv {
    levels: Vec<CamvLevel>,
    stage2: bool,
}

impl Camv {
    pub fn new(ps: &mut ParamStore, prefix: &str, shapes: &[CamvShape], stage2: bool) -> Result<Self> {
        let levels = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| CamvLevel::new(ps, &format!("{prefix}.level{i}"), *s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels, stage2 })
    }

    pub fn levels(&self) -> &[CamvLevel] {
        &self.levels
    }

    pub fn stage2(&self) -> bool {
        self.stage2
    }

    pub fn forward(&self, level: usize, angle: &[Tensor], distance: &[Tensor]) -> Result<Tensor> {
        self.levels[level].forward(angle, distance, self.stage2)
    }
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device};

    use super::*;

    fn randn(shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::randn(0f64, 1.0, shape, &Device::Cpu).unwrap()
    }

    fn zero_all(ps: &ParamStore, prefix: &str) {
        for p in ps.params().iter().filter(|p| p.name.starts_with(prefix)) {
            p.var.set(&p.var.zeros_like().unwrap()).unwrap();
        }
    }

    fn max_abs(t: &Tensor) -> f64 {
        t.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn zero_mode_matrices_give_half_gates() {
        let mut ps = ParamStore::new(DType::F64, 1);
        let ia = IntraAttention::new(&mut ps, "a", 3, 4, 5, 6).unwrap();
        for m in ia.modes() {
            for v in [&m.channel, &m.height, &m.width] {
                v.set(&v.zeros_like().unwrap()).unwrap();
            }
        }
        let f: Vec<Tensor> = (0..3).map(|_| randn((2, 4, 5, 6))).collect();
        let out = ia.forward(&f).unwrap();
        let expect = ((&f[0] + &f[1]).unwrap() + &f[2]).unwrap() * 0.5;
        assert!(max_abs(&(out - expect.unwrap()).unwrap()) < 1e-12);
    }

    #[test]
    fn gates_strictly_inside_unit_interval_and_bound_holds() {
        let mut ps = ParamStore::new(DType::F64, 2);
        let ia = IntraAttention::new(&mut ps, "a", 3, 8, 6, 6).unwrap();
        let f: Vec<Tensor> = (0..3).map(|_| (randn((1, 8, 6, 6)) * 3.0).unwrap()).collect();
        for g in ia.gates(&f).unwrap() {
            let v = g.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            assert!(v.iter().all(|x| *x > 0.0 && *x < 1.0));
        }
        let out = ia.forward(&f).unwrap();
        let bound = ((f[0].abs().unwrap() + f[1].abs().unwrap()).unwrap() + f[2].abs().unwrap()).unwrap();
        let slack = (bound - out.abs().unwrap()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(slack.iter().all(|s| *s >= 0.0));
        let zeros: Vec<Tensor> = (0..3).map(|_| f[0].zeros_like().unwrap()).collect();
        assert_eq!(max_abs(&ia.forward(&zeros).unwrap()), 0.0);
    }

    #[test]
    fn zeroed_gates_halve() {
        let mut ps = ParamStore::new(DType::F64, 3);
        let cg = ChannelGate::new(&mut ps, "cg", 8, 4).unwrap();
        let sg = SpatialGate::new(&mut ps, "sg").unwrap();
        zero_all(&ps, "");
        let f = randn((1, 8, 5, 5));
        let half = (&f * 0.5).unwrap();
        assert!(max_abs(&(cg.forward(&f).unwrap() - &half).unwrap()) < 1e-12);
        assert!(max_abs(&(sg.forward(&f).unwrap() - &half).unwrap()) < 1e-12);
        assert_eq!(sg.gate(&f).unwrap().dims(), &[1, 1, 5, 5]);
    }

    #[test]
    fn zero_views_give_fusion_bias() {
        let mut ps = ParamStore::new(DType::F64, 4);
        let shape = CamvShape { channels: 4, height: 6, width: 6, angle_views: 3, distance_views: 3 };
        let level = CamvLevel::new(&mut ps, "camv", shape).unwrap();
        let bias = ps.get("camv.fusion.bias").unwrap().var.clone();
        bias.set(&Tensor::new(&[0.1f64, -0.2, 0.3, 0.4], &Device::Cpu).unwrap()).unwrap();
        let z: Vec<Tensor> = (0..3).map(|_| Tensor::zeros((1, 4, 6, 6), DType::F64, &Device::Cpu).unwrap()).collect();
        let out = level.forward(&z, &z, true).unwrap();
        let v = out.squeeze(0).unwrap().to_vec3::<f64>().unwrap();
        for (c, b) in [0.1, -0.2, 0.3, 0.4].iter().enumerate() {
            assert!(v[c].iter().flatten().all(|x| (x - b).abs() < 1e-15));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ps = ParamStore::new(DType::F64, 5);
        let ia = IntraAttention::new(&mut ps, "a", 2, 4, 6, 6).unwrap();
        assert!(matches!(ia.forward(&[randn((1, 4, 6, 6)), randn((1, 4, 5, 6))]), Err(Error::DimMismatch(_))));
        assert!(matches!(ia.forward(&[randn((1, 4, 6, 6))]), Err(Error::DimMismatch(_))));
    }
}
