//! Channel interaction and progressive refinement per level, plus the coarse-to-fine
//! decoder.
//!
//! Each level: 3x3 conv to the working width, split into `j` channel chunks, fold the
//! chunks left to right through CLIP steps, reassemble as `[chunk_1, y_1, .., y_{j-1}]`,
//! refine with `S` shared-weight iterations, and project back to the level width.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2d, ConvSpec, Mode};
use crate::ops::{mode_product, resize_bilinear};
use crate::params::{join, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfuConfig {
    /// Working width after the input conv; must be divisible by `chunks`.
    pub width: usize,
    pub chunks: usize,
    pub steps: usize,
}

impl Default for CfuConfig {
    fn default() -> Self {
        Self { width: 66, chunks: 3, steps: 4 }
    }
}

/// Contiguous, order-preserving channel slices.
pub fn split_chunks(f: &Tensor, j: usize) -> Result<Vec<Tensor>> {
    let c = f.dims()[1];
    if j == 0 || c % j != 0 {
        return Err(Error::IndivisibleChannels { channels: c, chunks: j });
    }
    let n = c / j;
    (0..j).map(|k| Ok(f.narrow(1, k * n, n)?)).collect()
}

/// `Tucker(Cat(f_next, Conv(f_prev)))`: mode-1 product with a learned square matrix, then a
/// 1x1 projection halving the channels.
pub struct ClipStep {
    conv: Conv2d,
    tucker: Var,
    proj: Conv2d,
    channels: usize,
}

impl ClipStep {
    pub fn new(ps: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(ps, &join(prefix, "conv"), ConvSpec::same(channels, channels, 3))?,
            tucker: ps.identity(&join(prefix, "tucker"), 2 * channels)?,
            proj: Conv2d::new(ps, &join(prefix, "proj"), ConvSpec::same(2 * channels, channels, 1))?,
            channels,
        })
    }

    pub fn forward(&self, f_next: &Tensor, f_prev: &Tensor) -> Result<Tensor> {
        if f_next.dims() != f_prev.dims() || f_next.dims()[1] != self.channels {
            return Err(Error::DimMismatch(format!(
                "clip inputs {:?} and {:?}, expected {} channels",
                f_next.dims(),
                f_prev.dims(),
                self.channels
            )));
        }
        let cat = Tensor::cat(&[f_next.clone(), self.conv.forward(f_prev)?], 1)?;
        self.proj.forward(&mode_product(&cat, self.tucker.as_tensor(), 1)?)
    }
}

/// Sequential fold over the chunks; returns the reassembled map.
pub fn run_clip(chunks: &[Tensor], steps: &[ClipStep]) -> Result<Tensor> {
    if chunks.len() < 2 {
        return Err(Error::TooFewChunks(chunks.len()));
    }
    if steps.len() != chunks.len() - 1 {
        return Err(Error::DimMismatch(format!("{} chunks need {} clip steps, got {}", chunks.len(), chunks.len() - 1, steps.len())));
    }
    let mut parts = vec![chunks[0].clone()];
    let mut prev = chunks[0].clone();
    for (next, step) in chunks[1..].iter().zip(steps) {
        prev = step.forward(next, &prev)?;
        parts.push(prev.clone());
    }
    Ok(Tensor::cat(&parts, 1)?)
}

/// conv3x3 -> BN -> ReLU -> conv3x3, channel-preserving.
pub struct Cbr {
    conv1: Conv2d,
    bn: BatchNorm,
    conv2: Conv2d,
}

impl Cbr {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(ps, &join(prefix, "conv1"), ConvSpec::same(c, c, 3).no_bias())?,
            bn: BatchNorm::new(ps, &join(prefix, "bn"), c)?,
            conv2: Conv2d::new(ps, &join(prefix, "conv2"), ConvSpec::same(c, c, 3))?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.conv2.forward(&self.bn.forward(&self.conv1.forward(x)?, mode)?.relu()?)
    }
}

/// `z0 = CBR_init(z)`, then `z_{s+1} = CBR_iter(z_s + z0)` for `steps` iterations.
pub struct Opi {
    init: Cbr,
    iter: Cbr,
}

impl Opi {
    pub fn new(ps: &mut ParamStore, prefix: &str, c: usize) -> Result<Self> {
        Ok(Self { init: Cbr::new(ps, &join(prefix, "init"), c)?, iter: Cbr::new(ps, &join(prefix, "iter"), c)? })
    }

    pub fn forward(&self, z: &Tensor, steps: usize, mode: Mode) -> Result<Tensor> {
        if steps == 0 {
            return Err(Error::Config("progressive iteration needs at least one step".into()));
        }
        let z0 = self.init.forward(z, mode)?;
        let mut zs = z0.clone();
        for _ in 0..steps {
            zs = self.iter.forward(&(&zs + &z0)?, mode)?;
        }
        Ok(zs)
    }
}

pub struct CfuLevel {
    input: Conv2d,
    clips: Vec<ClipStep>,
    opi: Opi,
    output: Conv2d,
    config: CfuConfig,
}

impl CfuLevel {
    pub fn new(ps: &mut ParamStore, prefix: &str, channels: usize, config: CfuConfig) -> Result<Self> {
        if config.chunks < 2 {
            return Err(Error::TooFewChunks(config.chunks));
        }
        if config.width % config.chunks != 0 {
            return Err(Error::IndivisibleChannels { channels: config.width, chunks: config.chunks });
        }
        let chunk = config.width / config.chunks;
        Ok(Self {
            input: Conv2d::new(ps, &join(prefix, "input"), ConvSpec::same(channels, config.width, 3))?,
            clips: (0..config.chunks - 1)
                .map(|k| ClipStep::new(ps, &format!("{prefix}.clip.{k}"), chunk))
                .collect::<Result<Vec<_>>>()?,
            opi: Opi::new(ps, &join(prefix, "opi"), config.width)?,
            output: Conv2d::new(ps, &join(prefix, "output"), ConvSpec::same(config.width, channels, 3))?,
            config,
        })
    }

    pub fn clips(&self) -> &[ClipStep] {
        &self.clips
    }

    pub fn forward(&self, f: &Tensor, mode: Mode) -> Result<Tensor> {
        let x = self.input.forward(f)?;
        let z = run_clip(&split_chunks(&x, self.config.chunks)?, &self.clips)?;
        self.output.forward(&self.opi.forward(&z, self.config.steps, mode)?)
    }
}

pub struct Cfu {
    levels: Vec<CfuLevel>,
}

impl Cfu {
    pub fn new(ps: &mut ParamStore, prefix: &str, channels: usize, levels: usize, config: CfuConfig) -> Result<Self> {
        let levels = (0..levels)
            .map(|i| CfuLevel::new(ps, &format!("{prefix}.level{i}"), channels, config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[CfuLevel] {
        &self.levels
    }

    pub fn forward(&self, level: usize, f: &Tensor, mode: Mode) -> Result<Tensor> {
        self.levels[level].forward(f, mode)
    }
}

/// Coarse-to-fine fusion: upsample, concatenate with the next finer level, 3x3 conv + ReLU;
/// a 1x1 head gives one logit channel, upsampled x2 to the input resolution.
pub struct Decoder {
    fuse: Vec<Conv2d>,
    head: Conv2d,
}

impl Decoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, channels: usize, levels: usize) -> Result<Self> {
        let fuse = (0..levels.saturating_sub(1))
            .map(|i| Conv2d::new(ps, &format!("{prefix}.fuse.{i}"), ConvSpec::same(2 * channels, channels, 3)))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv2d::new(ps, &join(prefix, "head"), ConvSpec::same(channels, 1, 1))?;
        Ok(Self { fuse, head })
    }

    pub fn fuse_convs(&self) -> &[Conv2d] {
        &self.fuse
    }

    /// `levels` are fine to coarse, each half the size of the previous one.
    pub fn forward(&self, levels: &[Tensor]) -> Result<Tensor> {
        if levels.len() != self.fuse.len() + 1 {
            return Err(Error::LevelShapeMismatch(format!("expected {} levels, got {}", self.fuse.len() + 1, levels.len())));
        }
        for pair in levels.windows(2) {
            let (fine, coarse) = (pair[0].dims(), pair[1].dims());
            if fine.len() != 4 || coarse.len() != 4 || fine[..2] != coarse[..2] || fine[2] != 2 * coarse[2] || fine[3] != 2 * coarse[3] {
                return Err(Error::LevelShapeMismatch(format!("{fine:?} is not twice {coarse:?}")));
            }
        }
        let mut x = levels[levels.len() - 1].clone();
        for (i, fine) in levels[..levels.len() - 1].iter().enumerate().rev() {
            let (_, _, h, w) = fine.dims4()?;
            let up = resize_bilinear(&x, h, w)?;
            x = self.fuse[i].forward(&Tensor::cat(&[up, fine.clone()], 1)?)?.relu()?;
        }
        // the 1x1 head commutes with bilinear upsampling
        let logits = self.head.forward(&x)?;
        let (_, _, h, w) = logits.dims4()?;
        resize_bilinear(&logits, 2 * h, 2 * w)
    }
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device};

    use super::*;

    fn randn(shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::randn(0f64, 1.0, shape, &Device::Cpu).unwrap()
    }

    fn flat(t: &Tensor) -> Vec<f64> {
        t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
    }

    #[test]
    fn split_round_trip_and_errors() {
        let f = randn((1, 64, 3, 3));
        let parts = split_chunks(&f, 4).unwrap();
        assert!(parts.iter().all(|p| p.dims()[1] == 16));
        assert_eq!(flat(&Tensor::cat(&parts, 1).unwrap()), flat(&f));
        assert_eq!(flat(&split_chunks(&f, 1).unwrap()[0]), flat(&f));
        assert!(matches!(split_chunks(&f, 3), Err(Error::IndivisibleChannels { channels: 64, chunks: 3 })));
        assert_eq!(split_chunks(&randn((1, 66, 2, 2)), 3).unwrap()[2].dims()[1], 22);
    }

    #[test]
    fn zero_clip_gives_projection_bias() {
        let mut ps = ParamStore::new(DType::F64, 1);
        let step = ClipStep::new(&mut ps, "clip", 2).unwrap();
        for p in ps.params() {
            p.var.set(&p.var.zeros_like().unwrap()).unwrap();
        }
        ps.get("clip.proj.bias").unwrap().var.set(&Tensor::new(&[0.5f64, -1.0], &Device::Cpu).unwrap()).unwrap();
        let out = step.forward(&randn((1, 2, 4, 4)), &randn((1, 2, 4, 4))).unwrap();
        let v = out.squeeze(0).unwrap().to_vec3::<f64>().unwrap();
        assert!(v[0].iter().flatten().all(|x| *x == 0.5));
        assert!(v[1].iter().flatten().all(|x| *x == -1.0));
    }

    #[test]
    fn run_clip_structure() {
        let mut ps = ParamStore::new(DType::F64, 2);
        let steps = vec![ClipStep::new(&mut ps, "c0", 3).unwrap()];
        let chunks = [randn((1, 3, 4, 4)), randn((1, 3, 4, 4))];
        let z = run_clip(&chunks, &steps).unwrap();
        assert_eq!(z.dims(), &[1, 6, 4, 4]);
        assert_eq!(flat(&z.narrow(1, 0, 3).unwrap()), flat(&chunks[0]));
        let y = steps[0].forward(&chunks[1], &chunks[0]).unwrap();
        assert_eq!(flat(&z.narrow(1, 3, 3).unwrap()), flat(&y));
        assert!(matches!(run_clip(&chunks[..1], &[]), Err(Error::TooFewChunks(1))));
    }

    #[test]
    fn opi_steps_matter() {
        let mut ps = ParamStore::new(DType::F64, 3);
        let opi = Opi::new(&mut ps, "opi", 4).unwrap();
        let z = randn((2, 4, 5, 5));
        let a = flat(&opi.forward(&z, 1, Mode::Eval).unwrap());
        let b = flat(&opi.forward(&z, 2, Mode::Eval).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
        // one step unrolled by hand
        let z0 = opi.init.forward(&z, Mode::Eval).unwrap();
        let manual = opi.iter.forward(&(&z0 + &z0).unwrap(), Mode::Eval).unwrap();
        assert_eq!(a, flat(&manual));
    }

    #[test]
    fn decoder_shapes_and_checks() {
        let mut ps = ParamStore::new(DType::F64, 4);
        let dec = Decoder::new(&mut ps, "decoder", 4, 5).unwrap();
        let levels: Vec<Tensor> = [32, 16, 8, 4, 2].iter().map(|&s| randn((1, 4, s, s))).collect();
        assert_eq!(dec.forward(&levels).unwrap().dims(), &[1, 1, 64, 64]);
        let mut bad = levels.clone();
        bad[2] = randn((1, 4, 7, 7));
        assert!(matches!(dec.forward(&bad), Err(Error::LevelShapeMismatch(_))));
        let zeros: Vec<Tensor> = levels.iter().map(|l| l.zeros_like().unwrap()).collect();
        let out = flat(&dec.forward(&zeros).unwrap());
        assert!(out.iter().all(|v| *v == out[0]));
    }

    #[test]
    fn level_rejects_bad_chunking() {
        let mut ps = ParamStore::shape_only(DType::F32);
        assert!(matches!(
            CfuLevel::new(&mut ps, "x", 64, CfuConfig { width: 64, chunks: 3, steps: 4 }),
            Err(Error::IndivisibleChannels { .. })
        ));
        assert!(matches!(CfuLevel::new(&mut ps, "y", 64, CfuConfig { width: 64, chunks: 1, steps: 4 }), Err(Error::TooFewChunks(1))));
    }
}
