//! Shared residual backbone plus a top-down feature pyramid neck.
//!
//! Backbone tensors follow torchvision's ResNet naming (`conv1`, `bn1`, `layer1.0.conv1`,
//! `layer1.0.downsample.0`, ...) under the `encoder.backbone.` prefix, so a torchvision
//! state dict exported to safetensors loads without renaming. The pyramid taps the stem
//! activation and the four residual stages, giving strides 2, 4, 8, 16, 32.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2d, ConvSpec, Mode};
use crate::ops;
use crate::params::{join, ParamStore};
use crate::viewgen::{stack_images, ViewKind, ViewSet};

pub const LEVELS: usize = 5;
pub const STRIDE: usize = 32;
const PREFIX: &str = "encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// 18, 34 or 50.
    pub depth: usize,
    /// Stem width; 64 for the standard networks.
    pub base_width: usize,
    pub fpn_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl EncoderConfig {
    pub fn resnet50() -> Self {
        Self { depth: 50, base_width: 64, fpn_channels: 64, weights: None }
    }

    pub fn resnet18() -> Self {
        Self { depth: 18, base_width: 64, fpn_channels: 64, weights: None }
    }

    /// Width-reduced depth-18 network for desk-scale runs.
    pub fn tiny() -> Self {
        Self { depth: 18, base_width: 16, fpn_channels: 64, weights: None }
    }

    fn layout(&self) -> Result<(bool, [usize; 4])> {
        match self.depth {
            18 => Ok((false, [2, 2, 2, 2])),
            34 => Ok((false, [3, 4, 6, 3])),
            50 => Ok((true, [3, 4, 6, 3])),
            101 => Ok((true, [3, 4, 23, 3])),
            d => Err(Error::UnsupportedDepth(d)),
        }
    }

    /// Channel count of each tapped stage, fine to coarse.
    pub fn tap_channels(&self) -> Result<[usize; LEVELS]> {
        let (bottleneck, _) = self.layout()?;
        let e = if bottleneck { 4 } else { 1 };
        let w = self.base_width;
        Ok([w, w * e, 2 * w * e, 4 * w * e, 8 * w * e])
    }
}

/// Five feature maps `(batch, channels, h_i, w_i)`, fine to coarse.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn sizes(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|t| (t.dims()[2], t.dims()[3])).collect()
    }
}

struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    fn new(ps: &mut ParamStore, prefix: &str, conv: &str, bn: &str, spec: ConvSpec) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(ps, &join(prefix, conv), spec.he())?,
            bn: BatchNorm::new(ps, &join(prefix, bn), spec.out_channels)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, mode)
    }
}

/// Basic or bottleneck residual block: every unit but the last is followed by ReLU.
struct Block {
    units: Vec<ConvBn>,
    downsample: Option<ConvBn>,
}

impl Block {
    fn new(ps: &mut ParamStore, prefix: &str, bottleneck: bool, inp: usize, planes: usize, stride: usize) -> Result<Self> {
        let (units, out) = if bottleneck {
            let out = planes * 4;
            let units = vec![
                ConvBn::new(ps, prefix, "conv1", "bn1", ConvSpec::same(inp, planes, 1).no_bias())?,
                ConvBn::new(ps, prefix, "conv2", "bn2", ConvSpec::same(planes, planes, 3).no_bias().stride(stride))?,
                ConvBn::new(ps, prefix, "conv3", "bn3", ConvSpec::same(planes, out, 1).no_bias())?,
            ];
            (units, out)
        } else {
            let units = vec![
                ConvBn::new(ps, prefix, "conv1", "bn1", ConvSpec::same(inp, planes, 3).no_bias().stride(stride))?,
                ConvBn::new(ps, prefix, "conv2", "bn2", ConvSpec::same(planes, planes, 3).no_bias())?,
            ];
            (units, planes)
        };
        let downsample = if stride != 1 || inp != out {
            Some(ConvBn::new(ps, prefix, "downsample.0", "downsample.1", ConvSpec::same(inp, out, 1).no_bias().stride(stride))?)
        } else {
            None
        };
        Ok(Self { units, downsample })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut y = x.clone();
        let last = self.units.len() - 1;
        for (i, u) in self.units.iter().enumerate() {
            y = u.forward(&y, mode)?;
            if i < last {
                y = y.relu()?;
            }
        }
        let skip = match &self.downsample {
            Some(d) => d.forward(x, mode)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

pub struct Encoder {
    config: EncoderConfig,
    stem: ConvBn,
    stages: Vec<Vec<Block>>,
    laterals: Vec<Conv2d>,
    smooth: Vec<Conv2d>,
}

impl Encoder {
    /// Registers all encoder parameters in `ps`; if `config.weights` is set, backbone
    /// tensors are then overwritten from that file.
    pub fn new(ps: &mut ParamStore, config: &EncoderConfig) -> Result<Self> {
        let (bottleneck, blocks) = config.layout()?;
        let bb = join(PREFIX, "backbone");
        let w = config.base_width;
        let stem = ConvBn::new(ps, &bb, "conv1", "bn1", ConvSpec::same(3, w, 7).no_bias().stride(2))?;
        let mut inp = w;
        let mut stages = Vec::with_capacity(4);
        for (s, &n) in blocks.iter().enumerate() {
            let planes = w << s;
            let mut stage = Vec::with_capacity(n);
            for b in 0..n {
                let stride = if b == 0 && s > 0 { 2 } else { 1 };
                let block = Block::new(ps, &format!("{bb}.layer{}.{b}", s + 1), bottleneck, inp, planes, stride)?;
                inp = if bottleneck { planes * 4 } else { planes };
                stage.push(block);
            }
            stages.push(stage);
        }
        let taps = config.tap_channels()?;
        let c = config.fpn_channels;
        let fpn = join(PREFIX, "fpn");
        let laterals = taps
            .iter()
            .enumerate()
            .map(|(i, &t)| Conv2d::new(ps, &format!("{fpn}.lateral.{i}"), ConvSpec::same(t, c, 1)))
            .collect::<Result<Vec<_>>>()?;
        let smooth = (0..LEVELS)
            .map(|i| Conv2d::new(ps, &format!("{fpn}.smooth.{i}"), ConvSpec::same(c, c, 3)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(path) = &config.weights {
            load_backbone(ps, path)?;
        }
        Ok(Self { config: config.clone(), stem, stages, laterals, smooth })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `x` is `(batch, 3, H, W)` with `H` and `W` divisible by 32.
    pub fn encode(&self, x: &Tensor, mode: Mode) -> Result<FeaturePyramid> {
        let (_, _, h, w) = x.dims4()?;
        if h % STRIDE != 0 || w % STRIDE != 0 || h == 0 || w == 0 {
            return Err(Error::IndivisibleInput { height: h, width: w });
        }
        let mut taps = Vec::with_capacity(LEVELS);
        let mut y = self.stem.forward(x, mode)?.relu()?;
        taps.push(y.clone());
        y = ops::max_pool_3x3_s2(&y)?;
        for stage in &self.stages {
            for block in stage {
                y = block.forward(&y, mode)?;
            }
            taps.push(y.clone());
        }
        let mut merged: Vec<Tensor> = Vec::with_capacity(LEVELS);
        for i in (0..LEVELS).rev() {
            let lat = self.laterals[i].forward(&taps[i])?;
            let p = match merged.last() {
                Some(coarse) => {
                    let (_, _, lh, lw) = lat.dims4()?;
                    (lat + ops::resize_bilinear(coarse, lh, lw)?)?
                }
                None => lat,
            };
            merged.push(p);
        }
        merged.reverse();
        let levels = merged.iter().zip(&self.smooth).map(|(p, s)| s.forward(p)).collect::<Result<Vec<_>>>()?;
        Ok(FeaturePyramid { levels })
    }

    /// Runs the shared encoder over every view; each entry is a `(batch, 3, H, W)` tensor.
    pub fn encode_views(&self, views: &[(ViewKind, Tensor)], mode: Mode) -> Result<Vec<(ViewKind, FeaturePyramid)>> {
        views.iter().map(|(k, x)| Ok((k.clone(), self.encode(x, mode)?))).collect()
    }

    /// Single-image convenience over a generated view set.
    pub fn encode_view_set(&self, vs: &ViewSet, dtype: candle_core::DType, mode: Mode) -> Result<Vec<(ViewKind, FeaturePyramid)>> {
        let tensors = vs
            .views
            .iter()
            .map(|(k, img)| Ok((k.clone(), stack_images(&[img], dtype)?)))
            .collect::<Result<Vec<_>>>()?;
        self.encode_views(&tensors, mode)
    }
}

/// Copies backbone tensors (torchvision names, no prefix) from a safetensors file.
pub fn load_backbone(ps: &ParamStore, path: &Path) -> Result<usize> {
    let tensors = candle_core::safetensors::load(path, &Device::Cpu)
        .map_err(|e| Error::WeightFileUnreadable { path: path.to_path_buf(), reason: e.to_string() })?;
    ps.load_prefix(&tensors, "", &format!("{PREFIX}.backbone."))
}
