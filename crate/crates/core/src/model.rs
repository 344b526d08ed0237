//! The full network: view generation, shared encoder, per-level view alignment and
//! co-attention, optional channel fusion, and the decoder.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::camv::{Camv, CamvShape};
use crate::cfu::{Cfu, CfuConfig, Decoder};
use crate::encoder::{Encoder, EncoderConfig, LEVELS, STRIDE};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::params::ParamStore;
use crate::viewgen::{default_views, stack_images, validate_views, AlignTarget, Image, ViewFamily, ViewKind, ViewTransform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub views: Vec<ViewKind>,
    /// Square input side; every view must stay divisible by 32.
    pub image_size: usize,
    pub camv_stage2: bool,
    pub cfu_enabled: bool,
    pub cfu: CfuConfig,
}

pub const PROFILES: [&str; 2] = ["tiny", "full"];

impl ModelConfig {
    /// Depth-50 encoder at 384 px.
    pub fn full() -> Self {
        Self {
            encoder: EncoderConfig::resnet50(),
            views: default_views(),
            image_size: 384,
            camv_stage2: true,
            cfu_enabled: true,
            cfu: CfuConfig { width: 192, chunks: 3, steps: 4 },
        }
    }

    /// Width-reduced depth-18 encoder at 64 px.
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig::tiny(),
            views: default_views(),
            image_size: 64,
            camv_stage2: true,
            cfu_enabled: true,
            cfu: CfuConfig { width: 66, chunks: 3, steps: 4 },
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "full" => Ok(Self::full()),
            other => Err(Error::UnknownStrategy { kind: "profile", name: other.into() }),
        }
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        (1..=LEVELS).map(|i| self.image_size >> i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % STRIDE != 0 {
            return Err(Error::IndivisibleInput { height: self.image_size, width: self.image_size });
        }
        validate_views(&self.views)?;
        for v in &self.views {
            let (h, w) = v.output_size(self.image_size, self.image_size);
            if h == 0 || h % STRIDE != 0 || w % STRIDE != 0 {
                return Err(Error::Config(format!(
                    "view {v} turns {0}x{0} into {h}x{w}, which is not divisible by {STRIDE}",
                    self.image_size
                )));
            }
        }
        Ok(())
    }

    fn branch_views(&self, family: ViewFamily) -> usize {
        match self.views.iter().filter(|v| v.family() == family).count() {
            0 => 3,
            n => n + 1,
        }
    }
}

pub struct Model {
    config: ModelConfig,
    encoder: Encoder,
    camv: Camv,
    cfu: Option<Cfu>,
    decoder: Decoder,
    transforms: Vec<Box<dyn ViewTransform>>,
}

impl Model {
    pub fn new(ps: &mut ParamStore, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(ps, &config.encoder)?;
        let c = config.encoder.fpn_channels;
        let shapes: Vec<CamvShape> = config
            .level_sizes()
            .into_iter()
            .map(|s| CamvShape {
                channels: c,
                height: s,
                width: s,
                angle_views: config.branch_views(ViewFamily::Angle),
                distance_views: config.branch_views(ViewFamily::Distance),
            })
            .collect();
        let camv = Camv::new(ps, "camv", &shapes, config.camv_stage2)?;
        let cfu = if config.cfu_enabled { Some(Cfu::new(ps, "cfu", c, LEVELS, config.cfu)?) } else { None };
        let decoder = Decoder::new(ps, "decoder", c, LEVELS)?;
        let transforms = config.views.iter().map(ViewKind::transform).collect::<Result<Vec<_>>>()?;
        Ok(Self { config: config.clone(), encoder, camv, cfu, decoder, transforms })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Builds one `(batch, 3, h, w)` tensor per configured view from base images of size
    /// `image_size`.
    pub fn view_tensors(&self, images: &[&Image], dtype: DType) -> Result<Vec<(ViewKind, Tensor)>> {
        self.transforms
            .iter()
            .map(|t| {
                let views = images.iter().map(|img| t.apply(img)).collect::<Result<Vec<_>>>()?;
                Ok((t.kind(), stack_images(&views.iter().collect::<Vec<_>>(), dtype)?))
            })
            .collect()
    }

    /// Logits `(batch, 1, H, W)` from per-view input tensors in configuration order.
    pub fn forward_views(&self, views: &[(ViewKind, Tensor)], mode: Mode) -> Result<Tensor> {
        if views.len() != self.transforms.len() {
            return Err(Error::DimMismatch(format!("expected {} views, got {}", self.transforms.len(), views.len())));
        }
        let base = views
            .iter()
            .find(|(k, _)| *k == ViewKind::Original)
            .map(|(_, t)| t.dims4())
            .ok_or(Error::MissingOriginal)??;
        let pyramids = self.encoder.encode_views(views, mode)?;
        let mut enhanced = Vec::with_capacity(LEVELS);
        for level in 0..LEVELS {
            let original = pyramids
                .iter()
                .find(|(k, _)| *k == ViewKind::Original)
                .map(|(_, p)| p.levels[level].clone())
                .ok_or(Error::MissingOriginal)?;
            let (_, _, h, w) = original.dims4()?;
            let target = AlignTarget { height: h, width: w, base_height: base.2, base_width: base.3 };
            let mut angle = Vec::new();
            let mut distance = Vec::new();
            for ((kind, pyramid), t) in pyramids.iter().zip(&self.transforms) {
                match kind.family() {
                    ViewFamily::Original => {}
                    ViewFamily::Angle => angle.push(t.align(&pyramid.levels[level], target)?),
                    ViewFamily::Distance => distance.push(t.align(&pyramid.levels[level], target)?),
                }
            }
            for branch in [&mut angle, &mut distance] {
                if branch.is_empty() {
                    branch.extend([original.clone(), original.clone()]);
                }
                branch.push(original.clone());
            }
            let mut f = self.camv.forward(level, &angle, &distance)?;
            if let Some(cfu) = &self.cfu {
                f = cfu.forward(level, &f, mode)?;
            }
            enhanced.push(f);
        }
        self.decoder.forward(&enhanced)
    }

    pub fn forward(&self, images: &[&Image], dtype: DType, mode: Mode) -> Result<Tensor> {
        self.forward_views(&self.view_tensors(images, dtype)?, mode)
    }
}

/// Trainable scalars per top-level block.
pub fn parameter_breakdown(ps: &ParamStore) -> Vec<(&'static str, usize)> {
    ["encoder.backbone.", "encoder.fpn.", "camv.", "cfu.", "decoder."].iter().map(|p| (*p, ps.count_prefix(p))).collect()
}

/// Trainable parameter count of a configuration, without random initialization.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    let mut ps = ParamStore::shape_only(DType::F32);
    Model::new(&mut ps, config)?;
    Ok(ps.count_trainable())
}
