//! Training configuration: profile defaults, a flat TOML file and flag overrides, applied in
//! that order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cfu::CfuConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::viewgen::ViewKind;

use super::early_stop::StopReference;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub profile: String,
    pub model: ModelConfig,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub lr_schedule: String,
    pub eval_every: usize,
    pub lambda_init: f64,
    pub lambda_schedule: String,
    pub early_stopping: bool,
    pub stop_reference: StopReference,
    pub val_fraction: f64,
    /// Stops after this many optimizer steps regardless of epochs.
    pub max_iterations: Option<usize>,
}

impl TrainConfig {
    pub fn for_profile(name: &str) -> Result<Self> {
        let model = ModelConfig::profile(name)?;
        let full = name == "full";
        Ok(Self {
            profile: name.into(),
            model,
            seed: 0,
            epochs: if full { 100 } else { 30 },
            batch_size: if full { 8 } else { 2 },
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_epochs: 3,
            lr_schedule: "cosine_warmup".into(),
            eval_every: 3,
            lambda_init: 1.5,
            lambda_schedule: "cosine".into(),
            early_stopping: true,
            stop_reference: StopReference::Previous,
            val_fraction: 0.1,
            max_iterations: None,
        })
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda_init: self.lambda_init, schedule: self.lambda_schedule.clone(), total_epochs: self.epochs }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        self.model.validate()?;
        super::schedule::lr_schedule(&self.lr_schedule, self.lr, 0, 1)?;
        crate::losses::lambda_schedule(&self.lambda_schedule, self.lambda_init)?;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(p) = &o.profile {
            if *p != self.profile {
                *self = Self::for_profile(p)?;
            }
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = &o.$field { self.$field = v.clone(); })* };
        }
        set!(seed, epochs, batch_size, lr, momentum, weight_decay, warmup_epochs, lr_schedule, eval_every, lambda_init, lambda_schedule, early_stopping, stop_reference, val_fraction);
        if o.max_iterations.is_some() {
            self.max_iterations = o.max_iterations;
        }
        let m = &mut self.model;
        if let Some(v) = o.image_size {
            m.image_size = v;
        }
        if let Some(v) = &o.views {
            m.views = v.iter().map(|s| s.parse()).collect::<Result<Vec<ViewKind>>>()?;
        }
        if let Some(v) = o.camv_stage2 {
            m.camv_stage2 = v;
        }
        if let Some(v) = o.cfu_enabled {
            m.cfu_enabled = v;
        }
        let c = &mut m.cfu;
        *c = CfuConfig {
            width: o.cfu_width.unwrap_or(c.width),
            chunks: o.cfu_chunks.unwrap_or(c.chunks),
            steps: o.cfu_steps.unwrap_or(c.steps),
        };
        if let Some(v) = o.encoder_depth {
            m.encoder.depth = v;
        }
        if let Some(v) = o.encoder_width {
            m.encoder.base_width = v;
        }
        if let Some(v) = &o.weights {
            m.encoder.weights = Some(v.clone());
        }
        Ok(())
    }

    /// Profile defaults, then the optional file, then `flags`.
    pub fn resolve(profile: &str, file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut base = Overrides::default();
        if let Some(path) = file {
            base = Overrides::from_file(path)?;
        }
        let name = flags.profile.as_deref().or(base.profile.as_deref()).unwrap_or(profile).to_string();
        let mut cfg = Self::for_profile(&name)?;
        cfg.apply(&Overrides { profile: None, ..base })?;
        cfg.apply(&Overrides { profile: None, ..flags.clone() })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flat keys accepted in a config file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub image_size: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub lr_schedule: Option<String>,
    pub eval_every: Option<usize>,
    pub views: Option<Vec<String>>,
    pub camv_stage2: Option<bool>,
    pub cfu_enabled: Option<bool>,
    pub cfu_width: Option<usize>,
    pub cfu_chunks: Option<usize>,
    pub cfu_steps: Option<usize>,
    pub encoder_depth: Option<usize>,
    pub encoder_width: Option<usize>,
    pub weights: Option<PathBuf>,
    pub lambda_init: Option<f64>,
    pub lambda_schedule: Option<String>,
    pub early_stopping: Option<bool>,
    pub stop_reference: Option<StopReference>,
    pub val_fraction: Option<f64>,
    pub max_iterations: Option<usize>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults() {
        let full = TrainConfig::for_profile("full").unwrap();
        assert_eq!((full.batch_size, full.model.image_size, full.lr), (8, 384, 0.01));
        assert_eq!((full.momentum, full.weight_decay, full.eval_every), (0.9, 5e-4, 3));
        full.validate().unwrap();
        let tiny = TrainConfig::for_profile("tiny").unwrap();
        assert_eq!((tiny.batch_size, tiny.model.image_size), (2, 64));
        assert!(TrainConfig::for_profile("medium").is_err());
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "epochs = 7\nviews = [\"original\", \"vertical\"]\ncamv_stage2 = false\nlr = 0.02\n").unwrap();
        let flags = Overrides { lr: Some(0.05), ..Default::default() };
        let cfg = TrainConfig::resolve("tiny", Some(&path), &flags).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.05);
        assert!(!cfg.model.camv_stage2);
        assert_eq!(cfg.model.views, vec![ViewKind::Original, ViewKind::VerticalFlip]);
        std::fs::write(&path, "epoch = 7\n").unwrap();
        assert!(matches!(TrainConfig::resolve("tiny", Some(&path), &Overrides::default()), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        let flags = Overrides { batch_size: Some(0), ..Default::default() };
        assert!(TrainConfig::resolve("tiny", None, &flags).is_err());
        let flags = Overrides { image_size: Some(100), ..Default::default() };
        assert!(TrainConfig::resolve("tiny", None, &flags).is_err());
    }
}
