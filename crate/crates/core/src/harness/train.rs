//! The training loop: seeded mini-batches of precomputed view tensors, SGD under the
//! learning-rate schedule, periodic validation with checkpointing and early stopping.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::losses::{lambda_at, total_loss};
use crate::metrics::{evaluate_pair, mean_report, MetricReport};
use crate::model::Model;
use crate::ops::sigmoid;
use crate::params::ParamStore;
use crate::viewgen::ViewKind;

use super::checkpoint;
use super::config::TrainConfig;
use super::dataset::{load_dataset, split_train_val, Sample};
use super::early_stop::{should_stop, EvalHistory};
use super::schedule::lr_schedule;
use super::sgd::Sgd;

pub const DTYPE: DType = DType::F32;

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    /// Loss of every optimizer step.
    pub losses: Vec<f64>,
    /// Mean loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    pub history: EvalHistory,
    /// Best validation checkpoint by S-measure, or the final weights when nothing was validated.
    pub checkpoint: PathBuf,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub iterations: usize,
}

/// The trained network alongside the outcome; the weights are those of the last step.
pub struct TrainRun {
    pub params: ParamStore,
    pub model: Model,
    pub outcome: TrainOutcome,
}

struct Prepared {
    views: Vec<(ViewKind, Tensor)>,
    mask: Tensor,
}

fn mask_tensor(mask: &Array2<bool>) -> Result<Tensor> {
    let (h, w) = mask.dim();
    let data: Vec<f32> = mask.iter().map(|&m| m as u8 as f32).collect();
    Ok(Tensor::from_vec(data, (1, 1, h, w), &candle_core::Device::Cpu)?.to_dtype(DTYPE)?)
}

fn prepare(model: &Model, samples: &[Sample]) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| Ok(Prepared { views: model.view_tensors(&[&s.image], DTYPE)?, mask: mask_tensor(&s.mask)? }))
        .collect()
}

fn batch(items: &[&Prepared]) -> Result<(Vec<(ViewKind, Tensor)>, Tensor)> {
    let views = (0..items[0].views.len())
        .map(|v| {
            let parts: Vec<&Tensor> = items.iter().map(|p| &p.views[v].1).collect();
            Ok((items[0].views[v].0.clone(), Tensor::cat(&parts, 0)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<&Tensor> = items.iter().map(|p| &p.mask).collect();
    Ok((views, Tensor::cat(&masks, 0)?))
}

/// Probability map of one prepared sample.
pub fn predict_prepared(model: &Model, views: &[(ViewKind, Tensor)]) -> Result<Array2<f64>> {
    let p = sigmoid(&model.forward_views(views, Mode::Eval)?)?;
    let (_, _, h, w) = p.dims4()?;
    let data = p.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(Array2::from_shape_vec((h, w), data).expect("shape matches"))
}

/// Mean report of the model over samples at training resolution.
pub fn validate(model: &Model, samples: &[Sample]) -> Result<MetricReport> {
    let reports = samples
        .iter()
        .map(|s| evaluate_pair(&predict_prepared(model, &model.view_tensors(&[&s.image], DTYPE)?)?, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    mean_report(&reports)
}

/// Trains on `train_set`, validating on `val_set` every `eval_every` epochs when it is
/// non-empty. Artifacts go to `out_dir`.
pub fn train(cfg: &TrainConfig, train_set: &[Sample], val_set: &[Sample], out_dir: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset(out_dir.to_path_buf()));
    }
    std::fs::create_dir_all(out_dir)?;
    let ckpt_dir = out_dir.join("checkpoints");
    let mut ps = ParamStore::new(DTYPE, cfg.seed);
    let model = Model::new(&mut ps, &cfg.model)?;
    let data = prepare(&model, train_set)?;
    let iters_per_epoch = data.len().div_ceil(cfg.batch_size);
    let planned = cfg.epochs * iters_per_epoch;
    let total = cfg.max_iterations.map_or(planned, |m| m.min(planned));
    let lr = lr_schedule(&cfg.lr_schedule, cfg.lr, cfg.warmup_epochs * iters_per_epoch, total)?;
    let loss_cfg = cfg.loss();
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut losses = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut history = EvalHistory::new();
    let mut saved: Vec<(usize, PathBuf)> = Vec::new();
    let mut stopped_early = false;
    let mut csv = String::from("iteration,epoch,lr,lambda,loss\n");
    let mut iteration = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        let lambda = lambda_at(epoch - 1, &loss_cfg)?;
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if iteration >= total {
                break;
            }
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let (views, masks) = batch(&items)?;
            let logits = model.forward_views(&views, Mode::Train)?;
            let loss = total_loss(&logits, &masks, epoch - 1, &loss_cfg)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::DivergedLoss { iteration });
            }
            let rate = lr.lr(iteration);
            opt.step(&ps, &loss.backward()?, rate)?;
            let _ = writeln!(csv, "{iteration},{epoch},{rate},{lambda},{value}");
            losses.push(value);
            sum += value;
            steps += 1;
            iteration += 1;
        }
        if steps == 0 {
            break;
        }
        epoch_losses.push(sum / steps as f64);
        info!("epoch {epoch}: loss {:.5} after {iteration} steps", sum / steps as f64);

        if !val_set.is_empty() && (epoch - 1) % cfg.eval_every == 0 {
            let report = validate(&model, val_set)?;
            info!("epoch {epoch}: S {:.4} MAE {:.4}", report.s_measure, report.mae);
            history.push(epoch, report)?;
            let stem = checkpoint::save(&ps, &cfg.model, &ckpt_dir.join(format!("epoch_{epoch:03}")), Some(epoch))?;
            saved.push((epoch, stem));
            if cfg.early_stopping && history.len() >= 2 && should_stop(&history, cfg.stop_reference)? {
                info!("early stop at epoch {epoch}");
                stopped_early = true;
                break 'epochs;
            }
        }
        if iteration >= total {
            break;
        }
    }

    let best_epoch = history.best_epoch();
    let final_stem = checkpoint::save(&ps, &cfg.model, &ckpt_dir.join("final"), Some(epoch_losses.len()))?;
    let checkpoint = best_epoch
        .and_then(|b| saved.iter().find(|(e, _)| *e == b).map(|(_, p)| p.clone()))
        .unwrap_or(final_stem);
    let outcome = TrainOutcome { losses, epoch_losses, history, checkpoint, best_epoch, stopped_early, iterations: iteration };
    std::fs::write(out_dir.join("losses.csv"), csv)?;
    std::fs::write(out_dir.join("history.json"), serde_json::to_string_pretty(&outcome.history)?)?;
    std::fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    std::fs::write(out_dir.join("outcome.json"), serde_json::to_string_pretty(&outcome)?)?;
    Ok(TrainRun { params: ps, model, outcome })
}

/// Loads `train_root` (and `val_root`, or a seeded `val_fraction` hold-out of the training
/// pool) at the configured resolution, then trains.
pub fn train_dirs(cfg: &TrainConfig, train_root: &Path, val_root: Option<&Path>, out_dir: &Path) -> Result<TrainRun> {
    let pool = load_dataset(train_root, cfg.model.image_size)?;
    let (train_set, val_set) = match val_root {
        Some(v) => (pool, load_dataset(v, cfg.model.image_size)?),
        None => split_train_val(&pool, cfg.val_fraction, cfg.seed),
    };
    info!("training on {} images, validating on {}", train_set.len(), val_set.len());
    train(cfg, &train_set, &val_set, out_dir)
}
