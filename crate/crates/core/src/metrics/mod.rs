//! Camouflaged-object evaluation measures.
//!
//! Conventions follow the common saliency/COD evaluation toolboxes: predictions are
//! min-max normalized per image (when not constant), thresholds are `k / 255` for
//! `k = 0..=255` with `p >= t` counted as foreground, F-measures use `beta^2 = 0.3`, and
//! undefined ratios evaluate to 0.

mod emeasure;
mod fmeasure;
mod report;
mod smeasure;
mod wfm;

use ndarray::Array2;

pub use emeasure::{e_measure, EMode};
pub use fmeasure::{adaptive_threshold, f_beta, f_curves, Curves, FMode, BETA2};
pub use report::{evaluate_dir, evaluate_pair, mean_report, write_report, MetricReport};
pub use smeasure::{s_measure, ALPHA};
pub use wfm::{distance_transform, f_beta_weighted};

use crate::error::{Error, Result};

/// Prediction map with values in `[0, 1]`.
pub type PredMap = Array2<f64>;
pub type GtMask = Array2<bool>;

/// Machine epsilon used by the reference toolboxes to guard divisions.
pub const EPS: f64 = 2.220446049250313e-16;

pub const THRESHOLDS: usize = 256;

pub fn threshold(k: usize) -> f64 {
    k as f64 / 255.0
}

/// Min-max normalization; constant maps are returned unchanged.
pub fn normalize(p: &PredMap) -> PredMap {
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        p.mapv(|v| (v - min) / (max - min))
    } else {
        p.clone()
    }
}

pub(crate) fn prepare(p: &PredMap, g: &GtMask) -> Result<PredMap> {
    if p.dim() != g.dim() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs ground truth {:?}", p.dim(), g.dim())));
    }
    if p.is_empty() {
        return Err(Error::ShapeMismatch("empty map".into()));
    }
    Ok(normalize(p))
}

pub fn mae(p: &PredMap, g: &GtMask) -> Result<f64> {
    let p = prepare(p, g)?;
    let sum: f64 = p.iter().zip(g.iter()).map(|(&v, &t)| (v - if t { 1.0 } else { 0.0 }).abs()).sum();
    Ok(sum / p.len() as f64)
}

/// A named scalar measure over one prediction/mask pair.
pub trait Measure: Send + Sync {
    fn name(&self) -> &'static str;

    /// True for error-style measures (MAE).
    fn lower_is_better(&self) -> bool {
        false
    }

    fn score(&self, p: &PredMap, g: &GtMask) -> Result<f64>;
}

struct FnMeasure {
    name: &'static str,
    lower: bool,
    f: fn(&PredMap, &GtMask) -> Result<f64>,
}

impl Measure for FnMeasure {
    fn name(&self) -> &'static str {
        self.name
    }

    fn lower_is_better(&self) -> bool {
        self.lower
    }

    fn score(&self, p: &PredMap, g: &GtMask) -> Result<f64> {
        (self.f)(p, g)
    }
}

const REGISTRY: &[(&str, bool, fn(&PredMap, &GtMask) -> Result<f64>)] = &[
    ("s_measure", false, |p, g| s_measure(p, g, ALPHA)),
    ("wf_measure", false, f_beta_weighted),
    ("mae", true, mae),
    ("f_adaptive", false, |p, g| f_beta(p, g, FMode::Adaptive)),
    ("f_mean", false, |p, g| f_beta(p, g, FMode::Mean)),
    ("f_max", false, |p, g| f_beta(p, g, FMode::Max)),
    ("e_adaptive", false, |p, g| e_measure(p, g, EMode::Adaptive)),
    ("e_mean", false, |p, g| e_measure(p, g, EMode::Mean)),
    ("e_max", false, |p, g| e_measure(p, g, EMode::Max)),
];

pub fn measure_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _, _)| *n).collect()
}

pub fn measure(name: &str) -> Result<Box<dyn Measure>> {
    REGISTRY
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(name, lower, f)| Box::new(FnMeasure { name, lower, f }) as Box<dyn Measure>)
        .ok_or_else(|| Error::UnknownStrategy { kind: "measure", name: name.into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(n: usize) -> GtMask {
        GtMask::from_shape_fn((n, n), |(y, x)| (x / 2 + y / 3) % 2 == 0)
    }

    fn as_pred(g: &GtMask) -> PredMap {
        g.mapv(|v| if v { 1.0 } else { 0.0 })
    }

    #[test]
    fn mae_sentinels() {
        let g = checker(8);
        assert_eq!(mae(&as_pred(&g), &g).unwrap(), 0.0);
        assert_eq!(mae(&as_pred(&g).mapv(|v| 1.0 - v), &g).unwrap(), 1.0);
        assert_eq!(mae(&PredMap::from_elem((8, 8), 0.5), &g).unwrap(), 0.5);
        assert!(matches!(mae(&PredMap::zeros((3, 3)), &g), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn normalization_rules() {
        let p = PredMap::from_shape_vec((1, 3), vec![0.2, 0.4, 0.6]).unwrap();
        let n = normalize(&p);
        assert!((n[[0, 1]] - 0.5).abs() < 1e-12 && n[[0, 0]] == 0.0 && n[[0, 2]] == 1.0);
        let c = PredMap::from_elem((2, 2), 0.3);
        assert_eq!(normalize(&c), c);
    }

    #[test]
    fn registry_lookup() {
        let g = checker(6);
        for name in measure_names() {
            let m = measure(name).unwrap();
            let v = m.score(&as_pred(&g), &g).unwrap();
            let expect = if m.lower_is_better() { 0.0 } else { 1.0 };
            // threshold 0 marks every pixel foreground, so curve means sit just below 1
            let tol = if name.ends_with("_mean") { 0.01 } else { 1e-12 };
            assert!((v - expect).abs() < tol, "{name} = {v}");
        }
        assert!(measure("iou").is_err());
    }
}
