use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{e_measure, f_beta, f_beta_weighted, f_curves, mae, s_measure, threshold, EMode, FMode, GtMask, PredMap, ALPHA, THRESHOLDS};
use crate::error::{Error, Result};
use crate::imageio;

/// Per-image measures, or their mean over a set.
///
/// `f_beta` and `e_measure` are the adaptive-threshold variants; the mean and max variants
/// are kept alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub s_measure: f64,
    pub f_beta_weighted: f64,
    pub mae: f64,
    pub f_beta: f64,
    pub e_measure: f64,
    pub f_mean: f64,
    pub f_max: f64,
    pub e_mean: f64,
    pub e_max: f64,
    pub images: usize,
    /// `(precision, recall)` at threshold `k / 255`.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pr_curve: Vec<(f64, f64)>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub f_curve: Vec<f64>,
}

impl MetricReport {
    /// The five headline scalars in a fixed order: S, weighted F, MAE, F, E.
    pub fn scalars(&self) -> [f64; 5] {
        [self.s_measure, self.f_beta_weighted, self.mae, self.f_beta, self.e_measure]
    }

    pub const SCALAR_NAMES: [&'static str; 5] = ["s_measure", "f_beta_weighted", "mae", "f_beta", "e_measure"];

    /// Only MAE among the five is an error measure.
    pub const LOWER_IS_BETTER: [bool; 5] = [false, false, true, false, false];

    /// Report with the given headline scalars and no curves.
    pub fn from_scalars(s: [f64; 5]) -> Self {
        Self {
            s_measure: s[0],
            f_beta_weighted: s[1],
            mae: s[2],
            f_beta: s[3],
            e_measure: s[4],
            f_mean: s[3],
            f_max: s[3],
            e_mean: s[4],
            e_max: s[4],
            images: 1,
            pr_curve: Vec::new(),
            f_curve: Vec::new(),
        }
    }
}

pub fn evaluate_pair(p: &PredMap, g: &GtMask) -> Result<MetricReport> {
    let curves = f_curves(p, g)?;
    Ok(MetricReport {
        s_measure: s_measure(p, g, ALPHA)?,
        f_beta_weighted: f_beta_weighted(p, g)?,
        mae: mae(p, g)?,
        f_beta: f_beta(p, g, FMode::Adaptive)?,
        e_measure: e_measure(p, g, EMode::Adaptive)?,
        f_mean: curves.f_beta.iter().sum::<f64>() / THRESHOLDS as f64,
        f_max: curves.f_beta.iter().copied().fold(0.0, f64::max),
        e_mean: e_measure(p, g, EMode::Mean)?,
        e_max: e_measure(p, g, EMode::Max)?,
        images: 1,
        pr_curve: curves.precision.iter().copied().zip(curves.recall.iter().copied()).collect(),
        f_curve: curves.f_beta,
    })
}

/// Pointwise mean of scalars and curves.
pub fn mean_report(reports: &[MetricReport]) -> Result<MetricReport> {
    let n = reports.len();
    if n == 0 {
        return Err(Error::MissingPair("no images to evaluate".into()));
    }
    let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
    let curve_len = reports[0].f_curve.len();
    let mut pr = vec![(0.0, 0.0); curve_len];
    let mut fc = vec![0.0; curve_len];
    for r in reports {
        for k in 0..curve_len.min(r.f_curve.len()) {
            pr[k].0 += r.pr_curve[k].0 / n as f64;
            pr[k].1 += r.pr_curve[k].1 / n as f64;
            fc[k] += r.f_curve[k] / n as f64;
        }
    }
    Ok(MetricReport {
        s_measure: avg(|r| r.s_measure),
        f_beta_weighted: avg(|r| r.f_beta_weighted),
        mae: avg(|r| r.mae),
        f_beta: avg(|r| r.f_beta),
        e_measure: avg(|r| r.e_measure),
        f_mean: avg(|r| r.f_mean),
        f_max: avg(|r| r.f_max),
        e_mean: avg(|r| r.e_mean),
        e_max: avg(|r| r.e_max),
        images: reports.iter().map(|r| r.images).sum(),
        pr_curve: pr,
        f_curve: fc,
    })
}

fn stems(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if let (Some(ext), Some(stem)) = (ext, path.file_stem().and_then(|s| s.to_str())) {
            if exts.contains(&ext.as_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Scores every mask in `gt_dir` against the same-stem map in `pred_dir`.
pub fn evaluate_dir(pred_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let gts = stems(gt_dir, &["png"])?;
    let preds = stems(pred_dir, &["png", "jpg", "jpeg"])?;
    if gts.is_empty() {
        return Err(Error::EmptyDataset(gt_dir.to_path_buf()));
    }
    let mut reports = Vec::with_capacity(gts.len());
    for (stem, gt_path) in &gts {
        let pred_path = preds.get(stem).ok_or_else(|| Error::MissingPair(stem.clone()))?;
        let g = imageio::read_mask(gt_path)?;
        let p = imageio::read_gray(pred_path)?;
        reports.push(evaluate_pair(&p, &g).map_err(|e| match e {
            Error::ShapeMismatch(m) => Error::ShapeMismatch(format!("{stem}: {m}")),
            other => other,
        })?);
    }
    mean_report(&reports)
}

/// Writes `report.json` (scalars) and `curves.csv` (threshold, precision, recall, f_beta).
pub fn write_report(report: &MetricReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let scalars = MetricReport { pr_curve: Vec::new(), f_curve: Vec::new(), ..report.clone() };
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&scalars)?)?;
    let mut csv = String::from("threshold,precision,recall,f_beta\n");
    for (k, ((p, r), f)) in report.pr_curve.iter().zip(&report.f_curve).enumerate() {
        writeln!(csv, "{:.6},{p:.6},{r:.6},{f:.6}", threshold(k)).expect("string write");
    }
    std::fs::write(out_dir.join("curves.csv"), csv)?;
    Ok(())
}
