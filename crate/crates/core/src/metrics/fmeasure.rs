use serde::{Deserialize, Serialize};

use super::{prepare, threshold, GtMask, PredMap, THRESHOLDS};
use crate::error::Result;

pub const BETA2: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FMode {
    Adaptive,
    Mean,
    Max,
}

/// Precision, recall and F-beta at each threshold `k / 255`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_beta: Vec<f64>,
}

/// `min(2 mean(p), 1)`.
pub fn adaptive_threshold(p: &PredMap) -> f64 {
    (2.0 * p.mean().unwrap_or(0.0)).min(1.0)
}

/// Binarization at the adaptive threshold. An all-zero map has threshold 0; it is treated
/// as empty rather than all-foreground.
pub(crate) fn adaptive_fg(v: f64, t: f64) -> bool {
    if t > 0.0 {
        v >= t
    } else {
        v > 0.0
    }
}

pub(crate) fn f_from_counts(tp: f64, pred_pos: f64, gt_pos: f64) -> (f64, f64, f64) {
    let precision = if pred_pos > 0.0 { tp / pred_pos } else { 0.0 };
    let recall = if gt_pos > 0.0 { tp / gt_pos } else { 0.0 };
    let denom = BETA2 * precision + recall;
    let f = if tp > 0.0 && denom > 0.0 { (1.0 + BETA2) * precision * recall / denom } else { 0.0 };
    (precision, recall, f)
}

/// Largest `k` with `p >= k / 255` (so the pixel is foreground at thresholds `0..=k`).
pub(crate) fn bin_of(p: f64) -> usize {
    let mut k = (p * 255.0).floor().clamp(0.0, 255.0) as usize;
    while k < 255 && p >= threshold(k + 1) {
        k += 1;
    }
    while k > 0 && p < threshold(k) {
        k -= 1;
    }
    k
}

/// Foreground counts per threshold: `(pred_pos, true_pos)` for `t = k / 255`.
pub(crate) fn threshold_counts(p: &PredMap, g: &GtMask) -> (Vec<f64>, Vec<f64>) {
    let mut hist_all = [0usize; THRESHOLDS];
    let mut hist_fg = [0usize; THRESHOLDS];
    for (&v, &t) in p.iter().zip(g.iter()) {
        let b = bin_of(v);
        hist_all[b] += 1;
        if t {
            hist_fg[b] += 1;
        }
    }
    let mut pos = vec![0.0; THRESHOLDS];
    let mut tp = vec![0.0; THRESHOLDS];
    let (mut a, mut f) = (0usize, 0usize);
    for k in (0..THRESHOLDS).rev() {
        a += hist_all[k];
        f += hist_fg[k];
        pos[k] = a as f64;
        tp[k] = f as f64;
    }
    (pos, tp)
}

pub fn f_curves(p: &PredMap, g: &GtMask) -> Result<Curves> {
    let p = prepare(p, g)?;
    let gt_pos = g.iter().filter(|v| **v).count() as f64;
    let (pos, tp) = threshold_counts(&p, g);
    let mut c = Curves { precision: Vec::new(), recall: Vec::new(), f_beta: Vec::new() };
    for k in 0..THRESHOLDS {
        let (pr, rc, f) = f_from_counts(tp[k], pos[k], gt_pos);
        c.precision.push(pr);
        c.recall.push(rc);
        c.f_beta.push(f);
    }
    Ok(c)
}

pub fn f_beta(p: &PredMap, g: &GtMask, mode: FMode) -> Result<f64> {
    match mode {
        FMode::Adaptive => {
            let p = prepare(p, g)?;
            let t = adaptive_threshold(&p);
            let (mut tp, mut pos, mut gt_pos) = (0.0, 0.0, 0.0);
            for (&v, &m) in p.iter().zip(g.iter()) {
                let fg = adaptive_fg(v, t);
                pos += fg as u8 as f64;
                gt_pos += m as u8 as f64;
                tp += (fg && m) as u8 as f64;
            }
            Ok(f_from_counts(tp, pos, gt_pos).2)
        }
        FMode::Mean => {
            let c = f_curves(p, g)?;
            Ok(c.f_beta.iter().sum::<f64>() / THRESHOLDS as f64)
        }
        FMode::Max => Ok(f_curves(p, g)?.f_beta.into_iter().fold(0.0, f64::max)),
    }
}
