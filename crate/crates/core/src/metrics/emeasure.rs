use super::fmeasure::{adaptive_fg, threshold_counts};
use super::{adaptive_threshold, prepare, GtMask, PredMap, EPS, THRESHOLDS};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EMode {
    Adaptive,
    Mean,
    Max,
}

/// Enhanced alignment of a binarized prediction with `pred_pos` foreground pixels, `tp` of
/// them on the mask, against a mask with `gt_pos` foreground pixels out of `n`.
///
/// Both binary maps take only two values, so the alignment matrix has at most four
/// distinct entries and the mean can be formed from counts.
pub(crate) fn enhanced_alignment(tp: f64, pred_pos: f64, gt_pos: f64, n: f64) -> f64 {
    let pred_neg = n - pred_pos;
    if gt_pos == 0.0 {
        return pred_neg / n;
    }
    if gt_pos == n {
        return pred_pos / n;
    }
    let fp = pred_pos - tp;
    let fn_ = gt_pos - tp;
    let tn = pred_neg - fn_;
    let mp = pred_pos / n;
    let mg = gt_pos / n;
    let parts = [(tp, 1.0 - mp, 1.0 - mg), (fp, 1.0 - mp, -mg), (fn_, -mp, 1.0 - mg), (tn, -mp, -mg)];
    let sum: f64 = parts
        .iter()
        .map(|&(count, a, b)| {
            let align = 2.0 * a * b / (a * a + b * b + EPS);
            count * (align + 1.0).powi(2) / 4.0
        })
        .sum();
    sum / n
}

pub fn e_measure(p: &PredMap, g: &GtMask, mode: EMode) -> Result<f64> {
    let p = prepare(p, g)?;
    let n = p.len() as f64;
    let gt_pos = g.iter().filter(|v| **v).count() as f64;
    match mode {
        EMode::Adaptive => {
            let t = adaptive_threshold(&p);
            let (mut tp, mut pos) = (0.0, 0.0);
            for (&v, &m) in p.iter().zip(g.iter()) {
                if adaptive_fg(v, t) {
                    pos += 1.0;
                    tp += m as u8 as f64;
                }
            }
            Ok(enhanced_alignment(tp, pos, gt_pos, n))
        }
        EMode::Mean | EMode::Max => {
            let (pos, tp) = threshold_counts(&p, g);
            let curve = (0..THRESHOLDS).map(|k| enhanced_alignment(tp[k], pos[k], gt_pos, n));
            Ok(if mode == EMode::Mean { curve.sum::<f64>() / THRESHOLDS as f64 } else { curve.fold(0.0, f64::max) })
        }
    }
}
