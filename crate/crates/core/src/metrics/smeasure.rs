use ndarray::{s, ArrayView2};

use super::{prepare, GtMask, PredMap, EPS};
use crate::error::Result;

pub const ALPHA: f64 = 0.5;

/// Structure measure `alpha * S_object + (1 - alpha) * S_region`, clipped at 0.
///
/// An all-background mask scores `1 - mean(p)`, an all-foreground one `mean(p)`.
pub fn s_measure(p: &PredMap, g: &GtMask, alpha: f64) -> Result<f64> {
    let p = prepare(p, g)?;
    let n = p.len() as f64;
    let fg = g.iter().filter(|v| **v).count() as f64;
    let mean_p = p.sum() / n;
    if fg == 0.0 {
        return Ok(1.0 - mean_p);
    }
    if fg == n {
        return Ok(mean_p);
    }
    let sm = alpha * object_score(&p, g) + (1.0 - alpha) * region_score(&p, g);
    Ok(sm.max(0.0))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn object_part(values: &[f64]) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn object_score(p: &PredMap, g: &GtMask) -> f64 {
    let fg: Vec<f64> = p.iter().zip(g.iter()).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    let bg: Vec<f64> = p.iter().zip(g.iter()).filter(|(_, &m)| !m).map(|(&v, _)| 1.0 - v).collect();
    let u = fg.len() as f64 / p.len() as f64;
    u * object_part(&fg) + (1.0 - u) * object_part(&bg)
}

/// Split point `(x, y)`: the rounded foreground centroid plus one, so the top-left block
/// is rows `0..y`, columns `0..x`.
pub(crate) fn centroid(g: &GtMask) -> (usize, usize) {
    let (h, w) = g.dim();
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
    for ((y, x), &m) in g.indexed_iter() {
        if m {
            sy += y as f64;
            sx += x as f64;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return ((w as f64 / 2.0).round_ties_even() as usize, (h as f64 / 2.0).round_ties_even() as usize);
    }
    ((sx / n).round_ties_even() as usize + 1, (sy / n).round_ties_even() as usize + 1)
}

fn ssim(p: ArrayView2<f64>, g: ArrayView2<bool>) -> f64 {
    let n = p.len() as f64;
    if p.is_empty() {
        return 0.0;
    }
    // one correction pass makes the mean exact for constant blocks; otherwise the rounding
    // residue leaves a ~1e-17 covariance and a/(b + EPS) below becomes arbitrary
    let x0 = p.sum() / n;
    let x = x0 + p.iter().map(|v| v - x0).sum::<f64>() / n;
    let y = g.iter().filter(|v| **v).count() as f64 / n;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (&pv, &gv) in p.iter().zip(g.iter()) {
        let dx = pv - x;
        let dy = gv as u8 as f64 - y;
        sx += dx * dx;
        sy += dy * dy;
        sxy += dx * dy;
    }
    let d = if p.len() > 1 { n - 1.0 } else { f64::INFINITY };
    let (sx, sy, sxy) = (sx / d, sy / d, sxy / d);
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sx + sy);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(p: &PredMap, g: &GtMask) -> f64 {
    let (h, w) = g.dim();
    let (x, y) = centroid(g);
    let (x, y) = (x.min(w), y.min(h));
    let area = (h * w) as f64;
    let w1 = (x * y) as f64 / area;
    let w2 = (y * (w - x)) as f64 / area;
    let w3 = ((h - y) * x) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let blocks = [(0..y, 0..x, w1), (0..y, x..w, w2), (y..h, 0..x, w3), (y..h, x..w, w4)];
    blocks
        .into_iter()
        .map(|(r, c, wt)| {
            let pv = p.slice(s![r.clone(), c.clone()]);
            let gv = g.slice(s![r, c]);
            wt * ssim(pv, gv)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinels() {
        let g = GtMask::from_shape_fn((9, 9), |(y, x)| (2..6).contains(&y) && (3..8).contains(&x));
        let p = g.mapv(|v| v as u8 as f64);
        assert!((s_measure(&p, &g, ALPHA).unwrap() - 1.0).abs() < 1e-6);
        let empty = GtMask::from_elem((5, 5), false);
        assert_eq!(s_measure(&PredMap::zeros((5, 5)), &empty, ALPHA).unwrap(), 1.0);
        let full = GtMask::from_elem((5, 5), true);
        assert_eq!(s_measure(&PredMap::from_elem((5, 5), 0.25), &full, ALPHA).unwrap(), 0.25);
    }

    #[test]
    fn constant_prediction_has_no_structure() {
        // sum/n of identical floats need not reproduce the value; the block covariance must
        // still vanish exactly
        let g = GtMask::from_shape_fn((6, 6), |(y, x)| y < 3 && x < 3);
        for v in [0.1, 0.3005207364444855, 0.7] {
            let p = PredMap::from_elem((6, 6), v);
            let so = (9.0 * object_part(&[v; 9]) + 27.0 * object_part(&[1.0 - v; 27])) / 36.0;
            // split at (2, 2): only the all-foreground top-left 2x2 block has a constant mask
            let sr = 4.0 / 36.0;
            assert!((s_measure(&p, &g, ALPHA).unwrap() - (0.5 * so + 0.5 * sr)).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn centroid_splits() {
        let g = GtMask::from_shape_fn((4, 6), |(y, x)| y == 1 && x == 4);
        assert_eq!(centroid(&g), (5, 2));
    }
}
