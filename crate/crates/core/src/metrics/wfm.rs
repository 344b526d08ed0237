use ndarray::Array2;

use super::{prepare, GtMask, PredMap, EPS};
use crate::error::Result;

const GAUSS_RADIUS: usize = 3;
const GAUSS_SIGMA: f64 = 5.0;

/// Euclidean distance from every pixel to the nearest foreground pixel, with the full set
/// of nearest foreground pixels (all ties) for each background pixel.
///
/// For each column the nearest foreground rows above and below a pixel are the only
/// candidates in that column, so scanning columns finds every minimizer.
pub fn distance_transform(g: &GtMask) -> (Array2<f64>, Array2<Vec<(usize, usize)>>) {
    let (h, w) = g.dim();
    // per column, nearest foreground row at or above / at or below each row
    let mut up = Array2::<Option<usize>>::from_elem((h, w), None);
    let mut down = Array2::<Option<usize>>::from_elem((h, w), None);
    for x in 0..w {
        let mut last = None;
        for y in 0..h {
            if g[[y, x]] {
                last = Some(y);
            }
            up[[y, x]] = last;
        }
        last = None;
        for y in (0..h).rev() {
            if g[[y, x]] {
                last = Some(y);
            }
            down[[y, x]] = last;
        }
    }
    let mut dist = Array2::zeros((h, w));
    let mut nearest = Array2::from_elem((h, w), Vec::new());
    for y in 0..h {
        for x in 0..w {
            if g[[y, x]] {
                nearest[[y, x]] = vec![(y, x)];
                continue;
            }
            let mut best = usize::MAX;
            let mut ties: Vec<(usize, usize)> = Vec::new();
            for cx in 0..w {
                let dx = cx.abs_diff(x);
                for cy in [up[[y, cx]], down[[y, cx]]].into_iter().flatten() {
                    let d2 = dx * dx + cy.abs_diff(y).pow(2);
                    if d2 < best {
                        best = d2;
                        ties.clear();
                    }
                    if d2 == best && !ties.contains(&(cy, cx)) {
                        ties.push((cy, cx));
                    }
                }
            }
            if best != usize::MAX {
                dist[[y, x]] = (best as f64).sqrt();
            }
            nearest[[y, x]] = ties;
        }
    }
    (dist, nearest)
}

fn gaussian_1d() -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * GAUSS_RADIUS)
        .map(|i| {
            let d = i as f64 - GAUSS_RADIUS as f64;
            (-d * d / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable 7x7 Gaussian filter with zero padding.
fn gaussian_blur(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = gaussian_1d();
    let r = GAUSS_RADIUS as isize;
    let pass = |src: &Array2<f64>, horizontal: bool| {
        Array2::from_shape_fn((h, w), |(y, xx)| {
            (-r..=r)
                .map(|o| {
                    let (sy, sx) = if horizontal { (y as isize, xx as isize + o) } else { (y as isize + o, xx as isize) };
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        0.0
                    } else {
                        k[(o + r) as usize] * src[[sy as usize, sx as usize]]
                    }
                })
                .sum()
        })
    };
    pass(&pass(x, true), false)
}

/// Weighted F-measure with `beta^2 = 1`. Errors at background pixels are replaced by the
/// error at their nearest foreground pixel (averaged over ties) before Gaussian spreading,
/// foreground errors take the smaller of raw and spread value, and background errors are
/// up-weighted by `2 - exp(ln(0.5) / 5 * distance)`.
pub fn f_beta_weighted(p: &PredMap, g: &GtMask) -> Result<f64> {
    let p = prepare(p, g)?;
    if !g.iter().any(|v| *v) {
        return Ok(0.0);
    }
    let gf = g.mapv(|v| v as u8 as f64);
    let e = (&p - &gf).mapv(f64::abs);
    let (dist, nearest) = distance_transform(g);
    let et = Array2::from_shape_fn(e.dim(), |(y, x)| {
        if g[[y, x]] {
            e[[y, x]]
        } else {
            let n = &nearest[[y, x]];
            n.iter().map(|&(ny, nx)| e[[ny, nx]]).sum::<f64>() / n.len() as f64
        }
    });
    let ea = gaussian_blur(&et);
    let (mut ew_fg, mut ew_bg, mut n_fg) = (0.0, 0.0, 0.0);
    for ((idx, &m), (&ev, &eav)) in g.indexed_iter().zip(e.iter().zip(ea.iter())) {
        if m {
            ew_fg += if eav < ev { eav } else { ev };
            n_fg += 1.0;
        } else {
            let b = 2.0 - ((0.5f64).ln() / 5.0 * dist[idx]).exp();
            ew_bg += ev * b;
        }
    }
    let tpw = n_fg - ew_fg;
    let r = 1.0 - ew_fg / n_fg;
    let pr = tpw / (tpw + ew_bg + EPS);
    Ok(2.0 * r * pr / (r + pr + EPS))
}
