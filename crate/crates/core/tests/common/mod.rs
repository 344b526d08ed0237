//! Test-only oracles: literal, loop-based versions of the evaluation measures and a
//! central-difference gradient checker. Nothing here calls into the measure code under test.

#![allow(dead_code)]

use candle_core::{DType, Tensor, Var};
use ndarray::Array2;
use rand::Rng;

pub type Map = Array2<f64>;
pub type Mask = Array2<bool>;

const EPS: f64 = 2.220446049250313e-16;

fn as_f(g: &Mask) -> Map {
    g.mapv(|v| if v { 1.0 } else { 0.0 })
}

pub fn minmax(p: &Map) -> Map {
    let lo = p.iter().cloned().fold(f64::MAX, f64::min);
    let hi = p.iter().cloned().fold(f64::MIN, f64::max);
    if hi > lo {
        p.mapv(|v| (v - lo) / (hi - lo))
    } else {
        p.clone()
    }
}

pub fn mae(p: &Map, g: &Mask) -> f64 {
    let p = minmax(p);
    let gf = as_f(g);
    (&p - &gf).mapv(f64::abs).mean().unwrap()
}

/// Binary map at threshold `t` (`p >= t`); `t = 0` from an all-zero map means "nothing".
fn binarize(p: &Map, t: f64, adaptive: bool) -> Mask {
    if adaptive && t == 0.0 {
        return p.mapv(|v| v > 0.0);
    }
    p.mapv(|v| v >= t)
}

fn adaptive_t(p: &Map) -> f64 {
    (2.0 * p.mean().unwrap()).min(1.0)
}

fn fbeta_of(b: &Mask, g: &Mask) -> f64 {
    let tp = b.iter().zip(g.iter()).filter(|(x, y)| **x && **y).count() as f64;
    let pp = b.iter().filter(|x| **x).count() as f64;
    let gp = g.iter().filter(|x| **x).count() as f64;
    let prec = if pp > 0.0 { tp / pp } else { 0.0 };
    let rec = if gp > 0.0 { tp / gp } else { 0.0 };
    if tp == 0.0 {
        return 0.0;
    }
    1.3 * prec * rec / (0.3 * prec + rec)
}

pub fn f_adaptive(p: &Map, g: &Mask) -> f64 {
    let p = minmax(p);
    fbeta_of(&binarize(&p, adaptive_t(&p), true), g)
}

/// F-beta at each of the 256 thresholds `k / 255`.
pub fn f_curve(p: &Map, g: &Mask) -> Vec<f64> {
    let p = minmax(p);
    (0..256).map(|k| fbeta_of(&binarize(&p, k as f64 / 255.0, false), g)).collect()
}

/// Enhanced alignment of a binary map, evaluated pixel by pixel.
fn enhanced(b: &Mask, g: &Mask) -> f64 {
    let n = g.len() as f64;
    let fm = as_f(b);
    let gt = as_f(g);
    let gsum = gt.sum();
    let phi = if gsum == 0.0 {
        fm.mapv(|v| 1.0 - v)
    } else if gsum == n {
        fm.clone()
    } else {
        let dfm = fm.mapv(|v| v - fm.mean().unwrap());
        let dgt = gt.mapv(|v| v - gt.mean().unwrap());
        let align = Array2::from_shape_fn(fm.dim(), |i| 2.0 * dgt[i] * dfm[i] / (dgt[i] * dgt[i] + dfm[i] * dfm[i] + EPS));
        align.mapv(|a| (a + 1.0) * (a + 1.0) / 4.0)
    };
    phi.sum() / n
}

pub fn e_adaptive(p: &Map, g: &Mask) -> f64 {
    let p = minmax(p);
    enhanced(&binarize(&p, adaptive_t(&p), true), g)
}

pub fn e_curve(p: &Map, g: &Mask) -> Vec<f64> {
    let p = minmax(p);
    (0..256).map(|k| enhanced(&binarize(&p, k as f64 / 255.0, false), g)).collect()
}

fn mean_and_sample_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn block_ssim(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let n = p.len();
    let mx = p.iter().sum::<f64>() / n as f64;
    let my = g.iter().sum::<f64>() / n as f64;
    // sample (co)variances from pairwise differences: sum_{i<j} (a_i - a_j)(b_i - b_j) / (n (n - 1)),
    // which is exactly zero for a constant block
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (p[i] - p[j], g[i] - g[j]);
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    let pairs = if n > 1 { (n * (n - 1)) as f64 } else { f64::INFINITY };
    let (vx, vy, cxy) = (vx / pairs, vy / pairs, cxy / pairs);
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(p: &Map, g: &Mask) -> f64 {
    let p = minmax(p);
    let (h, w) = g.dim();
    let n = (h * w) as f64;
    let gt = as_f(g);
    let y_mean = gt.mean().unwrap();
    if y_mean == 0.0 {
        return 1.0 - p.mean().unwrap();
    }
    if y_mean == 1.0 {
        return p.mean().unwrap();
    }
    // object
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if g[[i, j]] {
                fg.push(p[[i, j]]);
            } else {
                bg.push(1.0 - p[[i, j]]);
            }
        }
    }
    let score = |v: &[f64]| {
        let (m, s) = mean_and_sample_std(v);
        2.0 * m / (m * m + 1.0 + s + EPS)
    };
    let so = y_mean * score(&fg) + (1.0 - y_mean) * score(&bg);
    // region: split at the rounded centroid plus one
    let (mut cy, mut cx, mut cnt) = (0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            if g[[i, j]] {
                cy += i as f64;
                cx += j as f64;
                cnt += 1.0;
            }
        }
    }
    let x = (((cx / cnt).round_ties_even() as usize) + 1).min(w);
    let y = (((cy / cnt).round_ties_even() as usize) + 1).min(h);
    let mut sr = 0.0;
    for (r0, r1, c0, c1) in [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)] {
        let mut pb = Vec::new();
        let mut gb = Vec::new();
        for i in r0..r1 {
            for j in c0..c1 {
                pb.push(p[[i, j]]);
                gb.push(gt[[i, j]]);
            }
        }
        sr += (pb.len() as f64 / n) * block_ssim(&pb, &gb);
    }
    (0.5 * so + 0.5 * sr).max(0.0)
}

/// Weighted F-measure by brute force: every background pixel scans every foreground pixel
/// for its nearest ones, and the Gaussian is applied as a full 7x7 stencil.
pub fn wf_measure(p: &Map, g: &Mask) -> f64 {
    let p = minmax(p);
    let (h, w) = g.dim();
    let fgs: Vec<(usize, usize)> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).filter(|&(i, j)| g[[i, j]]).collect();
    if fgs.is_empty() {
        return 0.0;
    }
    let gt = as_f(g);
    let e = (&p - &gt).mapv(f64::abs);
    let mut dist = Map::zeros((h, w));
    let mut et = e.clone();
    for i in 0..h {
        for j in 0..w {
            if g[[i, j]] {
                continue;
            }
            let d2 = |&(a, b): &(usize, usize)| (a as i64 - i as i64).pow(2) + (b as i64 - j as i64).pow(2);
            let best = fgs.iter().map(d2).min().unwrap();
            let ties: Vec<&(usize, usize)> = fgs.iter().filter(|q| d2(q) == best).collect();
            dist[[i, j]] = (best as f64).sqrt();
            et[[i, j]] = ties.iter().map(|&&(a, b)| e[[a, b]]).sum::<f64>() / ties.len() as f64;
        }
    }
    let mut kern = [[0.0; 7]; 7];
    let mut ks = 0.0;
    for (a, row) in kern.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (da, db) = (a as f64 - 3.0, b as f64 - 3.0);
            *v = (-(da * da + db * db) / 50.0).exp();
            ks += *v;
        }
    }
    let ea = Map::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..7 {
            for b in 0..7 {
                let (y, x) = (i as i64 + a as i64 - 3, j as i64 + b as i64 - 3);
                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                    acc += kern[a][b] / ks * et[[y as usize, x as usize]];
                }
            }
        }
        acc
    });
    let (mut ewf, mut ewb, mut nf) = (0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            if g[[i, j]] {
                ewf += e[[i, j]].min(ea[[i, j]]);
                nf += 1.0;
            } else {
                ewb += e[[i, j]] * (2.0 - (0.5f64.ln() / 5.0 * dist[[i, j]]).exp());
            }
        }
    }
    let tpw = nf - ewf;
    let r = 1.0 - ewf / nf;
    let pr = tpw / (tpw + ewb + EPS);
    2.0 * r * pr / (r + pr + EPS)
}

/// A random prediction/mask pair of size up to 32x32. Predictions mix smooth, quantized
/// and constant maps; masks mix blobs, noise, empty and full.
pub fn random_pair(rng: &mut impl Rng) -> (Map, Mask) {
    let h = rng.gen_range(1..=32);
    let w = rng.gen_range(1..=32);
    let kind = rng.gen_range(0..10);
    let g = match kind {
        0 => Mask::from_elem((h, w), false),
        1 => Mask::from_elem((h, w), true),
        2..=4 => Mask::from_shape_fn((h, w), |_| rng.gen_bool(0.3)),
        _ => {
            let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
            let r = rng.gen_range(1.0..(h.max(w) as f64).max(1.5));
            Mask::from_shape_fn((h, w), |(i, j)| (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2) <= r * r)
        }
    };
    let pk = rng.gen_range(0..6);
    let p = match pk {
        0 => Map::from_elem((h, w), rng.gen_range(0.0..1.0)),
        1 => Map::from_shape_fn((h, w), |_| (rng.gen_range(0..256) as f64) / 255.0),
        2 => as_f(&g).mapv(|v| (0.7 * v + rng.gen_range(0.0..0.3f64)).min(1.0)),
        _ => Map::from_shape_fn((h, w), |_| rng.gen_range(0.0..1.0)),
    };
    (p, g)
}

/// Largest relative error between the analytic gradient and a central difference, over
/// `draws` random coordinates of the given variables.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps exactly-vanishing
/// gradients from dividing by rounding noise.
pub fn gradcheck(vars: &[&Var], f: &dyn Fn() -> Tensor, draws: usize, rng: &mut impl Rng) -> f64 {
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-4;
    let eval = || f().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap();
    let grads = f().backward().unwrap();
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let var = vars[rng.gen_range(0..vars.len())];
        let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let k = rng.gen_range(0..base.len());
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().unwrap().to_vec1::<f64>().unwrap()[k])
            .unwrap_or(0.0);
        let set = |v: f64| {
            let mut x = base.clone();
            x[k] = v;
            var.set(&Tensor::from_vec(x, var.shape(), var.device()).unwrap()).unwrap();
        };
        set(base[k] + H);
        let up = eval();
        set(base[k] - H);
        let down = eval();
        set(base[k]);
        let numeric = (up - down) / (2.0 * H);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    worst
}
