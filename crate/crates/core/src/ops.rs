//! Differentiable tensor primitives that the layer blocks are built from.
//!
//! Feature maps are `(batch, channels, height, width)`. Every resampling operator here is
//! expressed through matrix products or gathers so gradients flow through the standard
//! autodiff graph.

use candle_core::{DType, Device, Tensor, D};

use crate::error::{Error, Result};

/// Logistic sigmoid via `tanh`, which stays finite for large magnitudes.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Tucker mode-n product on a `c x h x w` tensor (optionally batched).
///
/// Mode 1 multiplies channel fibers, mode 2 column fibers (height), mode 3 row fibers
/// (width): every mode-n fiber `t` is replaced by `U t`. `U` must have as many columns as
/// the tensor has entries along that mode.
pub fn mode_product(t: &Tensor, u: &Tensor, mode: usize) -> Result<Tensor> {
    match t.rank() {
        3 => Ok(mode_product(&t.unsqueeze(0)?, u, mode)?.squeeze(0)?),
        4 => {
            let (b, c, h, w) = t.dims4()?;
            let (rows, cols) = u.dims2()?;
            let along = match mode {
                1 => c,
                2 => h,
                3 => w,
                _ => return Err(Error::DimMismatch(format!("mode must be 1, 2 or 3, got {mode}"))),
            };
            if cols != along {
                return Err(Error::DimMismatch(format!(
                    "mode-{mode} product: matrix has {cols} columns, tensor has {along} entries"
                )));
            }
            let ut = u.t()?;
            let out = match mode {
                1 => t
                    .permute((0, 2, 3, 1))?
                    .contiguous()?
                    .reshape((b * h * w, c))?
                    .matmul(&ut)?
                    .reshape((b, h, w, rows))?
                    .permute((0, 3, 1, 2))?,
                2 => t
                    .transpose(2, 3)?
                    .contiguous()?
                    .reshape((b * c * w, h))?
                    .matmul(&ut)?
                    .reshape((b, c, w, rows))?
                    .transpose(2, 3)?,
                _ => t.contiguous()?.reshape((b * c * h, w))?.matmul(&ut)?.reshape((b, c, h, rows))?,
            };
            Ok(out.contiguous()?)
        }
        r => Err(Error::DimMismatch(format!("mode product expects rank 3 or 4, got rank {r}"))),
    }
}

/// Two-tap linear interpolation weights for resampling `input` samples onto `output`
/// samples with half-pixel centers; each entry is `(i0, i1, weight_of_i1)`.
pub fn interp_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = if i0 + 1 < input { i0 + 1 } else { i0 };
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Dense `output x input` interpolation matrix.
pub fn interp_matrix(input: usize, output: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; output * input];
    for (o, (i0, i1, w1)) in interp_taps(input, output).into_iter().enumerate() {
        m[o * input + i0] += 1.0 - w1;
        m[o * input + i1] += w1;
    }
    Ok(Tensor::from_vec(m, (output, input), device)?.to_dtype(dtype)?)
}

/// Bilinear resize of a `(b, c, h, w)` tensor.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::DegenerateSize { height: h, width: w, ratio: 0.0 });
    }
    let mut y = x.clone();
    if out_w != w {
        y = mode_product(&y, &interp_matrix(w, out_w, x.dtype(), x.device())?, 3)?;
    }
    if out_h != h {
        y = mode_product(&y, &interp_matrix(h, out_h, x.dtype(), x.device())?, 2)?;
    }
    Ok(y)
}

/// Mirror along the height axis.
pub fn flip_rows(x: &Tensor) -> Result<Tensor> {
    Ok(x.flip(&[2])?)
}

/// Reflection across the main spatial diagonal.
pub fn transpose_spatial(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h != w {
        return Err(Error::NonSquareInput { height: h, width: w });
    }
    Ok(x.transpose(2, 3)?.contiguous()?)
}

/// 3x3 max pooling with stride 2 and padding 1 on non-negative inputs.
/// Cross-correlation `(b, c, h, w) * (o, c, k, k)` as shifted windows and one batched matrix
/// product. Gradients then flow through matmul and narrow, which are much faster on CPU
/// than the transposed convolution used by the built-in backward pass.
pub fn conv2d(x: &Tensor, weight: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (o, wc, k, k2) = weight.dims4()?;
    if wc != c || k != k2 {
        return Err(Error::DimMismatch(format!("conv weight {:?} for input {:?}", weight.dims(), x.dims())));
    }
    let s = stride;
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if hp < k || wp < k {
        return Err(Error::DimMismatch(format!("kernel {k} larger than padded input {hp}x{wp}")));
    }
    let (ho, wo) = ((hp - k) / s + 1, (wp - k) / s + 1);
    let flat = weight.reshape((o, c * k * k))?;
    let cols = if k == 1 && s == 1 && padding == 0 {
        x.reshape((b, c, h * w))?
    } else {
        // phase images hold every s-th row and column, so each window is a plain narrow
        let hs = hp.div_ceil(s).max((k - 1) / s + ho);
        let ws = wp.div_ceil(s).max((k - 1) / s + wo);
        let padded = x
            .pad_with_zeros(2, padding, padding + hs * s - hp)?
            .pad_with_zeros(3, padding, padding + ws * s - wp)?;
        let phases: Vec<Vec<Tensor>> = if s == 1 {
            vec![vec![padded]]
        } else {
            let r = padded.reshape((b, c, hs, s, ws, s))?;
            (0..s)
                .map(|py| (0..s).map(|px| Ok(r.narrow(3, py, 1)?.narrow(5, px, 1)?.squeeze(5)?.squeeze(3)?)).collect())
                .collect::<Result<_>>()?
        };
        let mut wins = Vec::with_capacity(k * k);
        for ky in 0..k {
            for kx in 0..k {
                wins.push(phases[ky % s][kx % s].narrow(2, ky / s, ho)?.narrow(3, kx / s, wo)?);
            }
        }
        Tensor::stack(&wins, 2)?.reshape((b, c * k * k, ho * wo))?
    };
    Ok(flat.broadcast_matmul(&cols)?.reshape((b, o, ho, wo))?)
}

pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::DimMismatch(format!("max pool expects even sizes, got {h}x{w}")));
    }
    // zero padding equals -inf padding because inputs are post-ReLU
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mut m: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let win = padded.narrow(2, dy, h)?.narrow(3, dx, w)?;
            m = Some(match m {
                None => win,
                Some(acc) => acc.maximum(&win)?,
            });
        }
    }
    let m = m.expect("nine windows").contiguous()?;
    Ok(m
        .reshape((b, c, h / 2, 2, w / 2, 2))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .contiguous()?
        .reshape((b, c, h / 2, w / 2))?)
}

/// Bilinear gather: output pixel `k` (row-major over `out_h x out_w`) samples the input at
/// continuous position `coords[k] = (x, y)` in pixel-index coordinates. Samples outside the
/// input contribute zero.
pub fn sample_bilinear(
    x: &Tensor,
    coords: &[(f64, f64)],
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let n = out_h * out_w;
    if coords.len() != n {
        return Err(Error::DimMismatch(format!("{} sample points for {n} outputs", coords.len())));
    }
    let mut idx = vec![vec![0u32; n]; 4];
    let mut wts = vec![vec![0f64; n]; 4];
    for (k, &(sx, sy)) in coords.iter().enumerate() {
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1.0, y0, fx * (1.0 - fy)),
            (x0, y0 + 1.0, (1.0 - fx) * fy),
            (x0 + 1.0, y0 + 1.0, fx * fy),
        ];
        for (t, &(tx, ty, wt)) in taps.iter().enumerate() {
            if tx >= 0.0 && ty >= 0.0 && (tx as usize) < w && (ty as usize) < h && wt != 0.0 {
                idx[t][k] = (ty as usize * w + tx as usize) as u32;
                wts[t][k] = wt;
            }
        }
    }
    let flat = x.contiguous()?.reshape((b, c, h * w))?;
    let mut out: Option<Tensor> = None;
    for t in 0..4 {
        let ids = Tensor::from_vec(idx[t].clone(), n, x.device())?;
        let wt = Tensor::from_vec(wts[t].clone(), (1, 1, n), x.device())?.to_dtype(x.dtype())?;
        let g = flat.index_select(&ids, D::Minus1)?.broadcast_mul(&wt)?;
        out = Some(match out {
            None => g,
            Some(acc) => (acc + g)?,
        });
    }
    Ok(out.expect("four taps").reshape((b, c, out_h, out_w))?)
}
