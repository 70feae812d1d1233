//! Differentiable float ops used by the training graphs.
//!
//! Activations travel as batched feature maps. The binary-domain pieces are
//! kept numerically identical to the bit-packed inference kernels: signs use
//! the same tie convention (0 maps to +1), binary convs pad with -1, max
//! pooling takes the first maximum. Statistics and reductions accumulate in
//! f64 with a fixed order, so training is deterministic.

use rayon::prelude::*;

use crate::bitcore::conv_out_dim;
use crate::error::{Error, Result};

/// A batch of feature maps, laid out `[batch][channel][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fmap {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Fmap {
    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            b,
            c,
            h,
            w,
            data: vec![0.0; b * c * h * w],
        }
    }

    pub fn from_data(b: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != b * c * h * w {
            return Err(Error::Shape(format!(
                "feature map {b}x{c}x{h}x{w} needs {} values, got {}",
                b * c * h * w,
                data.len()
            )));
        }
        Ok(Self { b, c, h, w, data })
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// One sample's `[channel][y][x]` block.
    pub fn sample(&self, bi: usize) -> &[f32] {
        let stride = self.c * self.plane();
        &self.data[bi * stride..(bi + 1) * stride]
    }

    pub fn sample_mut(&mut self, bi: usize) -> &mut [f32] {
        let stride = self.c * self.plane();
        &mut self.data[bi * stride..(bi + 1) * stride]
    }

    pub fn same_dims(&self, other: &Fmap) -> bool {
        self.b == other.b && self.c == other.c && self.h == other.h && self.w == other.w
    }
}

/// Lower one sample to convolution rows: one row per output position, columns
/// ordered channel-major then kernel-row, kernel-column. Out-of-image taps
/// read `pad_value`.
#[allow(clippy::too_many_arguments)]
fn im2row(
    sample: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    pad_value: f32,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let k = c * kh * kw;
    let mut rows = vec![0.0f32; out_h * out_w * k];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = &mut rows[(oy * out_w + ox) * k..(oy * out_w + ox + 1) * k];
            let mut col = 0;
            for ch in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        let x = (ox * stride + kx) as isize - pad as isize;
                        row[col] = if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
                            sample[(ch * h + y as usize) * w + x as usize]
                        } else {
                            pad_value
                        };
                        col += 1;
                    }
                }
            }
        }
    }
    rows
}

/// Everything conv_backward needs: the lowered rows per sample plus geometry.
pub struct ConvCache {
    rows: Vec<Vec<f32>>,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

/// Batched convolution forward. `weights` is `[filters][in_c * kh * kw]`
/// row-major. Returns the output map and the cache for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward(
    x: &Fmap,
    weights: &[f32],
    filters: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    pad_value: f32,
) -> Result<(Fmap, ConvCache)> {
    let k = x.c * kh * kw;
    if weights.len() != filters * k {
        return Err(Error::Shape(format!(
            "conv weights: want {filters}x{k}, got {} values",
            weights.len()
        )));
    }
    let out_h = conv_out_dim(x.h, kh, stride, pad)?;
    let out_w = conv_out_dim(x.w, kw, stride, pad)?;
    let p = out_h * out_w;
    let per_sample: Vec<(Vec<f32>, Vec<f32>)> = (0..x.b)
        .into_par_iter()
        .map(|bi| {
            let rows = im2row(
                x.sample(bi),
                x.c,
                x.h,
                x.w,
                kh,
                kw,
                stride,
                pad,
                pad_value,
                out_h,
                out_w,
            );
            let mut out = vec![0.0f32; filters * p];
            for f in 0..filters {
                let wf = &weights[f * k..(f + 1) * k];
                for pos in 0..p {
                    let row = &rows[pos * k..(pos + 1) * k];
                    let mut acc = 0.0f32;
                    for (a, b) in wf.iter().zip(row) {
                        acc += a * b;
                    }
                    out[f * p + pos] = acc;
                }
            }
            (rows, out)
        })
        .collect();
    let mut out = Fmap::zeros(x.b, filters, out_h, out_w);
    let mut rows = Vec::with_capacity(x.b);
    for (bi, (r, o)) in per_sample.into_iter().enumerate() {
        out.sample_mut(bi).copy_from_slice(&o);
        rows.push(r);
    }
    Ok((
        out,
        ConvCache {
            rows,
            in_c: x.c,
            in_h: x.h,
            in_w: x.w,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        },
    ))
}

/// Batched convolution backward: gradients for the weights (summed over the
/// batch) and for the input map. Padded taps contribute nothing to `dx`.
pub fn conv_backward(cache: &ConvCache, weights: &[f32], dout: &Fmap) -> (Vec<f32>, Fmap) {
    let k = cache.in_c * cache.kh * cache.kw;
    let filters = dout.c;
    let p = cache.out_h * cache.out_w;
    let per_sample: Vec<(Vec<f32>, Vec<f32>)> = (0..dout.b)
        .into_par_iter()
        .map(|bi| {
            let rows = &cache.rows[bi];
            let do_s = dout.sample(bi);
            let mut dw = vec![0.0f32; filters * k];
            let mut drows = vec![0.0f32; p * k];
            for f in 0..filters {
                let wf = &weights[f * k..(f + 1) * k];
                let dwf = &mut dw[f * k..(f + 1) * k];
                for pos in 0..p {
                    let g = do_s[f * p + pos];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &rows[pos * k..(pos + 1) * k];
                    let drow = &mut drows[pos * k..(pos + 1) * k];
                    for i in 0..k {
                        dwf[i] += g * row[i];
                        drow[i] += g * wf[i];
                    }
                }
            }
            // Scatter drows back to input coordinates.
            let mut dx = vec![0.0f32; cache.in_c * cache.in_h * cache.in_w];
            for oy in 0..cache.out_h {
                for ox in 0..cache.out_w {
                    let drow = &drows[(oy * cache.out_w + ox) * k..(oy * cache.out_w + ox + 1) * k];
                    let mut col = 0;
                    for ch in 0..cache.in_c {
                        for ky in 0..cache.kh {
                            for kx in 0..cache.kw {
                                let y = (oy * cache.stride + ky) as isize - cache.pad as isize;
                                let x = (ox * cache.stride + kx) as isize - cache.pad as isize;
                                if y >= 0
                                    && (y as usize) < cache.in_h
                                    && x >= 0
                                    && (x as usize) < cache.in_w
                                {
                                    dx[(ch * cache.in_h + y as usize) * cache.in_w + x as usize] +=
                                        drow[col];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
            (dw, dx)
        })
        .collect();
    let mut dweights = vec![0.0f32; filters * k];
    let mut dx = Fmap::zeros(dout.b, cache.in_c, cache.in_h, cache.in_w);
    for (bi, (dw, dxs)) in per_sample.into_iter().enumerate() {
        for (acc, v) in dweights.iter_mut().zip(&dw) {
            *acc += v;
        }
        dx.sample_mut(bi).copy_from_slice(&dxs);
    }
    (dweights, dx)
}

/// Saved normalization state for the backward pass.
pub struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

/// Batch-norm forward with batch statistics (biased variance), per channel
/// over batch and spatial positions. Returns the normalized map, the batch
/// mean/variance (for the running-average update), and the backward cache.
pub fn bn_forward_train(
    x: &Fmap,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<(Fmap, Vec<f32>, Vec<f32>, BnCache)> {
    if gamma.len() != x.c || beta.len() != x.c {
        return Err(Error::Shape(format!(
            "batch-norm over {} channels, map has {}",
            gamma.len(),
            x.c
        )));
    }
    let plane = x.plane();
    let n = (x.b * plane) as f64;
    if n == 0.0 {
        return Err(Error::Invalid("batch-norm over an empty batch".into()));
    }
    let mut mu = vec![0.0f32; x.c];
    let mut var = vec![0.0f32; x.c];
    let mut inv_std = vec![0.0f32; x.c];
    for ch in 0..x.c {
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for bi in 0..x.b {
            let s = x.sample(bi);
            for &v in &s[ch * plane..(ch + 1) * plane] {
                sum += v as f64;
                sum_sq += (v as f64) * (v as f64);
            }
        }
        let m = sum / n;
        let v = (sum_sq / n - m * m).max(0.0);
        mu[ch] = m as f32;
        var[ch] = v as f32;
        inv_std[ch] = (1.0 / (v + eps as f64).sqrt()) as f32;
    }
    let mut y = Fmap::zeros(x.b, x.c, x.h, x.w);
    let mut xhat = vec![0.0f32; x.data.len()];
    for bi in 0..x.b {
        let base = bi * x.c * plane;
        for ch in 0..x.c {
            for i in 0..plane {
                let idx = base + ch * plane + i;
                let xh = (x.data[idx] - mu[ch]) * inv_std[ch];
                xhat[idx] = xh;
                y.data[idx] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok((y, mu, var, BnCache { xhat, inv_std }))
}

/// Batch-norm backward for the training-mode forward.
pub fn bn_backward(cache: &BnCache, x: &Fmap, gamma: &[f32], dy: &Fmap) -> (Fmap, Vec<f32>, Vec<f32>) {
    debug_assert!(x.same_dims(dy));
    let plane = x.plane();
    let n = (x.b * plane) as f64;
    let mut dgamma = vec![0.0f32; x.c];
    let mut dbeta = vec![0.0f32; x.c];
    let mut dx = Fmap::zeros(x.b, x.c, x.h, x.w);
    for ch in 0..x.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for bi in 0..x.b {
            let base = bi * x.c * plane + ch * plane;
            for i in 0..plane {
                let g = dy.data[base + i] as f64;
                sum_dy += g;
                sum_dy_xhat += g * cache.xhat[base + i] as f64;
            }
        }
        dgamma[ch] = sum_dy_xhat as f32;
        dbeta[ch] = sum_dy as f32;
        let mean_dy = sum_dy / n;
        let mean_dy_xhat = sum_dy_xhat / n;
        let scale = gamma[ch] as f64 * cache.inv_std[ch] as f64;
        for bi in 0..x.b {
            let base = bi * x.c * plane + ch * plane;
            for i in 0..plane {
                let g = dy.data[base + i] as f64;
                let xh = cache.xhat[base + i] as f64;
                dx.data[base + i] = (scale * (g - mean_dy - xh * mean_dy_xhat)) as f32;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Batch-norm with frozen statistics, used for validation passes.
pub fn bn_forward_eval(
    x: &Fmap,
    gamma: &[f32],
    beta: &[f32],
    mu: &[f32],
    var: &[f32],
    eps: f32,
) -> Fmap {
    let plane = x.plane();
    let mut y = Fmap::zeros(x.b, x.c, x.h, x.w);
    for ch in 0..x.c {
        let inv = 1.0 / (var[ch] + eps).sqrt();
        for bi in 0..x.b {
            let base = bi * x.c * plane + ch * plane;
            for i in 0..plane {
                y.data[base + i] = gamma[ch] * (x.data[base + i] - mu[ch]) * inv + beta[ch];
            }
        }
    }
    y
}

/// Elementwise sign to ±1, with 0 mapping to +1 like the bit-packing kernels.
pub fn sign_forward(x: &Fmap) -> Fmap {
    let data = x
        .data
        .iter()
        .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    Fmap {
        b: x.b,
        c: x.c,
        h: x.h,
        w: x.w,
        data,
    }
}

/// The training surrogate for sign: clamp to [-1, 1]. Its a.e. derivative is
/// exactly the straight-through mask, which is what makes the finite
/// difference oracle applicable.
pub fn hardtanh_forward(x: &Fmap) -> Fmap {
    let data = x.data.iter().map(|&v| v.clamp(-1.0, 1.0)).collect();
    Fmap {
        b: x.b,
        c: x.c,
        h: x.h,
        w: x.w,
        data,
    }
}

/// Straight-through estimator: pass the upstream gradient where the
/// pre-binarization value lies in [-1, 1], zero elsewhere.
pub fn ste_mask_backward(pre: &Fmap, dy: &Fmap) -> Fmap {
    debug_assert!(pre.same_dims(dy));
    let data = pre
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&p, &g)| if p.abs() <= 1.0 { g } else { 0.0 })
        .collect();
    Fmap {
        b: dy.b,
        c: dy.c,
        h: dy.h,
        w: dy.w,
        data,
    }
}

pub fn relu_forward(x: &Fmap) -> Fmap {
    let data = x.data.iter().map(|&v| v.max(0.0)).collect();
    Fmap {
        b: x.b,
        c: x.c,
        h: x.h,
        w: x.w,
        data,
    }
}

pub fn relu_backward(x: &Fmap, dy: &Fmap) -> Fmap {
    debug_assert!(x.same_dims(dy));
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Fmap {
        b: dy.b,
        c: dy.c,
        h: dy.h,
        w: dy.w,
        data,
    }
}

/// Winner positions for the pool backward: flat input index per output value.
pub struct PoolCache {
    argmax: Vec<usize>,
    in_h: usize,
    in_w: usize,
}

/// Max pooling over `k`x`k` windows. Ties go to the first position in scan
/// order, so on ±1 maps the forward agrees with bit-domain OR pooling.
pub fn maxpool_forward(x: &Fmap, k: usize, stride: usize) -> Result<(Fmap, PoolCache)> {
    let out_h = conv_out_dim(x.h, k, stride, 0)?;
    let out_w = conv_out_dim(x.w, k, stride, 0)?;
    let plane = x.plane();
    let mut y = Fmap::zeros(x.b, x.c, out_h, out_w);
    let mut argmax = vec![0usize; x.b * x.c * out_h * out_w];
    for bi in 0..x.b {
        for ch in 0..x.c {
            let in_base = (bi * x.c + ch) * plane;
            let out_base = (bi * x.c + ch) * out_h * out_w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best_idx = in_base + (oy * stride) * x.w + ox * stride;
                    let mut best = x.data[best_idx];
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = in_base + (oy * stride + ky) * x.w + (ox * stride + kx);
                            if x.data[idx] > best {
                                best = x.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    y.data[out_base + oy * out_w + ox] = best;
                    argmax[out_base + oy * out_w + ox] = best_idx;
                }
            }
        }
    }
    Ok((
        y,
        PoolCache {
            argmax,
            in_h: x.h,
            in_w: x.w,
        },
    ))
}

pub fn maxpool_backward(cache: &PoolCache, dy: &Fmap) -> Fmap {
    let mut dx = Fmap::zeros(dy.b, dy.c, cache.in_h, cache.in_w);
    for (i, &g) in dy.data.iter().enumerate() {
        dx.data[cache.argmax[i]] += g;
    }
    dx
}

/// Global average pool: `[b][c][h][w]` to `[b][c]`.
pub fn gap_forward(x: &Fmap) -> Vec<f32> {
    let plane = x.plane();
    let mut out = vec![0.0f32; x.b * x.c];
    for bi in 0..x.b {
        for ch in 0..x.c {
            let base = (bi * x.c + ch) * plane;
            let mut acc = 0.0f64;
            for &v in &x.data[base..base + plane] {
                acc += v as f64;
            }
            out[bi * x.c + ch] = (acc / plane as f64) as f32;
        }
    }
    out
}

pub fn gap_backward(b: usize, c: usize, h: usize, w: usize, dy: &[f32]) -> Fmap {
    let plane = h * w;
    let mut dx = Fmap::zeros(b, c, h, w);
    for bi in 0..b {
        for ch in 0..c {
            let g = dy[bi * c + ch] / plane as f32;
            let base = (bi * c + ch) * plane;
            for v in &mut dx.data[base..base + plane] {
                *v = g;
            }
        }
    }
    dx
}

/// Batched dense forward. `x` is `[b][inputs]`, `weights` `[outputs][inputs]`.
pub fn dense_forward(
    x: &[f32],
    b: usize,
    inputs: usize,
    weights: &[f32],
    bias: Option<&[f32]>,
    outputs: usize,
) -> Vec<f32> {
    let mut y = vec![0.0f32; b * outputs];
    for bi in 0..b {
        let xs = &x[bi * inputs..(bi + 1) * inputs];
        for o in 0..outputs {
            let wo = &weights[o * inputs..(o + 1) * inputs];
            let mut acc = 0.0f32;
            for (a, v) in wo.iter().zip(xs) {
                acc += a * v;
            }
            y[bi * outputs + o] = acc + bias.map_or(0.0, |bv| bv[o]);
        }
    }
    y
}

/// Dense backward: weight gradient (summed over batch), optional bias
/// gradient, input gradient.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f32],
    b: usize,
    inputs: usize,
    weights: &[f32],
    outputs: usize,
    has_bias: bool,
    dy: &[f32],
) -> (Vec<f32>, Option<Vec<f32>>, Vec<f32>) {
    let mut dw = vec![0.0f32; outputs * inputs];
    let mut db = if has_bias {
        Some(vec![0.0f32; outputs])
    } else {
        None
    };
    let mut dx = vec![0.0f32; b * inputs];
    for bi in 0..b {
        let xs = &x[bi * inputs..(bi + 1) * inputs];
        let dxs = &mut dx[bi * inputs..(bi + 1) * inputs];
        for o in 0..outputs {
            let g = dy[bi * outputs + o];
            if let Some(db) = db.as_mut() {
                db[o] += g;
            }
            let wo = &weights[o * inputs..(o + 1) * inputs];
            let dwo = &mut dw[o * inputs..(o + 1) * inputs];
            for i in 0..inputs {
                dwo[i] += g * xs[i];
                dxs[i] += g * wo[i];
            }
        }
    }
    (dw, db, dx)
}

/// Mean cross-entropy over a batch of logits plus the gradient, already
/// divided by the batch size.
pub fn batch_ce(
    logits: &[f32],
    b: usize,
    classes: usize,
    labels: &[usize],
) -> Result<(f64, Vec<f32>)> {
    if labels.len() != b || logits.len() != b * classes {
        return Err(Error::Shape(format!(
            "cross-entropy: {b} samples, {} labels, {} logits",
            labels.len(),
            logits.len()
        )));
    }
    let mut total = 0.0f64;
    let mut dlogits = vec![0.0f32; b * classes];
    for bi in 0..b {
        let ls = &logits[bi * classes..(bi + 1) * classes];
        let label = labels[bi];
        if label >= classes {
            return Err(Error::Invalid(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let max = ls.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0f64;
        for &v in ls {
            sum += (v as f64 - max).exp();
        }
        let lse = max + sum.ln();
        total += lse - ls[label] as f64;
        for cl in 0..classes {
            let p = ((ls[cl] as f64 - max).exp() / sum) as f32;
            dlogits[bi * classes + cl] = (p - if cl == label { 1.0 } else { 0.0 }) / b as f32;
        }
    }
    Ok((total / b as f64, dlogits))
}
