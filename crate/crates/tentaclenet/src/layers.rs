//! The layer zoo: binary convolution with per-filter alpha scaling, the
//! fused batch-norm sign activation, and the full-precision layers used in
//! the shared blocks.
//!
//! A binary convolution approximates the real-valued one as
//! `alpha * (2 * popcount(xnor) - n)` per filter. Alpha is the filter's mean
//! absolute weight; no activation-side scale exists anywhere in this crate.
//! Batch norm followed by the sign activation collapses into a single
//! per-channel comparison against `c = mu - (beta/gamma) * sqrt(var + eps)`,
//! with the comparison direction flipped when gamma is negative.

use crate::bitcore::{self, BitTensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Epsilon used by every normalization stage in this crate.
pub const BN_EPS: f32 = 1e-5;

/// Per-channel batch normalization state. `var` holds sigma^2.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub mu: Vec<f32>,
    pub var: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl BatchNormParams {
    /// Fresh identity normalization: gamma 1, beta 0, mu 0, var 1.
    pub fn identity(channels: usize, eps: f32) -> Self {
        Self {
            mu: vec![0.0; channels],
            var: vec![1.0; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.mu.len();
        if self.var.len() != c || self.gamma.len() != c || self.beta.len() != c {
            return Err(Error::Shape(format!(
                "batch norm: per-channel arrays disagree ({}, {}, {}, {})",
                c,
                self.var.len(),
                self.gamma.len(),
                self.beta.len()
            )));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Invalid(format!(
                "batch norm: eps must be a positive finite float, got {}",
                self.eps
            )));
        }
        for ch in 0..c {
            let vals = [self.mu[ch], self.var[ch], self.gamma[ch], self.beta[ch]];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("batch norm channel {ch}")));
            }
            if self.var[ch] < 0.0 {
                return Err(Error::Invalid(format!(
                    "batch norm: negative variance {} in channel {ch}",
                    self.var[ch]
                )));
            }
        }
        Ok(())
    }

    /// Normalize one value through channel `ch` using the stored statistics.
    pub fn apply(&self, x: f32, ch: usize) -> f32 {
        self.gamma[ch] * (x - self.mu[ch]) / (self.var[ch] + self.eps).sqrt() + self.beta[ch]
    }
}

/// Batch norm folded into the sign activation: output bit is 1 iff
/// `x >= c[ch]`, or `x <= c[ch]` on channels where gamma was negative.
/// Either way the boundary `x == c` maps to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelThresholds {
    pub c: Vec<f32>,
    pub flipped: Vec<bool>,
}

impl ChannelThresholds {
    pub fn channels(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.len() != self.flipped.len() {
            return Err(Error::Shape(format!(
                "thresholds: {} c values vs {} flags",
                self.c.len(),
                self.flipped.len()
            )));
        }
        if let Some(v) = self.c.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("fused threshold {v}")));
        }
        Ok(())
    }
}

/// Fold batch norm plus sign into per-channel thresholds. The threshold is
/// the zero crossing of the normalization, computed in f64 and rounded once
/// to f32 so no representable input can land strictly between the true
/// crossing and the stored value.
pub fn fused_threshold(bn: &BatchNormParams) -> Result<ChannelThresholds> {
    bn.validate()?;
    let n = bn.channels();
    let mut c = Vec::with_capacity(n);
    let mut flipped = Vec::with_capacity(n);
    for ch in 0..n {
        if bn.gamma[ch] == 0.0 {
            return Err(Error::DegenerateScale { channel: ch });
        }
        let s = (bn.var[ch] as f64 + bn.eps as f64).sqrt();
        let thr = bn.mu[ch] as f64 - (bn.beta[ch] as f64 / bn.gamma[ch] as f64) * s;
        let thr32 = thr as f32;
        if !thr32.is_finite() {
            return Err(Error::NonFinite(format!(
                "fused threshold overflows f32 in channel {ch}"
            )));
        }
        c.push(thr32);
        flipped.push(bn.gamma[ch] < 0.0);
    }
    Ok(ChannelThresholds { c, flipped })
}

/// Fold batch norm into a per-channel affine map `y = scale * x + shift`
/// for stages whose output stays in the float domain. Computed in f64,
/// rounded once to f32.
pub fn affine_from_bn(bn: &BatchNormParams) -> Result<(Vec<f32>, Vec<f32>)> {
    bn.validate()?;
    let n = bn.channels();
    let mut scale = Vec::with_capacity(n);
    let mut shift = Vec::with_capacity(n);
    for ch in 0..n {
        let s = (bn.var[ch] as f64 + bn.eps as f64).sqrt();
        let a = bn.gamma[ch] as f64 / s;
        let b = bn.beta[ch] as f64 - bn.gamma[ch] as f64 * bn.mu[ch] as f64 / s;
        let (a32, b32) = (a as f32, b as f32);
        if !a32.is_finite() || !b32.is_finite() {
            return Err(Error::NonFinite(format!(
                "folded norm overflows f32 in channel {ch}"
            )));
        }
        scale.push(a32);
        shift.push(b32);
    }
    Ok((scale, shift))
}

/// Mean absolute value of one filter's weights.
pub fn alpha_from_weights(filter: &[f32]) -> Result<f32> {
    if filter.is_empty() {
        return Err(Error::Invalid("alpha of an empty filter".into()));
    }
    if filter.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("filter weight".into()));
    }
    // f64 accumulation: the mean of k equal magnitudes comes back exactly,
    // so re-deriving alpha from sign-times-alpha masters is lossless.
    let sum: f64 = filter.iter().map(|w| w.abs() as f64).sum();
    Ok((sum / filter.len() as f64) as f32)
}

/// Alpha for each of `filters` equal slices of a flat weight tensor.
pub fn per_filter_alpha(weights: &[f32], filters: usize) -> Result<Vec<f32>> {
    if filters == 0 || !weights.len().is_multiple_of(filters) {
        return Err(Error::Shape(format!(
            "{} weights do not split into {filters} filters",
            weights.len()
        )));
    }
    let per = weights.len() / filters;
    (0..filters)
        .map(|f| alpha_from_weights(&weights[f * per..(f + 1) * per]))
        .collect()
}

/// A binarized convolution: packed filters, per-filter alpha, geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryConvLayer {
    /// Packed filter bank, shape [filters, in_channels * kh * kw].
    pub packed: BitTensor,
    pub alpha: Vec<f32>,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl BinaryConvLayer {
    pub fn filters(&self) -> usize {
        self.packed.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.packed.shape();
        if shape.len() != 2 {
            return Err(Error::Shape(format!(
                "binary conv: packed weights must be 2-D, got {shape:?}"
            )));
        }
        if shape[1] != self.in_channels * self.kh * self.kw {
            return Err(Error::Shape(format!(
                "binary conv: packed row has {} bits, geometry needs {}",
                shape[1],
                self.in_channels * self.kh * self.kw
            )));
        }
        if self.alpha.len() != shape[0] {
            return Err(Error::Shape(format!(
                "binary conv: {} alpha values for {} filters",
                self.alpha.len(),
                shape[0]
            )));
        }
        if self.alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::Invalid(
                "binary conv: alpha must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    /// XNOR convolution over a packed feature map: im2row lowering, integer
    /// GEMM, then the per-filter alpha scale. Output is a float map
    /// [filters, H', W'].
    pub fn forward(&self, input: &BitTensor) -> Result<Tensor> {
        let ishape = input.shape();
        if ishape.len() != 3 || ishape[0] != self.in_channels {
            return Err(Error::Shape(format!(
                "binary conv: input {ishape:?} does not match {} channels",
                self.in_channels
            )));
        }
        let h_out = bitcore::conv_out_dim(ishape[1], self.kh, self.stride, self.pad)?;
        let w_out = bitcore::conv_out_dim(ishape[2], self.kw, self.stride, self.pad)?;
        let patches = bitcore::im2row_binary(input, self.kh, self.kw, self.stride, self.pad)?;
        let counts = bitcore::xnor_gemm(&self.packed, &patches)?;
        let filters = self.filters();
        let positions = h_out * w_out;
        let mut data = Vec::with_capacity(filters * positions);
        for f in 0..filters {
            let a = self.alpha[f];
            for p in 0..positions {
                data.push(a * counts.at(f, p) as f32);
            }
        }
        Tensor::from_vec(&[filters, h_out, w_out], data)
    }
}

/// Apply per-channel sign thresholds to a float map whose leading dimension
/// is channels. Ties map to bit 1 in both orientations.
pub fn binact_apply(fmap: &Tensor, thresholds: &ChannelThresholds) -> Result<BitTensor> {
    thresholds.validate()?;
    let shape = fmap.shape();
    if shape.is_empty() || shape[0] != thresholds.channels() {
        return Err(Error::Shape(format!(
            "binact: map shape {shape:?} vs {} threshold channels",
            thresholds.channels()
        )));
    }
    let data = fmap.data();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("binact input".into()));
    }
    let block = data.len() / thresholds.channels();
    let row_bits = *shape.last().unwrap();
    let mut out = BitTensor::zeros(shape)?;
    for (flat, &x) in data.iter().enumerate() {
        let ch = flat / block;
        let hit = if thresholds.flipped[ch] {
            x <= thresholds.c[ch]
        } else {
            x >= thresholds.c[ch]
        };
        if hit {
            out.set_bit(flat / row_bits, flat % row_bits, true);
        }
    }
    Ok(out)
}

/// Full-precision convolution, zero padding, optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FpConv {
    /// Flat weights, shape [filters, in_channels, kh, kw].
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub filters: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl FpConv {
    pub fn validate(&self) -> Result<()> {
        let need = self.filters * self.in_channels * self.kh * self.kw;
        if self.weights.len() != need {
            return Err(Error::Shape(format!(
                "fp conv: {} weights, geometry needs {need}",
                self.weights.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.filters {
                return Err(Error::Shape(format!(
                    "fp conv: {} bias values for {} filters",
                    b.len(),
                    self.filters
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let ishape = input.shape();
        if ishape.len() != 3 || ishape[0] != self.in_channels {
            return Err(Error::Shape(format!(
                "fp conv: input {ishape:?} does not match {} channels",
                self.in_channels
            )));
        }
        let (h, w) = (ishape[1], ishape[2]);
        let h_out = bitcore::conv_out_dim(h, self.kh, self.stride, self.pad)?;
        let w_out = bitcore::conv_out_dim(w, self.kw, self.stride, self.pad)?;
        let x = input.data();
        let mut data = Vec::with_capacity(self.filters * h_out * w_out);
        for f in 0..self.filters {
            let wbase = f * self.in_channels * self.kh * self.kw;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = self.bias.as_ref().map_or(0.0, |b| b[f]);
                    for c in 0..self.in_channels {
                        for ky in 0..self.kh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for kx in 0..self.kw {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                acc += self.weights
                                    [wbase + (c * self.kh + ky) * self.kw + kx]
                                    * x[(c * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    data.push(acc);
                }
            }
        }
        Tensor::from_vec(&[self.filters, h_out, w_out], data)
    }
}

/// Full-precision dense layer, optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FpDense {
    /// Flat weights, shape [outputs, inputs].
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub outputs: usize,
    pub inputs: usize,
}

impl FpDense {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.outputs * self.inputs {
            return Err(Error::Shape(format!(
                "dense: {} weights for {}x{}",
                self.weights.len(),
                self.outputs,
                self.inputs
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.outputs {
                return Err(Error::Shape(format!(
                    "dense: {} bias values for {} outputs",
                    b.len(),
                    self.outputs
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.len() != self.inputs {
            return Err(Error::Shape(format!(
                "dense: input length {} vs {} declared",
                input.len(),
                self.inputs
            )));
        }
        let x = input.data();
        let mut data = Vec::with_capacity(self.outputs);
        for o in 0..self.outputs {
            let mut acc = self.bias.as_ref().map_or(0.0, |b| b[o]);
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            data.push(acc);
        }
        Tensor::from_vec(&[self.outputs], data)
    }
}

/// One full-precision layer of the shared blocks or the fp32 baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum FpLayer {
    Conv(FpConv),
    Dense(FpDense),
    BatchNorm(BatchNormParams),
    Relu,
    MaxPool { k: usize, stride: usize },
    GlobalAvgPool,
}

/// Standard inference forward for one fp layer. Batch norm uses the stored
/// running statistics.
pub fn fp_forward(layer: &FpLayer, input: &Tensor) -> Result<Tensor> {
    match layer {
        FpLayer::Conv(conv) => conv.forward(input),
        FpLayer::Dense(dense) => dense.forward(input),
        FpLayer::BatchNorm(bn) => {
            let shape = input.shape();
            if shape.is_empty() || shape[0] != bn.channels() {
                return Err(Error::Shape(format!(
                    "batch norm: input {shape:?} vs {} channels",
                    bn.channels()
                )));
            }
            let block = input.len() / bn.channels();
            let data = input
                .data()
                .iter()
                .enumerate()
                .map(|(flat, &x)| bn.apply(x, flat / block))
                .collect();
            Tensor::from_vec(shape, data)
        }
        FpLayer::Relu => Tensor::from_vec(
            input.shape(),
            input.data().iter().map(|&x| x.max(0.0)).collect(),
        ),
        FpLayer::MaxPool { k, stride } => {
            let shape = input.shape();
            if shape.len() != 3 {
                return Err(Error::Shape(format!(
                    "max pool: expected [C, H, W], got {shape:?}"
                )));
            }
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            let h_out = bitcore::conv_out_dim(h, *k, *stride, 0)?;
            let w_out = bitcore::conv_out_dim(w, *k, *stride, 0)?;
            let x = input.data();
            let mut data = Vec::with_capacity(c * h_out * w_out);
            for ch in 0..c {
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let mut best = f32::NEG_INFINITY;
                        for dy in 0..*k {
                            for dx in 0..*k {
                                let v = x[(ch * h + oy * stride + dy) * w + ox * stride + dx];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        data.push(best);
                    }
                }
            }
            Tensor::from_vec(&[c, h_out, w_out], data)
        }
        FpLayer::GlobalAvgPool => {
            let shape = input.shape();
            if shape.len() != 3 {
                return Err(Error::Shape(format!(
                    "global avg pool: expected [C, H, W], got {shape:?}"
                )));
            }
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            let x = input.data();
            let data = (0..c)
                .map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().sum::<f32>() / (h * w) as f32)
                .collect();
            Tensor::from_vec(&[c], data)
        }
    }
}

/// Index of the largest score; ties break to the lowest index.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Numerically stabilized softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
