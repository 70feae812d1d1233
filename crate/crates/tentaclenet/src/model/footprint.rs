//! Byte-exact memory accounting. Counts follow the serialized parameter
//! layout: full-precision weights, biases, batch-norm params, alpha, and
//! threshold floats take 4 bytes each; binary weights take the word-aligned
//! packed layout; threshold direction flags take one byte per channel. The
//! theoretical bit count (1 bit per binary weight) rides along for reference
//! but never enters the totals.

use crate::layers::{BatchNormParams, BinaryConvLayer, FpConv, FpDense, FpLayer};
use crate::model::{Fp32Model, StagePost, TentacleNetModel, TentacleStage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerFootprint {
    pub name: String,
    pub bytes: u64,
}

/// Section totals plus a per-layer breakdown. `total_bytes` is always the
/// sum of the five sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FootprintReport {
    pub total_bytes: u64,
    /// Shared full-precision conv weights and bias.
    pub shared_conv_bytes: u64,
    /// Packed binary filter words across all tentacles.
    pub binary_weight_bytes: u64,
    /// Alpha, fused thresholds, and direction flags (shared block included).
    pub scale_threshold_bytes: u64,
    /// Normalization kept in float form: terminal-stage affine params and
    /// any full batch-norm records.
    pub batchnorm_bytes: u64,
    /// Head fully-connected block (and the fp32 baseline's dense head).
    pub fc_bytes: u64,
    /// One tentacle's full contribution (bits + alpha + thresholds + affine).
    pub per_tentacle_bytes: u64,
    /// Information-theoretic size: binary weights at 1 bit, flags at 1 bit,
    /// floats at 32 bits.
    pub theoretical_bits: u64,
    pub per_layer: Vec<LayerFootprint>,
}

impl FootprintReport {
    pub fn total_kb(&self) -> f64 {
        self.total_bytes as f64 / 1024.0
    }
}

pub fn fp_conv_bytes(c: &FpConv) -> u64 {
    4 * (c.weights.len() + c.bias.as_ref().map_or(0, Vec::len)) as u64
}

pub fn fp_dense_bytes(d: &FpDense) -> u64 {
    4 * (d.weights.len() + d.bias.as_ref().map_or(0, Vec::len)) as u64
}

/// Full batch-norm state: four per-channel floats.
pub fn full_batchnorm_bytes(bn: &BatchNormParams) -> u64 {
    16 * bn.channels() as u64
}

fn packed_bytes(layer: &BinaryConvLayer) -> u64 {
    8 * (layer.packed.rows() * layer.packed.words_per_row()) as u64
}

/// (packed bits, alpha + threshold floats + flags, affine floats) for one
/// tentacle stage.
fn stage_bytes(layer: &BinaryConvLayer, post: &StagePost) -> (u64, u64, u64) {
    let packed = packed_bytes(layer);
    let alpha = 4 * layer.alpha.len() as u64;
    match post {
        StagePost::Binact(th) => (packed, alpha + 5 * th.channels() as u64, 0),
        StagePost::Affine { scale, shift } => {
            (packed, alpha, 4 * (scale.len() + shift.len()) as u64)
        }
        StagePost::None => (packed, alpha, 0),
    }
}

fn stage_theoretical_bits(layer: &BinaryConvLayer, post: &StagePost) -> u64 {
    let bits = (layer.packed.rows() * layer.packed.row_bits()) as u64;
    let alpha = 32 * layer.alpha.len() as u64;
    bits + alpha
        + match post {
            StagePost::Binact(th) => 33 * th.channels() as u64,
            StagePost::Affine { scale, .. } => 64 * scale.len() as u64,
            StagePost::None => 0,
        }
}

/// Footprint of a tentacle model.
pub fn footprint(model: &TentacleNetModel) -> FootprintReport {
    let shared_conv_bytes = fp_conv_bytes(&model.shared_conv);
    let shared_thr = 5 * model.shared_post.channels() as u64;
    let fc_bytes = fp_dense_bytes(&model.fc);

    let mut binary_weight_bytes = 0;
    let mut scale_threshold_bytes = shared_thr;
    let mut batchnorm_bytes = 0;
    let mut per_tentacle_bytes = 0;
    let mut theoretical_bits =
        32 * (model.shared_conv.weights.len() as u64 + model.fc.weights.len() as u64)
            + 33 * model.shared_post.channels() as u64;
    let mut per_layer = vec![LayerFootprint {
        name: format!(
            "shared_conv {}f {}x{}",
            model.shared_conv.filters, model.shared_conv.kh, model.shared_conv.kw
        ),
        bytes: shared_conv_bytes + shared_thr,
    }];

    for (t, tentacle) in model.tentacles.iter().enumerate() {
        for (s, stage) in tentacle.stages.iter().enumerate() {
            if let TentacleStage::Conv { layer, post } = stage {
                let (packed, scale_thr, affine) = stage_bytes(layer, post);
                binary_weight_bytes += packed;
                scale_threshold_bytes += scale_thr;
                batchnorm_bytes += affine;
                if t == 0 {
                    per_tentacle_bytes += packed + scale_thr + affine;
                }
                theoretical_bits += stage_theoretical_bits(layer, post);
                per_layer.push(LayerFootprint {
                    name: format!(
                        "tentacle{t}.stage{s} conv {}f {}x{}",
                        layer.filters(),
                        layer.kh,
                        layer.kw
                    ),
                    bytes: packed + scale_thr + affine,
                });
            }
        }
    }
    per_layer.push(LayerFootprint {
        name: format!("fc {}x{}", model.fc.outputs, model.fc.inputs),
        bytes: fc_bytes,
    });

    FootprintReport {
        total_bytes: shared_conv_bytes
            + binary_weight_bytes
            + scale_threshold_bytes
            + batchnorm_bytes
            + fc_bytes,
        shared_conv_bytes,
        binary_weight_bytes,
        scale_threshold_bytes,
        batchnorm_bytes,
        fc_bytes,
        per_tentacle_bytes,
        theoretical_bits,
        per_layer,
    }
}

/// Footprint of the full-precision baseline.
pub fn fp32_footprint(model: &Fp32Model) -> FootprintReport {
    let mut shared_conv_bytes = 0;
    let mut batchnorm_bytes = 0;
    let mut fc_bytes = 0;
    let mut per_layer = Vec::new();
    for (i, layer) in model.body.iter().enumerate() {
        match layer {
            FpLayer::Conv(c) => {
                let b = fp_conv_bytes(c);
                shared_conv_bytes += b;
                per_layer.push(LayerFootprint {
                    name: format!("conv{i} {}f {}x{}", c.filters, c.kh, c.kw),
                    bytes: b,
                });
            }
            FpLayer::BatchNorm(bn) => {
                let b = full_batchnorm_bytes(bn);
                batchnorm_bytes += b;
                per_layer.push(LayerFootprint {
                    name: format!("batchnorm{i} {}ch", bn.channels()),
                    bytes: b,
                });
            }
            FpLayer::Dense(d) => {
                let b = fp_dense_bytes(d);
                fc_bytes += b;
                per_layer.push(LayerFootprint {
                    name: format!("dense{i} {}x{}", d.outputs, d.inputs),
                    bytes: b,
                });
            }
            FpLayer::Relu | FpLayer::MaxPool { .. } | FpLayer::GlobalAvgPool => {}
        }
    }
    if let Some(d) = &model.final_dense {
        let b = fp_dense_bytes(d);
        fc_bytes += b;
        per_layer.push(LayerFootprint {
            name: format!("fc {}x{}", d.outputs, d.inputs),
            bytes: b,
        });
    }
    let total = shared_conv_bytes + batchnorm_bytes + fc_bytes;
    FootprintReport {
        total_bytes: total,
        shared_conv_bytes,
        binary_weight_bytes: 0,
        scale_threshold_bytes: 0,
        batchnorm_bytes,
        fc_bytes,
        per_tentacle_bytes: 0,
        theoretical_bits: 8 * total,
        per_layer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_fp32_baseline, build_tentaclenet, parse_spec};

    #[test]
    fn binary_dense_toy_is_768_bytes() {
        // 64x64 binary dense (a 1x1 conv over 64 channels) with nonorm: 64
        // rows of 64 bits = 512 bytes, plus 64 alpha floats = 256 bytes.
        let spec = parse_spec(
            "input 64\nconv 64 1x1\nconv 64 1x1 nonorm\nhead dense\nclasses 10\n",
        )
        .unwrap();
        let model = build_tentaclenet(&spec, 1, 1).unwrap();
        let report = footprint(&model);
        let line = report
            .per_layer
            .iter()
            .find(|l| l.name.starts_with("tentacle0.stage0"))
            .unwrap();
        assert_eq!(line.bytes, 768);
    }

    #[test]
    fn fp_dense_toy_is_400_bytes() {
        let d = FpDense {
            weights: vec![0.0; 100],
            bias: None,
            outputs: 10,
            inputs: 10,
        };
        assert_eq!(fp_dense_bytes(&d), 400);
    }

    #[test]
    fn sections_sum_to_total() {
        let spec = parse_spec(
            "input 1x16x16\nconv 6 3x3 pad 1\nmaxpool 2\nconv 12 3x3 pad 1\nconv 3 3x3 pad 1\nhead global_pool\nclasses 3\n",
        )
        .unwrap();
        for n in [1, 3] {
            let model = build_tentaclenet(&spec, n, 2).unwrap();
            let r = footprint(&model);
            assert_eq!(
                r.total_bytes,
                r.shared_conv_bytes
                    + r.binary_weight_bytes
                    + r.scale_threshold_bytes
                    + r.batchnorm_bytes
                    + r.fc_bytes
            );
            let layer_sum: u64 = r.per_layer.iter().map(|l| l.bytes).sum();
            assert_eq!(layer_sum, r.total_bytes);
        }
    }

    #[test]
    fn footprint_is_affine_in_n() {
        let spec = parse_spec(
            "input 1x16x16\nconv 6 3x3 pad 1\nmaxpool 2\nconv 12 3x3 pad 1\nconv 3 3x3 pad 1\nhead global_pool\nclasses 3\n",
        )
        .unwrap();
        let reports: Vec<FootprintReport> = (1..=6)
            .map(|n| footprint(&build_tentaclenet(&spec, n, 2).unwrap()))
            .collect();
        let per_tent = reports[0].per_tentacle_bytes;
        let fc_growth = reports[1].fc_bytes - reports[0].fc_bytes;
        for w in reports.windows(2) {
            assert_eq!(
                w[1].total_bytes - w[0].total_bytes,
                per_tent + fc_growth,
                "slope must be one tentacle plus the fc growth"
            );
            assert_eq!(w[1].per_tentacle_bytes, per_tent);
        }
    }

    #[test]
    fn fp32_report_counts_all_layers() {
        let spec = parse_spec(
            "input 1x8x8\nconv 4 3x3 pad 1\nconv 6 3x3 pad 1\nhead dense\nclasses 5\n",
        )
        .unwrap();
        let model = build_fp32_baseline(&spec, 1).unwrap();
        let r = fp32_footprint(&model);
        // conv0: 4*9 weights; bn: 4ch; conv1: 6*4*9; bn: 6ch; fc: 6*5 + 5 bias.
        let expect = 4 * (36 + 216 + 35) + 16 * (4 + 6);
        assert_eq!(r.total_bytes, expect as u64);
    }
}
