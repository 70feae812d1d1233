//! Assembling models from a network spec: the tentacle builder, the
//! pseudo-Hadamard weight initialization, and the full-precision reference
//! network used for delta-accuracy comparisons.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bitcore::BitTensor;
use crate::error::{Error, Result};
use crate::layers::{
    affine_from_bn, argmax, fp_forward, fused_threshold, per_filter_alpha, BatchNormParams,
    BinaryConvLayer, FpConv, FpDense, FpLayer, BN_EPS,
};
use crate::model::hadamard::pseudo_hadamard;
use crate::model::spec::{HeadKind, NetworkSpec, SpecLayer};
use crate::model::{DataNorm, StagePost, Tentacle, TentacleNetModel, TentacleStage};
use crate::rng::{stream, stream_rng, tentacle_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PostKind {
    Binact,
    Affine,
    Raw,
}

#[derive(Debug, Clone, Copy)]
enum StageDesc {
    Conv {
        filters: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        post: PostKind,
    },
    Pool {
        k: usize,
        stride: usize,
    },
}

fn stage_descs(spec: &NetworkSpec) -> Result<Vec<StageDesc>> {
    let shapes = spec.layer_shapes()?;
    let last = spec.layers.len() - 1;
    let mut descs = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate().skip(1) {
        let in_channels = shapes[i - 1][0];
        match layer {
            SpecLayer::Conv {
                filters,
                kh,
                kw,
                stride,
                pad,
                norm,
            } => descs.push(StageDesc::Conv {
                filters: *filters,
                in_channels,
                kh: *kh,
                kw: *kw,
                stride: *stride,
                pad: *pad,
                post: if i == last {
                    if *norm {
                        PostKind::Affine
                    } else {
                        PostKind::Raw
                    }
                } else {
                    PostKind::Binact
                },
            }),
            SpecLayer::MaxPool { k, stride } => descs.push(StageDesc::Pool {
                k: *k,
                stride: *stride,
            }),
        }
    }
    Ok(descs)
}

fn descs_from_tentacle(t: &Tentacle) -> Vec<StageDesc> {
    t.stages
        .iter()
        .map(|stage| match stage {
            TentacleStage::Conv { layer, post } => StageDesc::Conv {
                filters: layer.filters(),
                in_channels: layer.in_channels,
                kh: layer.kh,
                kw: layer.kw,
                stride: layer.stride,
                pad: layer.pad,
                post: match post {
                    StagePost::Binact(_) => PostKind::Binact,
                    StagePost::Affine { .. } => PostKind::Affine,
                    StagePost::None => PostKind::Raw,
                },
            },
            TentacleStage::MaxPool { k, stride } => StageDesc::Pool {
                k: *k,
                stride: *stride,
            },
        })
        .collect()
}

/// Build one tentacle's stages from a seed: each conv gets a pseudo-Hadamard
/// sign pattern with per-row random sign flips (flips keep row orthogonality
/// and make exact Hadamard shapes seed-dependent too), scaled to 1/sqrt(fan
/// in). Normalization starts as identity, folded the same way finalization
/// folds trained statistics.
fn init_one_tentacle(descs: &[StageDesc], seed: u64) -> Result<Tentacle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::with_capacity(descs.len());
    for desc in descs {
        match *desc {
            StageDesc::Conv {
                filters,
                in_channels,
                kh,
                kw,
                stride,
                pad,
                post,
            } => {
                let cols = in_channels * kh * kw;
                let m = pseudo_hadamard(filters, cols, &mut rng)?;
                let scale = 1.0 / (cols as f32).sqrt();
                let mut master = Vec::with_capacity(filters * cols);
                for r in 0..filters {
                    let flip: f32 = if rng.gen::<bool>() { -1.0 } else { 1.0 };
                    master.extend(m.row(r).iter().map(|&v| v as f32 * flip * scale));
                }
                let packed = BitTensor::from_signs(&[filters, cols], &master)?;
                let alpha = per_filter_alpha(&master, filters)?;
                let post = match post {
                    PostKind::Binact => StagePost::Binact(fused_threshold(
                        &BatchNormParams::identity(filters, BN_EPS),
                    )?),
                    PostKind::Affine => {
                        let (scale, shift) =
                            affine_from_bn(&BatchNormParams::identity(filters, BN_EPS))?;
                        StagePost::Affine { scale, shift }
                    }
                    PostKind::Raw => StagePost::None,
                };
                stages.push(TentacleStage::Conv {
                    layer: BinaryConvLayer {
                        packed,
                        alpha,
                        in_channels,
                        kh,
                        kw,
                        stride,
                        pad,
                    },
                    post,
                });
            }
            StageDesc::Pool { k, stride } => {
                stages.push(TentacleStage::MaxPool { k, stride });
            }
        }
    }
    Ok(Tentacle { stages })
}

fn check_tentacles_distinct(tentacles: &[Tentacle]) -> Result<()> {
    for a in 0..tentacles.len() {
        for b in a + 1..tentacles.len() {
            let same = tentacles[a]
                .stages
                .iter()
                .zip(&tentacles[b].stages)
                .all(|(x, y)| match (x, y) {
                    (
                        TentacleStage::Conv { layer: la, .. },
                        TentacleStage::Conv { layer: lb, .. },
                    ) => la.packed == lb.packed,
                    _ => true,
                });
            if same {
                return Err(Error::Invalid(format!(
                    "tentacles {a} and {b} initialized to identical weights; seeds collided"
                )));
            }
        }
    }
    Ok(())
}

fn normal_weights(rng: &mut ChaCha8Rng, count: usize, std: f32) -> Result<Vec<f32>> {
    let dist = Normal::new(0.0f32, std)
        .map_err(|e| Error::Invalid(format!("weight init distribution: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

/// Re-seed every tentacle's binary weights, one seed per tentacle. Seeds
/// must be pairwise distinct, and the resulting tentacles must differ in at
/// least one weight.
pub fn init_tentacle_weights(model: &mut TentacleNetModel, seeds: &[u64]) -> Result<()> {
    if seeds.len() != model.n {
        return Err(Error::Invalid(format!(
            "{} seeds for {} tentacles",
            seeds.len(),
            model.n
        )));
    }
    let unique: HashSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(Error::Invalid("tentacle seeds must be pairwise distinct".into()));
    }
    let descs = descs_from_tentacle(&model.tentacles[0]);
    let mut tentacles = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        tentacles.push(init_one_tentacle(&descs, seed)?);
    }
    if tentacles.len() > 1 {
        check_tentacles_distinct(&tentacles)?;
    }
    model.tentacles = tentacles;
    model.tentacle_seeds = seeds.to_vec();
    Ok(())
}

/// Build an untrained model: shared full-precision conv block, n tentacle
/// replicas of the spec's inner layers, and the head fusion layer shaped by
/// the head kind (n*C inputs for global-pool heads, n*K for dense heads,
/// no bias either way).
pub fn build_tentaclenet(
    spec: &NetworkSpec,
    n: usize,
    master_seed: u64,
) -> Result<TentacleNetModel> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Invalid("tentacle count must be >= 1".into()));
    }
    let feature_k = spec.feature_k()?;
    let (f0, kh0, kw0, s0, p0) = match spec.layers[0] {
        SpecLayer::Conv {
            filters,
            kh,
            kw,
            stride,
            pad,
            ..
        } => (filters, kh, kw, stride, pad),
        _ => unreachable!("validate() guarantees a leading conv"),
    };

    let mut fp_rng = stream_rng(master_seed, stream::FP_INIT);
    let fan_in0 = spec.input[0] * kh0 * kw0;
    let shared_conv = FpConv {
        weights: normal_weights(&mut fp_rng, f0 * fan_in0, (2.0 / fan_in0 as f32).sqrt())?,
        bias: None,
        filters: f0,
        in_channels: spec.input[0],
        kh: kh0,
        kw: kw0,
        stride: s0,
        pad: p0,
    };
    let shared_post = fused_threshold(&BatchNormParams::identity(f0, BN_EPS))?;

    let fc_inputs = n * feature_k;
    let fc = FpDense {
        weights: normal_weights(
            &mut fp_rng,
            spec.classes * fc_inputs,
            (1.0 / fc_inputs as f32).sqrt(),
        )?,
        bias: None,
        outputs: spec.classes,
        inputs: fc_inputs,
    };

    let seeds: Vec<u64> = (0..n).map(|i| tentacle_seed(master_seed, i)).collect();
    let unique: HashSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(Error::Invalid(
            "derived tentacle seeds collided; pick another master seed".into(),
        ));
    }
    let descs = stage_descs(spec)?;
    let mut tentacles = Vec::with_capacity(n);
    for &seed in &seeds {
        tentacles.push(init_one_tentacle(&descs, seed)?);
    }
    if n > 1 {
        check_tentacles_distinct(&tentacles)?;
    }

    let model = TentacleNetModel {
        n,
        classes: spec.classes,
        feature_k,
        head: spec.head,
        input: spec.input,
        spec_digest: spec.digest(),
        master_seed,
        tentacle_seeds: seeds,
        norm: DataNorm::default(),
        shared_conv,
        shared_post,
        tentacles,
        fc,
    };
    model.validate()?;
    Ok(model)
}

/// The unquantized reference network built from the same spec: conv + norm +
/// relu bodies, float pooling, and the baseline's own head.
#[derive(Debug, Clone, PartialEq)]
pub struct Fp32Model {
    pub input: [usize; 3],
    pub classes: usize,
    pub head: HeadKind,
    pub body: Vec<FpLayer>,
    /// Present for dense heads: K -> classes with bias.
    pub final_dense: Option<FpDense>,
    pub norm: DataNorm,
}

impl Fp32Model {
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f32>> {
        if input.shape() != self.input {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match model input {:?}",
                input.shape(),
                self.input
            )));
        }
        let mut x = input.clone();
        self.norm
            .apply(&mut x)
            .map_err(|e| e.context("input normalization"))?;
        for (i, layer) in self.body.iter().enumerate() {
            x = fp_forward(layer, &x).map_err(|e| e.context(format!("fp layer {i}")))?;
        }
        x = fp_forward(&FpLayer::GlobalAvgPool, &x)?;
        if let Some(dense) = &self.final_dense {
            x = dense.forward(&x).map_err(|e| e.context("fp head"))?;
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(x.into_vec())
    }

    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(argmax(&self.forward(input)?))
    }
}

/// Build the untrained full-precision baseline for a spec.
pub fn build_fp32_baseline(spec: &NetworkSpec, master_seed: u64) -> Result<Fp32Model> {
    spec.validate()?;
    let shapes = spec.layer_shapes()?;
    let mut rng = stream_rng(master_seed, stream::FP_INIT);
    let mut body = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let in_channels = if i == 0 { spec.input[0] } else { shapes[i - 1][0] };
        match layer {
            SpecLayer::Conv {
                filters,
                kh,
                kw,
                stride,
                pad,
                norm,
            } => {
                let fan_in = in_channels * kh * kw;
                body.push(FpLayer::Conv(FpConv {
                    weights: normal_weights(
                        &mut rng,
                        filters * fan_in,
                        (2.0 / fan_in as f32).sqrt(),
                    )?,
                    bias: None,
                    filters: *filters,
                    in_channels,
                    kh: *kh,
                    kw: *kw,
                    stride: *stride,
                    pad: *pad,
                }));
                if *norm {
                    body.push(FpLayer::BatchNorm(BatchNormParams::identity(
                        *filters, BN_EPS,
                    )));
                }
                body.push(FpLayer::Relu);
            }
            SpecLayer::MaxPool { k, stride } => {
                body.push(FpLayer::MaxPool {
                    k: *k,
                    stride: *stride,
                });
            }
        }
    }
    let final_dense = match spec.head {
        HeadKind::GlobalPool => None,
        HeadKind::Dense => {
            let k = spec.feature_k()?;
            Some(FpDense {
                weights: normal_weights(&mut rng, spec.classes * k, (1.0 / k as f32).sqrt())?,
                bias: Some(vec![0.0; spec.classes]),
                outputs: spec.classes,
                inputs: k,
            })
        }
    };
    Ok(Fp32Model {
        input: spec.input,
        classes: spec.classes,
        head: spec.head,
        body,
        final_dense,
        norm: DataNorm::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_spec;
    use crate::rng::SplitMix64;

    fn head_a_spec() -> NetworkSpec {
        parse_spec(
            "input 1x8x8\nconv 4 3x3 pad 1\nconv 10 3x3 pad 1\nhead global_pool\nclasses 10\n",
        )
        .unwrap()
    }

    fn head_b_spec() -> NetworkSpec {
        parse_spec(
            "input 1x4x4\nconv 8 3x3 pad 1\nconv 128 3x3 pad 1\nhead dense\nclasses 7\n",
        )
        .unwrap()
    }

    #[test]
    fn head_a_fc_dimensions() {
        let model = build_tentaclenet(&head_a_spec(), 5, 42).unwrap();
        assert_eq!(model.fc.inputs, 50);
        assert_eq!(model.fc.weights.len(), 500);
        assert_eq!(model.fc.outputs, 10);
        assert!(model.fc.bias.is_none());
    }

    #[test]
    fn head_b_fc_dimensions() {
        let model = build_tentaclenet(&head_b_spec(), 3, 42).unwrap();
        assert_eq!(model.fc.inputs, 384);
        assert_eq!(model.fc.weights.len(), 2688);
        assert_eq!(model.fc.outputs, 7);
    }

    #[test]
    fn shape_law_across_n() {
        for n in 1..=8 {
            let a = build_tentaclenet(&head_a_spec(), n, 1).unwrap();
            assert_eq!(a.fc.inputs, n * 10);
            assert_eq!(a.fc.weights.len(), n * 10 * 10);
            let b = build_tentaclenet(&head_b_spec(), n, 1).unwrap();
            assert_eq!(b.fc.inputs, n * 128);
            assert_eq!(b.fc.weights.len(), n * 128 * 7);
        }
    }

    #[test]
    fn zero_tentacles_rejected() {
        assert!(build_tentaclenet(&head_a_spec(), 0, 1).is_err());
    }

    #[test]
    fn tentacles_differ_after_init() {
        let model = build_tentaclenet(&head_a_spec(), 2, 7).unwrap();
        let packed = |t: &Tentacle| match &t.stages[0] {
            TentacleStage::Conv { layer, .. } => layer.packed.clone(),
            _ => panic!("expected conv stage"),
        };
        assert_ne!(packed(&model.tentacles[0]), packed(&model.tentacles[1]));
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let mut model = build_tentaclenet(&head_a_spec(), 2, 7).unwrap();
        let err = init_tentacle_weights(&mut model, &[5, 5]).unwrap_err();
        assert!(err.to_string().contains("distinct"), "{err}");
    }

    #[test]
    fn reinit_is_deterministic_per_seed() {
        let mut a = build_tentaclenet(&head_a_spec(), 2, 7).unwrap();
        let mut b = build_tentaclenet(&head_a_spec(), 2, 7).unwrap();
        init_tentacle_weights(&mut a, &[11, 22]).unwrap();
        init_tentacle_weights(&mut b, &[11, 22]).unwrap();
        assert_eq!(a, b);
        init_tentacle_weights(&mut b, &[11, 23]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn exact_hadamard_layer_rows_orthogonal() {
        // Tentacle conv: 4 filters over 4 input channels, 1x1 kernel, so the
        // sign pattern is a (possibly row-flipped) 4x4 Hadamard matrix.
        let spec =
            parse_spec("input 4\nconv 4 1x1\nconv 4 1x1\nhead dense\nclasses 3\n").unwrap();
        let model = build_tentaclenet(&spec, 1, 3).unwrap();
        let layer = match &model.tentacles[0].stages[0] {
            TentacleStage::Conv { layer, .. } => layer,
            _ => panic!("expected conv stage"),
        };
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 4 } else { 0 };
                assert_eq!(layer.packed.dot_rows(i, &layer.packed, j).unwrap(), expect);
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_tentaclenet(&head_b_spec(), 3, 99).unwrap();
        let b = build_tentaclenet(&head_b_spec(), 3, 99).unwrap();
        assert_eq!(a, b);
        let c = build_tentaclenet(&head_b_spec(), 3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let model = build_tentaclenet(&head_a_spec(), 1, 5).unwrap();
        let mut rng = SplitMix64::new(17);
        let data: Vec<f32> = (0..64)
            .map(|_| (rng.next_u64() >> 40) as f32 / (1u64 << 24) as f32 - 0.5)
            .collect();
        let x = Tensor::from_vec(&[1, 8, 8], data).unwrap();
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
    }

    #[test]
    fn fp_baseline_builds_and_runs() {
        for spec in [head_a_spec(), head_b_spec()] {
            let model = build_fp32_baseline(&spec, 13).unwrap();
            let count: usize = spec.input.iter().product();
            let x = Tensor::from_vec(&spec.input, vec![0.25; count]).unwrap();
            let logits = model.forward(&x).unwrap();
            assert_eq!(logits.len(), spec.classes);
            assert!(logits.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn wrong_input_shape_is_reported() {
        let model = build_tentaclenet(&head_a_spec(), 1, 5).unwrap();
        let x = Tensor::from_vec(&[1, 4, 4], vec![0.0; 16]).unwrap();
        assert!(model.forward(&x).is_err());
    }
}
