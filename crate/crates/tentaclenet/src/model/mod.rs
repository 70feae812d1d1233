//! Model structure: the parallel-tentacle template, its builder, footprint
//! accounting, and the on-disk format.
//!
//! A built model is the inference form only: packed bits, per-filter alpha,
//! fused thresholds, and the shared full-precision blocks. Training (module
//! [`crate::train`]) owns master weights and live batch-norm state, and
//! writes the folded results back in here at finalization.

pub mod build;
pub mod footprint;
pub mod hadamard;
pub mod serial;
pub mod spec;

pub use build::{build_fp32_baseline, build_tentaclenet, Fp32Model};
pub use footprint::{footprint, fp32_footprint, FootprintReport, LayerFootprint};
pub use serial::{load_model, save_model};
pub use spec::{parse_spec, HeadKind, NetworkSpec, SpecLayer};

use crate::bitcore::{self, BitTensor};
use crate::error::{Error, Result};
use crate::layers::{binact_apply, BinaryConvLayer, ChannelThresholds, FpConv, FpDense};
use crate::tensor::Tensor;

/// Per-channel input normalization recorded from the training data, kept in
/// the model so downstream evaluation knows how inputs were scaled. Empty
/// means inputs are used raw.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl DataNorm {
    pub fn is_identity(&self) -> bool {
        self.mean.is_empty()
    }

    /// Standardize a `[C, H, W]` input in place. Identity norms pass through;
    /// otherwise the channel count must match.
    pub fn apply(&self, input: &mut Tensor) -> Result<()> {
        if self.is_identity() {
            return Ok(());
        }
        let shape = input.shape().to_vec();
        if shape.len() != 3 || shape[0] != self.mean.len() || self.mean.len() != self.std.len() {
            return Err(Error::Shape(format!(
                "normalization is per-channel over {} channels, input shape is {shape:?}",
                self.mean.len()
            )));
        }
        if self.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Invalid("normalization std must be positive".into()));
        }
        let plane = shape[1] * shape[2];
        let data = input.data_mut();
        for ch in 0..self.mean.len() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in &mut data[ch * plane..(ch + 1) * plane] {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// What follows a tentacle conv stage.
#[derive(Debug, Clone, PartialEq)]
pub enum StagePost {
    /// Inner stage: normalization folded with the sign activation. The stage
    /// output stays in the bit domain.
    Binact(ChannelThresholds),
    /// Final stage: normalization kept as a per-channel affine map, so the
    /// tentacle emits a float feature map for the head.
    Affine { scale: Vec<f32>, shift: Vec<f32> },
    /// Final stage without normalization: raw alpha-scaled counts.
    None,
}

impl StagePost {
    /// True for the variants that end the bit-domain pipeline.
    pub fn is_terminal(&self) -> bool {
        !matches!(self, StagePost::Binact(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TentacleStage {
    Conv {
        layer: BinaryConvLayer,
        post: StagePost,
    },
    MaxPool {
        k: usize,
        stride: usize,
    },
}

/// One binary replica of the baseline's inner layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tentacle {
    pub stages: Vec<TentacleStage>,
}

impl Tentacle {
    /// Run the stage pipeline on the shared block's bit output and globally
    /// average the final float map into one feature value per channel.
    pub fn forward(&self, input: &BitTensor) -> Result<Vec<f32>> {
        let mut bits = input.clone();
        let mut final_map: Option<Tensor> = None;
        for (i, stage) in self.stages.iter().enumerate() {
            if final_map.is_some() {
                return Err(Error::Invalid(format!(
                    "stage {i} follows the tentacle's terminal stage"
                )));
            }
            match stage {
                TentacleStage::Conv { layer, post } => {
                    let fmap = layer
                        .forward(&bits)
                        .map_err(|e| e.context(format!("stage {i} conv")))?;
                    match post {
                        StagePost::Binact(th) => {
                            bits = binact_apply(&fmap, th)
                                .map_err(|e| e.context(format!("stage {i} binact")))?;
                        }
                        StagePost::Affine { scale, shift } => {
                            let shape = fmap.shape().to_vec();
                            let block = fmap.len() / shape[0];
                            let data = fmap
                                .data()
                                .iter()
                                .enumerate()
                                .map(|(flat, &v)| {
                                    let ch = flat / block;
                                    scale[ch] * v + shift[ch]
                                })
                                .collect();
                            final_map = Some(Tensor::from_vec(&shape, data)?);
                        }
                        StagePost::None => final_map = Some(fmap),
                    }
                }
                TentacleStage::MaxPool { k, stride } => {
                    bits = bitcore::binary_maxpool(&bits, *k, *stride)
                        .map_err(|e| e.context(format!("stage {i} maxpool")))?;
                }
            }
        }
        let fmap = final_map.ok_or_else(|| {
            Error::Invalid("tentacle has no terminal conv stage".into())
        })?;
        let shape = fmap.shape();
        let (c, spatial) = (shape[0], fmap.len() / shape[0]);
        let data = fmap.data();
        Ok((0..c)
            .map(|ch| data[ch * spatial..(ch + 1) * spatial].iter().sum::<f32>() / spatial as f32)
            .collect())
    }
}

/// The full parallel-ensemble model: shared full-precision conv block, n
/// binary tentacles, shared fully-connected block.
#[derive(Debug, Clone, PartialEq)]
pub struct TentacleNetModel {
    pub n: usize,
    pub classes: usize,
    /// Pooled feature length per tentacle: equals `classes` for global-pool
    /// heads, the baseline's K for dense heads.
    pub feature_k: usize,
    pub head: HeadKind,
    pub input: [usize; 3],
    pub spec_digest: u64,
    pub master_seed: u64,
    pub tentacle_seeds: Vec<u64>,
    pub norm: DataNorm,
    pub shared_conv: FpConv,
    /// Fused normalization + sign following the shared conv.
    pub shared_post: ChannelThresholds,
    pub tentacles: Vec<Tentacle>,
    /// Head fusion: `n * feature_k` inputs, `classes` outputs, no bias.
    pub fc: FpDense,
}

impl TentacleNetModel {
    /// Whole-network inference: logits for one input sample.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f32>> {
        if input.shape() != self.input {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match model input {:?}",
                input.shape(),
                self.input
            )));
        }
        let mut input = input.clone();
        self.norm
            .apply(&mut input)
            .map_err(|e| e.context("input normalization"))?;
        let fmap = self
            .shared_conv
            .forward(&input)
            .map_err(|e| e.context("shared conv block"))?;
        let bits = binact_apply(&fmap, &self.shared_post)
            .map_err(|e| e.context("shared conv block binact"))?;
        let mut features = Vec::with_capacity(self.n * self.feature_k);
        for (i, tentacle) in self.tentacles.iter().enumerate() {
            let feats = tentacle
                .forward(&bits)
                .map_err(|e| e.context(format!("tentacle {i}")))?;
            features.extend_from_slice(&feats);
        }
        let logits = self
            .fc
            .forward(&Tensor::from_vec(&[features.len()], features)?)
            .map_err(|e| e.context("fc block"))?;
        if logits.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(logits.into_vec())
    }

    /// Argmax class for one input, ties to the lowest index.
    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(crate::layers::argmax(&self.forward(input)?))
    }

    /// Structural invariants: homogeneous tentacles, head dimensions per the
    /// template formulas, consistent per-channel array lengths.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("model has no tentacles".into()));
        }
        if self.tentacles.len() != self.n || self.tentacle_seeds.len() != self.n {
            return Err(Error::Invalid(format!(
                "tentacle count mismatch: n={} tentacles={} seeds={}",
                self.n,
                self.tentacles.len(),
                self.tentacle_seeds.len()
            )));
        }
        self.shared_conv.validate()?;
        self.shared_post.validate()?;
        if self.shared_conv.filters != self.shared_post.channels() {
            return Err(Error::Shape(format!(
                "shared conv emits {} channels, thresholds cover {}",
                self.shared_conv.filters,
                self.shared_post.channels()
            )));
        }
        let reference: Vec<String> = self.tentacles[0]
            .stages
            .iter()
            .map(stage_signature)
            .collect();
        for (i, t) in self.tentacles.iter().enumerate() {
            let sig: Vec<String> = t.stages.iter().map(stage_signature).collect();
            if sig != reference {
                return Err(Error::Invalid(format!(
                    "tentacle {i} structure diverges from tentacle 0"
                )));
            }
            for (s, stage) in t.stages.iter().enumerate() {
                if let TentacleStage::Conv { layer, post } = stage {
                    layer.validate().map_err(|e| {
                        e.context(format!("tentacle {i} stage {s}"))
                    })?;
                    let channels = layer.filters();
                    let post_channels = match post {
                        StagePost::Binact(th) => {
                            th.validate()?;
                            th.channels()
                        }
                        StagePost::Affine { scale, shift } => {
                            if scale.len() != shift.len() {
                                return Err(Error::Shape(format!(
                                    "tentacle {i} stage {s}: affine arrays disagree"
                                )));
                            }
                            scale.len()
                        }
                        StagePost::None => channels,
                    };
                    if post_channels != channels {
                        return Err(Error::Shape(format!(
                            "tentacle {i} stage {s}: {post_channels} post channels for {channels} filters"
                        )));
                    }
                    let terminal = post.is_terminal();
                    let last_conv = !t.stages[s + 1..]
                        .iter()
                        .any(|x| matches!(x, TentacleStage::Conv { .. }));
                    if terminal != last_conv {
                        return Err(Error::Invalid(format!(
                            "tentacle {i} stage {s}: terminal post on a non-final conv (or vice versa)"
                        )));
                    }
                }
            }
        }
        self.fc.validate()?;
        if self.fc.inputs != self.n * self.feature_k
            || self.fc.outputs != self.classes
            || self.fc.bias.is_some()
        {
            return Err(Error::Invalid(format!(
                "fc block must be {}x{} without bias, got {}x{} (bias: {})",
                self.classes,
                self.n * self.feature_k,
                self.fc.outputs,
                self.fc.inputs,
                self.fc.bias.is_some()
            )));
        }
        if self.head == HeadKind::GlobalPool && self.feature_k != self.classes {
            return Err(Error::Invalid(format!(
                "global-pool head needs feature_k = classes, got {} vs {}",
                self.feature_k, self.classes
            )));
        }
        Ok(())
    }
}

fn stage_signature(stage: &TentacleStage) -> String {
    match stage {
        TentacleStage::Conv { layer, post } => format!(
            "conv f{} c{} {}x{} s{} p{} {}",
            layer.filters(),
            layer.in_channels,
            layer.kh,
            layer.kw,
            layer.stride,
            layer.pad,
            match post {
                StagePost::Binact(_) => "binact",
                StagePost::Affine { .. } => "affine",
                StagePost::None => "raw",
            }
        ),
        TentacleStage::MaxPool { k, stride } => format!("maxpool k{k} s{stride}"),
    }
}
