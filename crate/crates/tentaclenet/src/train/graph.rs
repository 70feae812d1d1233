//! Training graphs: a differentiable shadow of the tentacle network and of
//! the full-precision baseline.
//!
//! The shadow keeps master float weights for every binary layer and live
//! batch-norm state for every normalization. Its forward pass computes the
//! same values the bit-packed inference path would: signs binarize with the
//! same tie rule, binary convs pad with -1, alpha rescales per filter.
//! Finalization packs signs, recomputes alpha, and folds the normalization
//! state through the same threshold helpers the builder uses, so an untrained
//! round trip reproduces the built model byte for byte.

use crate::bitcore::BitTensor;
use crate::error::{Error, Result};
use crate::layers::{affine_from_bn, fused_threshold, per_filter_alpha, BatchNormParams, BinaryConvLayer, FpConv, FpDense, FpLayer, BN_EPS};
use crate::model::spec::HeadKind;
use crate::model::{DataNorm, Fp32Model, StagePost, TentacleNetModel, TentacleStage};
use crate::tensor::Tensor;
use crate::train::ops::{
    bn_backward, bn_forward_eval, bn_forward_train, conv_backward, conv_forward, dense_backward,
    dense_forward, gap_backward, gap_forward, hardtanh_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, sign_forward, ste_mask_backward, BnCache, ConvCache, Fmap,
    PoolCache,
};

/// Exponential moving average factor for running batch-norm statistics.
const BN_MOMENTUM: f32 = 0.1;

/// Restart magnitude for master weights reconstructed from a filter whose
/// stored alpha is zero (sign times zero carries no sign information).
const DEAD_FILTER_RESTART: f32 = 0.05;

/// Live normalization state: learned affine, running statistics, and the
/// optimizer's velocity buffers.
#[derive(Debug, Clone)]
pub(crate) struct BnTrain {
    gamma: Vec<f32>,
    beta: Vec<f32>,
    run_mu: Vec<f32>,
    run_var: Vec<f32>,
    v_gamma: Vec<f32>,
    v_beta: Vec<f32>,
}

impl BnTrain {
    fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            run_mu: vec![0.0; channels],
            run_var: vec![1.0; channels],
            v_gamma: vec![0.0; channels],
            v_beta: vec![0.0; channels],
        }
    }

    fn from_params(p: &BatchNormParams) -> Self {
        Self {
            gamma: p.gamma.clone(),
            beta: p.beta.clone(),
            run_mu: p.mu.clone(),
            run_var: p.var.clone(),
            v_gamma: vec![0.0; p.channels()],
            v_beta: vec![0.0; p.channels()],
        }
    }

    fn to_params(&self) -> BatchNormParams {
        BatchNormParams {
            mu: self.run_mu.clone(),
            var: self.run_var.clone(),
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            eps: BN_EPS,
        }
    }

    fn update_running(&mut self, batch_mu: &[f32], batch_var: &[f32]) {
        for ch in 0..self.run_mu.len() {
            self.run_mu[ch] = (1.0 - BN_MOMENTUM) * self.run_mu[ch] + BN_MOMENTUM * batch_mu[ch];
            self.run_var[ch] = (1.0 - BN_MOMENTUM) * self.run_var[ch] + BN_MOMENTUM * batch_var[ch];
        }
    }

    fn sgd(&mut self, dgamma: &[f32], dbeta: &[f32], lr: f32, momentum: f32, gamma_clamp: f32) {
        for ch in 0..self.gamma.len() {
            self.v_gamma[ch] = momentum * self.v_gamma[ch] + dgamma[ch];
            self.gamma[ch] -= lr * self.v_gamma[ch];
            if self.gamma[ch].abs() < gamma_clamp {
                self.gamma[ch] = if self.gamma[ch] < 0.0 {
                    -gamma_clamp
                } else {
                    gamma_clamp
                };
            }
            self.v_beta[ch] = momentum * self.v_beta[ch] + dbeta[ch];
            self.beta[ch] -= lr * self.v_beta[ch];
        }
    }
}

/// Master weights and geometry for one binary conv stage.
#[derive(Debug, Clone)]
struct BinConvTrain {
    master: Vec<f32>,
    v_master: Vec<f32>,
    filters: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    bn: Option<BnTrain>,
    terminal: bool,
}

impl BinConvTrain {
    fn k(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    /// Effective conv weights for this forward: binarized (or surrogate
    /// clamped) masters scaled per filter by alpha. Alpha is treated as a
    /// constant by the backward pass.
    fn effective_weights(&self, surrogate: bool, frozen_alpha: Option<&[f32]>) -> Result<(Vec<f32>, Vec<f32>)> {
        let alpha = match frozen_alpha {
            Some(a) => a.to_vec(),
            None => per_filter_alpha(&self.master, self.filters)?,
        };
        let k = self.k();
        let mut w = Vec::with_capacity(self.master.len());
        for f in 0..self.filters {
            for &m in &self.master[f * k..(f + 1) * k] {
                let b = if surrogate {
                    m.clamp(-1.0, 1.0)
                } else if m >= 0.0 {
                    1.0
                } else {
                    -1.0
                };
                w.push(alpha[f] * b);
            }
        }
        Ok((w, alpha))
    }
}

#[derive(Debug, Clone)]
enum StageTrain {
    Conv(BinConvTrain),
    Pool { k: usize, stride: usize },
}

/// Cached values for one stage of one batch forward.
enum StageCache {
    Conv {
        conv: ConvCache,
        w_eff: Vec<f32>,
        alpha: Vec<f32>,
        pre_bn: Fmap,
        bn: Option<BnCache>,
        /// Pre-binarization values, present on inner stages only.
        pre_act: Option<Fmap>,
    },
    Pool(PoolCache),
}

struct TentacleCache {
    stages: Vec<StageCache>,
    final_c: usize,
    final_h: usize,
    final_w: usize,
}

struct BatchCaches {
    b: usize,
    shared_conv: ConvCache,
    shared_pre_bn: Fmap,
    shared_bn: BnCache,
    shared_pre_act: Fmap,
    tentacles: Vec<TentacleCache>,
    features: Vec<f32>,
}

/// Per-parameter gradients for one batch, shaped like the trainable state.
struct Grads {
    shared_w: Vec<f32>,
    shared_bias: Vec<f32>,
    shared_gamma: Vec<f32>,
    shared_beta: Vec<f32>,
    stages: Vec<Vec<StageGrads>>,
    fc_w: Vec<f32>,
}

#[derive(Default)]
struct StageGrads {
    master: Vec<f32>,
    gamma: Vec<f32>,
    beta: Vec<f32>,
}

/// The differentiable shadow of a tentacle network.
pub struct Trainer {
    input: [usize; 3],
    classes: usize,
    feature_k: usize,
    n: usize,
    head: HeadKind,
    spec_digest: u64,
    master_seed: u64,
    tentacle_seeds: Vec<u64>,
    norm: DataNorm,
    shared: FpConv,
    v_shared_w: Vec<f32>,
    v_shared_b: Vec<f32>,
    shared_bn: BnTrain,
    tentacles: Vec<Vec<StageTrain>>,
    fc_w: Vec<f32>,
    v_fc: Vec<f32>,
    /// Per tentacle, per conv stage: alphas pinned for surrogate-mode
    /// gradient checks. Unused in normal training.
    frozen_alpha: Option<Vec<Vec<Vec<f32>>>>,
}

impl Trainer {
    /// Build the trainable shadow of a model. Master weights are
    /// reconstructed as sign times alpha (exact for freshly built models,
    /// sign-preserving for trained ones); normalization state starts at
    /// identity with fresh running statistics.
    pub fn from_model(model: &TentacleNetModel) -> Result<Self> {
        model.validate()?;
        let mut tentacles = Vec::with_capacity(model.n);
        for t in &model.tentacles {
            let mut stages = Vec::with_capacity(t.stages.len());
            for stage in &t.stages {
                match stage {
                    TentacleStage::Conv { layer, post } => {
                        let filters = layer.filters();
                        let k = layer.in_channels * layer.kh * layer.kw;
                        let signs = layer.packed.unpack_to_signs();
                        let mut master = Vec::with_capacity(filters * k);
                        for f in 0..filters {
                            let scale = if layer.alpha[f] > 0.0 {
                                layer.alpha[f]
                            } else {
                                DEAD_FILTER_RESTART
                            };
                            for &s in &signs[f * k..(f + 1) * k] {
                                master.push(s * scale);
                            }
                        }
                        let bn = match post {
                            StagePost::None => None,
                            _ => Some(BnTrain::identity(filters)),
                        };
                        stages.push(StageTrain::Conv(BinConvTrain {
                            v_master: vec![0.0; master.len()],
                            master,
                            filters,
                            in_channels: layer.in_channels,
                            kh: layer.kh,
                            kw: layer.kw,
                            stride: layer.stride,
                            pad: layer.pad,
                            bn,
                            terminal: post.is_terminal(),
                        }));
                    }
                    TentacleStage::MaxPool { k, stride } => {
                        stages.push(StageTrain::Pool {
                            k: *k,
                            stride: *stride,
                        });
                    }
                }
            }
            tentacles.push(stages);
        }
        Ok(Self {
            input: model.input,
            classes: model.classes,
            feature_k: model.feature_k,
            n: model.n,
            head: model.head,
            spec_digest: model.spec_digest,
            master_seed: model.master_seed,
            tentacle_seeds: model.tentacle_seeds.clone(),
            norm: model.norm.clone(),
            v_shared_w: vec![0.0; model.shared_conv.weights.len()],
            v_shared_b: vec![0.0; model.shared_conv.bias.as_ref().map_or(0, Vec::len)],
            shared: model.shared_conv.clone(),
            shared_bn: BnTrain::identity(model.shared_conv.filters),
            tentacles,
            fc_w: model.fc.weights.clone(),
            v_fc: vec![0.0; model.fc.weights.len()],
            frozen_alpha: None,
        })
    }

    /// Pin every stage's alpha at its current value; surrogate-mode forwards
    /// use the pinned values so finite differences see a constant alpha.
    pub fn freeze_alpha(&mut self) -> Result<()> {
        let mut all = Vec::with_capacity(self.tentacles.len());
        for stages in &self.tentacles {
            let mut per = Vec::new();
            for stage in stages {
                if let StageTrain::Conv(conv) = stage {
                    per.push(per_filter_alpha(&conv.master, conv.filters)?);
                }
            }
            all.push(per);
        }
        self.frozen_alpha = Some(all);
        Ok(())
    }

    /// Min and max over every tentacle's master weights. Stays inside
    /// [-1, 1] because each step re-clips; exposed so callers can monitor
    /// that invariant.
    pub fn master_weight_range(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for stages in &self.tentacles {
            for stage in stages {
                if let StageTrain::Conv(conv) = stage {
                    for &m in &conv.master {
                        lo = lo.min(m);
                        hi = hi.max(m);
                    }
                }
            }
        }
        (lo, hi)
    }

    fn batch_input(&self, xs: &[&Tensor]) -> Result<Fmap> {
        let [c, h, w] = self.input;
        let mut data = Vec::with_capacity(xs.len() * c * h * w);
        for (i, x) in xs.iter().enumerate() {
            if x.shape() != self.input {
                return Err(Error::Shape(format!(
                    "sample {i} has shape {:?}, model expects {:?}",
                    x.shape(),
                    self.input
                )));
            }
            let mut t = (*x).clone();
            self.norm.apply(&mut t)?;
            data.extend_from_slice(t.data());
        }
        Fmap::from_data(xs.len(), c, h, w, data)
    }

    fn add_bias(out: &mut Fmap, bias: Option<&Vec<f32>>) {
        if let Some(bias) = bias {
            let plane = out.plane();
            for bi in 0..out.b {
                for f in 0..out.c {
                    let base = (bi * out.c + f) * plane;
                    for v in &mut out.data[base..base + plane] {
                        *v += bias[f];
                    }
                }
            }
        }
    }

    /// Training-mode forward over a batch. `surrogate` swaps every sign for
    /// hard-tanh (gradient checking); `update_running` folds this batch's
    /// statistics into the running averages.
    fn forward_train(
        &mut self,
        x: &Fmap,
        surrogate: bool,
        update_running: bool,
    ) -> Result<(Vec<f32>, BatchCaches)> {
        let b = x.b;
        let act = |m: &Fmap| if surrogate { hardtanh_forward(m) } else { sign_forward(m) };

        let (mut conv_out, shared_conv_cache) = conv_forward(
            x,
            &self.shared.weights,
            self.shared.filters,
            self.shared.kh,
            self.shared.kw,
            self.shared.stride,
            self.shared.pad,
            0.0,
        )?;
        Self::add_bias(&mut conv_out, self.shared.bias.as_ref());
        let (bn_out, mu, var, shared_bn_cache) =
            bn_forward_train(&conv_out, &self.shared_bn.gamma, &self.shared_bn.beta, BN_EPS)?;
        if update_running {
            self.shared_bn.update_running(&mu, &var);
        }
        let shared_out = act(&bn_out);

        let mut features = vec![0.0f32; b * self.n * self.feature_k];
        let mut tentacle_caches = Vec::with_capacity(self.n);
        let frozen = self.frozen_alpha.clone();
        for (ti, stages) in self.tentacles.iter_mut().enumerate() {
            let mut cur = shared_out.clone();
            let mut caches = Vec::with_capacity(stages.len());
            let mut conv_idx = 0;
            for stage in stages.iter_mut() {
                match stage {
                    StageTrain::Conv(conv) => {
                        let fa = frozen
                            .as_ref()
                            .map(|f| f[ti][conv_idx].as_slice())
                            .filter(|_| surrogate);
                        let (w_eff, alpha) = conv.effective_weights(surrogate, fa)?;
                        conv_idx += 1;
                        let (pre_bn, conv_cache) = conv_forward(
                            &cur, &w_eff, conv.filters, conv.kh, conv.kw, conv.stride, conv.pad,
                            -1.0,
                        )?;
                        let (bn_cache, bn_out) = match conv.bn.as_mut() {
                            Some(bn) => {
                                let (y, mu, var, cache) =
                                    bn_forward_train(&pre_bn, &bn.gamma, &bn.beta, BN_EPS)?;
                                if update_running {
                                    bn.update_running(&mu, &var);
                                }
                                (Some(cache), y)
                            }
                            None => (None, pre_bn.clone()),
                        };
                        if conv.terminal {
                            caches.push(StageCache::Conv {
                                conv: conv_cache,
                                w_eff,
                                alpha,
                                pre_bn,
                                bn: bn_cache,
                                pre_act: None,
                            });
                            cur = bn_out;
                        } else {
                            let out = act(&bn_out);
                            caches.push(StageCache::Conv {
                                conv: conv_cache,
                                w_eff,
                                alpha,
                                pre_bn,
                                bn: bn_cache,
                                pre_act: Some(bn_out),
                            });
                            cur = out;
                        }
                    }
                    StageTrain::Pool { k, stride } => {
                        let (y, cache) = maxpool_forward(&cur, *k, *stride)?;
                        caches.push(StageCache::Pool(cache));
                        cur = y;
                    }
                }
            }
            let pooled = gap_forward(&cur);
            for bi in 0..b {
                for f in 0..self.feature_k {
                    features[bi * self.n * self.feature_k + ti * self.feature_k + f] =
                        pooled[bi * cur.c + f];
                }
            }
            tentacle_caches.push(TentacleCache {
                stages: caches,
                final_c: cur.c,
                final_h: cur.h,
                final_w: cur.w,
            });
        }

        let logits = dense_forward(
            &features,
            b,
            self.n * self.feature_k,
            &self.fc_w,
            None,
            self.classes,
        );
        Ok((
            logits,
            BatchCaches {
                b,
                shared_conv: shared_conv_cache,
                shared_pre_bn: conv_out,
                shared_bn: shared_bn_cache,
                shared_pre_act: bn_out,
                tentacles: tentacle_caches,
                features,
            },
        ))
    }

    /// Inference-mode forward: running statistics, true signs. This is what
    /// the finalized model computes, up to float association.
    pub fn forward_eval(&self, xs: &[&Tensor]) -> Result<Vec<f32>> {
        let x = self.batch_input(xs)?;
        let b = x.b;
        let (mut conv_out, _) = conv_forward(
            &x,
            &self.shared.weights,
            self.shared.filters,
            self.shared.kh,
            self.shared.kw,
            self.shared.stride,
            self.shared.pad,
            0.0,
        )?;
        Self::add_bias(&mut conv_out, self.shared.bias.as_ref());
        let bn_out = bn_forward_eval(
            &conv_out,
            &self.shared_bn.gamma,
            &self.shared_bn.beta,
            &self.shared_bn.run_mu,
            &self.shared_bn.run_var,
            BN_EPS,
        );
        let shared_out = sign_forward(&bn_out);
        let mut features = vec![0.0f32; b * self.n * self.feature_k];
        for (ti, stages) in self.tentacles.iter().enumerate() {
            let mut cur = shared_out.clone();
            for stage in stages {
                match stage {
                    StageTrain::Conv(conv) => {
                        let (w_eff, _) = conv.effective_weights(false, None)?;
                        let (pre_bn, _) = conv_forward(
                            &cur, &w_eff, conv.filters, conv.kh, conv.kw, conv.stride, conv.pad,
                            -1.0,
                        )?;
                        let bn_out = match &conv.bn {
                            Some(bn) => bn_forward_eval(
                                &pre_bn,
                                &bn.gamma,
                                &bn.beta,
                                &bn.run_mu,
                                &bn.run_var,
                                BN_EPS,
                            ),
                            None => pre_bn,
                        };
                        cur = if conv.terminal {
                            bn_out
                        } else {
                            sign_forward(&bn_out)
                        };
                    }
                    StageTrain::Pool { k, stride } => {
                        let (y, _) = maxpool_forward(&cur, *k, *stride)?;
                        cur = y;
                    }
                }
            }
            let pooled = gap_forward(&cur);
            for bi in 0..b {
                for f in 0..self.feature_k {
                    features[bi * self.n * self.feature_k + ti * self.feature_k + f] =
                        pooled[bi * cur.c + f];
                }
            }
        }
        Ok(dense_forward(
            &features,
            b,
            self.n * self.feature_k,
            &self.fc_w,
            None,
            self.classes,
        ))
    }

    fn backward(&self, caches: &BatchCaches, dlogits: &[f32]) -> Grads {
        let b = caches.b;
        let nk = self.n * self.feature_k;
        let (d_fc_w, _, d_features) = dense_backward(
            &caches.features,
            b,
            nk,
            &self.fc_w,
            self.classes,
            false,
            dlogits,
        );

        let mut d_shared_out: Option<Fmap> = None;
        let mut stage_grads: Vec<Vec<StageGrads>> = Vec::with_capacity(self.n);
        for (ti, stages) in self.tentacles.iter().enumerate() {
            let tc = &caches.tentacles[ti];
            let mut d_pooled = vec![0.0f32; b * tc.final_c];
            for bi in 0..b {
                for f in 0..self.feature_k {
                    d_pooled[bi * tc.final_c + f] =
                        d_features[bi * nk + ti * self.feature_k + f];
                }
            }
            let mut d_cur = gap_backward(b, tc.final_c, tc.final_h, tc.final_w, &d_pooled);
            let mut grads: Vec<StageGrads> = stages.iter().map(|_| StageGrads::default()).collect();
            for (si, stage) in stages.iter().enumerate().rev() {
                match (stage, &tc.stages[si]) {
                    (
                        StageTrain::Conv(conv),
                        StageCache::Conv {
                            conv: conv_cache,
                            w_eff,
                            alpha,
                            pre_bn,
                            bn,
                            pre_act,
                        },
                    ) => {
                        let d_bn_out = match pre_act {
                            Some(pre) => ste_mask_backward(pre, &d_cur),
                            None => d_cur,
                        };
                        let d_pre_bn = match (&conv.bn, bn) {
                            (Some(bn_state), Some(bn_cache)) => {
                                let (dx, dgamma, dbeta) =
                                    bn_backward(bn_cache, pre_bn, &bn_state.gamma, &d_bn_out);
                                grads[si].gamma = dgamma;
                                grads[si].beta = dbeta;
                                dx
                            }
                            _ => d_bn_out,
                        };
                        let (dw_eff, dx) = conv_backward(conv_cache, w_eff, &d_pre_bn);
                        let k = conv.k();
                        let mut d_master = vec![0.0f32; conv.master.len()];
                        for f in 0..conv.filters {
                            for i in 0..k {
                                let idx = f * k + i;
                                if conv.master[idx].abs() <= 1.0 {
                                    d_master[idx] = dw_eff[idx] * alpha[f];
                                }
                            }
                        }
                        grads[si].master = d_master;
                        d_cur = dx;
                    }
                    (StageTrain::Pool { .. }, StageCache::Pool(cache)) => {
                        d_cur = maxpool_backward(cache, &d_cur);
                    }
                    _ => unreachable!("stage and cache kinds always match"),
                }
            }
            match d_shared_out.as_mut() {
                None => d_shared_out = Some(d_cur),
                Some(acc) => {
                    for (a, v) in acc.data.iter_mut().zip(&d_cur.data) {
                        *a += v;
                    }
                }
            }
            stage_grads.push(grads);
        }

        let d_shared_out = d_shared_out.expect("at least one tentacle");
        let d_shared_bn_out = ste_mask_backward(&caches.shared_pre_act, &d_shared_out);
        let (d_shared_pre_bn, d_gamma, d_beta) = bn_backward(
            &caches.shared_bn,
            &caches.shared_pre_bn,
            &self.shared_bn.gamma,
            &d_shared_bn_out,
        );
        let mut d_bias = vec![0.0f32; self.v_shared_b.len()];
        if !d_bias.is_empty() {
            let plane = d_shared_pre_bn.plane();
            for bi in 0..b {
                for f in 0..d_shared_pre_bn.c {
                    let base = (bi * d_shared_pre_bn.c + f) * plane;
                    for &g in &d_shared_pre_bn.data[base..base + plane] {
                        d_bias[f] += g;
                    }
                }
            }
        }
        let (d_shared_w, _) = conv_backward(&caches.shared_conv, &self.shared.weights, &d_shared_pre_bn);

        Grads {
            shared_w: d_shared_w,
            shared_bias: d_bias,
            shared_gamma: d_gamma,
            shared_beta: d_beta,
            stages: stage_grads,
            fc_w: d_fc_w,
        }
    }

    fn step(&mut self, grads: &Grads, lr: f64, momentum: f32, gamma_clamp: f32) {
        let lr = lr as f32;
        sgd_slice(&mut self.shared.weights, &mut self.v_shared_w, &grads.shared_w, lr, momentum);
        if let Some(bias) = self.shared.bias.as_mut() {
            sgd_slice(bias, &mut self.v_shared_b, &grads.shared_bias, lr, momentum);
        }
        self.shared_bn
            .sgd(&grads.shared_gamma, &grads.shared_beta, lr, momentum, gamma_clamp);
        for (stages, sg) in self.tentacles.iter_mut().zip(&grads.stages) {
            for (stage, g) in stages.iter_mut().zip(sg) {
                if let StageTrain::Conv(conv) = stage {
                    sgd_slice(&mut conv.master, &mut conv.v_master, &g.master, lr, momentum);
                    for m in &mut conv.master {
                        *m = m.clamp(-1.0, 1.0);
                    }
                    if let Some(bn) = conv.bn.as_mut() {
                        bn.sgd(&g.gamma, &g.beta, lr, momentum, gamma_clamp);
                    }
                }
            }
        }
        sgd_slice(&mut self.fc_w, &mut self.v_fc, &grads.fc_w, lr, momentum);
    }

    /// Pack the trained state back into an inference model: signs, fresh
    /// alphas, thresholds and affines folded from the running statistics.
    pub fn finalize(&self) -> Result<TentacleNetModel> {
        let mut tentacles = Vec::with_capacity(self.n);
        for stages in &self.tentacles {
            let mut out = Vec::with_capacity(stages.len());
            for stage in stages {
                match stage {
                    StageTrain::Conv(conv) => {
                        let alpha = per_filter_alpha(&conv.master, conv.filters)?;
                        let packed =
                            BitTensor::from_signs(&[conv.filters, conv.k()], &conv.master)?;
                        let post = match (&conv.bn, conv.terminal) {
                            (Some(bn), false) => {
                                StagePost::Binact(fused_threshold(&bn.to_params())?)
                            }
                            (Some(bn), true) => {
                                let (scale, shift) = affine_from_bn(&bn.to_params())?;
                                StagePost::Affine { scale, shift }
                            }
                            (None, true) => StagePost::None,
                            (None, false) => {
                                return Err(Error::Invalid(
                                    "inner binary stage lost its normalization".into(),
                                ))
                            }
                        };
                        out.push(TentacleStage::Conv {
                            layer: BinaryConvLayer {
                                packed,
                                alpha,
                                in_channels: conv.in_channels,
                                kh: conv.kh,
                                kw: conv.kw,
                                stride: conv.stride,
                                pad: conv.pad,
                            },
                            post,
                        });
                    }
                    StageTrain::Pool { k, stride } => {
                        out.push(TentacleStage::MaxPool {
                            k: *k,
                            stride: *stride,
                        });
                    }
                }
            }
            tentacles.push(crate::model::Tentacle { stages: out });
        }
        let model = TentacleNetModel {
            n: self.n,
            classes: self.classes,
            feature_k: self.feature_k,
            head: self.head,
            input: self.input,
            spec_digest: self.spec_digest,
            master_seed: self.master_seed,
            tentacle_seeds: self.tentacle_seeds.clone(),
            norm: self.norm.clone(),
            shared_conv: self.shared.clone(),
            shared_post: fused_threshold(&self.shared_bn.to_params())?,
            tentacles,
            fc: FpDense {
                weights: self.fc_w.clone(),
                bias: None,
                outputs: self.classes,
                inputs: self.n * self.feature_k,
            },
        };
        model.validate()?;
        Ok(model)
    }

    /// One surrogate-mode forward returning the batch loss; used by the
    /// finite-difference gradient tests.
    #[cfg(test)]
    fn surrogate_loss(&mut self, xs: &[&Tensor], labels: &[usize]) -> Result<f64> {
        let x = self.batch_input(xs)?;
        let (logits, _) = self.forward_train(&x, true, false)?;
        let (loss, _) = crate::train::ops::batch_ce(&logits, xs.len(), self.classes, labels)?;
        Ok(loss)
    }

    #[cfg(test)]
    fn surrogate_grads(&mut self, xs: &[&Tensor], labels: &[usize]) -> Result<Grads> {
        let x = self.batch_input(xs)?;
        let (logits, caches) = self.forward_train(&x, true, false)?;
        let (_, dlogits) = crate::train::ops::batch_ce(&logits, xs.len(), self.classes, labels)?;
        Ok(self.backward(&caches, &dlogits))
    }
}

fn sgd_slice(params: &mut [f32], velocity: &mut [f32], grads: &[f32], lr: f32, momentum: f32) {
    for i in 0..params.len() {
        velocity[i] = momentum * velocity[i] + grads[i];
        params[i] -= lr * velocity[i];
    }
}

/// A graph the epoch driver can train: one optimizer step over a batch, and
/// an inference-mode forward for validation metrics. Public so callers can
/// drive custom training loops over either trainer kind.
pub trait Graph {
    /// Run one momentum-SGD step on a batch and return its mean loss.
    fn train_batch(
        &mut self,
        xs: &[&Tensor],
        labels: &[usize],
        lr: f64,
        momentum: f32,
        gamma_clamp: f32,
    ) -> Result<f64>;
    /// Inference-mode logits for a batch, concatenated sample-major.
    fn eval_logits(&self, xs: &[&Tensor]) -> Result<Vec<f32>>;
    fn class_count(&self) -> usize;
}

impl Graph for Trainer {
    fn train_batch(
        &mut self,
        xs: &[&Tensor],
        labels: &[usize],
        lr: f64,
        momentum: f32,
        gamma_clamp: f32,
    ) -> Result<f64> {
        let x = self.batch_input(xs)?;
        let (logits, caches) = self.forward_train(&x, false, true)?;
        let (loss, dlogits) =
            crate::train::ops::batch_ce(&logits, xs.len(), self.classes, labels)?;
        let grads = self.backward(&caches, &dlogits);
        self.step(&grads, lr, momentum, gamma_clamp);
        Ok(loss)
    }

    fn eval_logits(&self, xs: &[&Tensor]) -> Result<Vec<f32>> {
        self.forward_eval(xs)
    }

    fn class_count(&self) -> usize {
        self.classes
    }
}

/// Trainable state for one stage of the full-precision baseline.
enum FpStageTrain {
    Conv {
        conv: FpConv,
        v_w: Vec<f32>,
        v_b: Vec<f32>,
    },
    Bn(BnTrain),
    Relu,
    Pool { k: usize, stride: usize },
}

enum FpStageCache {
    Conv(ConvCache),
    Bn { cache: BnCache, pre: Fmap },
    Relu { pre: Fmap },
    Pool(PoolCache),
}

/// The differentiable shadow of the full-precision baseline.
pub struct Fp32Trainer {
    input: [usize; 3],
    classes: usize,
    head: HeadKind,
    norm: DataNorm,
    stages: Vec<FpStageTrain>,
    dense: Option<FpDense>,
    v_dense_w: Vec<f32>,
    v_dense_b: Vec<f32>,
}

impl Fp32Trainer {
    pub fn from_model(model: &Fp32Model) -> Result<Self> {
        let mut stages = Vec::with_capacity(model.body.len());
        for layer in &model.body {
            match layer {
                FpLayer::Conv(c) => stages.push(FpStageTrain::Conv {
                    v_w: vec![0.0; c.weights.len()],
                    v_b: vec![0.0; c.bias.as_ref().map_or(0, Vec::len)],
                    conv: c.clone(),
                }),
                FpLayer::BatchNorm(p) => stages.push(FpStageTrain::Bn(BnTrain::from_params(p))),
                FpLayer::Relu => stages.push(FpStageTrain::Relu),
                FpLayer::MaxPool { k, stride } => stages.push(FpStageTrain::Pool {
                    k: *k,
                    stride: *stride,
                }),
                FpLayer::GlobalAvgPool | FpLayer::Dense(_) => {
                    return Err(Error::Invalid(
                        "baseline body must hold convs, norms, relus and pools only".into(),
                    ))
                }
            }
        }
        Ok(Self {
            input: model.input,
            classes: model.classes,
            head: model.head,
            norm: model.norm.clone(),
            stages,
            v_dense_w: vec![0.0; model.final_dense.as_ref().map_or(0, |d| d.weights.len())],
            v_dense_b: vec![
                0.0;
                model
                    .final_dense
                    .as_ref()
                    .and_then(|d| d.bias.as_ref())
                    .map_or(0, Vec::len)
            ],
            dense: model.final_dense.clone(),
        })
    }

    fn batch_input(&self, xs: &[&Tensor]) -> Result<Fmap> {
        let [c, h, w] = self.input;
        let mut data = Vec::with_capacity(xs.len() * c * h * w);
        for (i, x) in xs.iter().enumerate() {
            if x.shape() != self.input {
                return Err(Error::Shape(format!(
                    "sample {i} has shape {:?}, model expects {:?}",
                    x.shape(),
                    self.input
                )));
            }
            let mut t = (*x).clone();
            self.norm.apply(&mut t)?;
            data.extend_from_slice(t.data());
        }
        Fmap::from_data(xs.len(), c, h, w, data)
    }

    pub fn finalize(&self) -> Result<Fp32Model> {
        let mut body = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            match stage {
                FpStageTrain::Conv { conv, .. } => body.push(FpLayer::Conv(conv.clone())),
                FpStageTrain::Bn(bn) => body.push(FpLayer::BatchNorm(bn.to_params())),
                FpStageTrain::Relu => body.push(FpLayer::Relu),
                FpStageTrain::Pool { k, stride } => body.push(FpLayer::MaxPool {
                    k: *k,
                    stride: *stride,
                }),
            }
        }
        Ok(Fp32Model {
            input: self.input,
            classes: self.classes,
            head: self.head,
            body,
            final_dense: self.dense.clone(),
            norm: self.norm.clone(),
        })
    }
}

impl Graph for Fp32Trainer {
    fn train_batch(
        &mut self,
        xs: &[&Tensor],
        labels: &[usize],
        lr: f64,
        momentum: f32,
        gamma_clamp: f32,
    ) -> Result<f64> {
        let mut cur = self.batch_input(xs)?;
        let b = cur.b;
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in self.stages.iter_mut() {
            match stage {
                FpStageTrain::Conv { conv, .. } => {
                    let (mut y, cache) = conv_forward(
                        &cur,
                        &conv.weights,
                        conv.filters,
                        conv.kh,
                        conv.kw,
                        conv.stride,
                        conv.pad,
                        0.0,
                    )?;
                    Trainer::add_bias(&mut y, conv.bias.as_ref());
                    caches.push(FpStageCache::Conv(cache));
                    cur = y;
                }
                FpStageTrain::Bn(bn) => {
                    let (y, mu, var, cache) =
                        bn_forward_train(&cur, &bn.gamma, &bn.beta, BN_EPS)?;
                    bn.update_running(&mu, &var);
                    caches.push(FpStageCache::Bn { cache, pre: cur });
                    cur = y;
                }
                FpStageTrain::Relu => {
                    let y = relu_forward(&cur);
                    caches.push(FpStageCache::Relu { pre: cur });
                    cur = y;
                }
                FpStageTrain::Pool { k, stride } => {
                    let (y, cache) = maxpool_forward(&cur, *k, *stride)?;
                    caches.push(FpStageCache::Pool(cache));
                    cur = y;
                }
            }
        }
        let (final_c, final_h, final_w) = (cur.c, cur.h, cur.w);
        let features = gap_forward(&cur);
        let logits = match &self.dense {
            Some(d) => dense_forward(&features, b, d.inputs, &d.weights, d.bias.as_deref(), d.outputs),
            None => features.clone(),
        };
        let (loss, dlogits) = crate::train::ops::batch_ce(&logits, b, self.classes, labels)?;

        let d_features = match self.dense.as_ref() {
            Some(d) => {
                let (dw, db, dx) = dense_backward(
                    &features,
                    b,
                    d.inputs,
                    &d.weights,
                    d.outputs,
                    d.bias.is_some(),
                    &dlogits,
                );
                let d = self.dense.as_mut().unwrap();
                sgd_slice(&mut d.weights, &mut self.v_dense_w, &dw, lr as f32, momentum);
                if let (Some(bias), Some(db)) = (d.bias.as_mut(), db) {
                    sgd_slice(bias, &mut self.v_dense_b, &db, lr as f32, momentum);
                }
                dx
            }
            None => dlogits,
        };
        let mut d_cur = gap_backward(b, final_c, final_h, final_w, &d_features);
        for (stage, cache) in self.stages.iter_mut().zip(&caches).rev() {
            match (stage, cache) {
                (FpStageTrain::Conv { conv, v_w, v_b }, FpStageCache::Conv(cc)) => {
                    if let Some(bias) = conv.bias.as_mut() {
                        let plane = d_cur.plane();
                        let mut db = vec![0.0f32; bias.len()];
                        for bi in 0..b {
                            for f in 0..d_cur.c {
                                let base = (bi * d_cur.c + f) * plane;
                                for &g in &d_cur.data[base..base + plane] {
                                    db[f] += g;
                                }
                            }
                        }
                        sgd_slice(bias, v_b, &db, lr as f32, momentum);
                    }
                    let (dw, dx) = conv_backward(cc, &conv.weights, &d_cur);
                    sgd_slice(&mut conv.weights, v_w, &dw, lr as f32, momentum);
                    d_cur = dx;
                }
                (FpStageTrain::Bn(bn), FpStageCache::Bn { cache, pre }) => {
                    let (dx, dgamma, dbeta) = bn_backward(cache, pre, &bn.gamma, &d_cur);
                    bn.sgd(&dgamma, &dbeta, lr as f32, momentum, gamma_clamp);
                    d_cur = dx;
                }
                (FpStageTrain::Relu, FpStageCache::Relu { pre }) => {
                    d_cur = relu_backward(pre, &d_cur);
                }
                (FpStageTrain::Pool { .. }, FpStageCache::Pool(cache)) => {
                    d_cur = maxpool_backward(cache, &d_cur);
                }
                _ => unreachable!("stage and cache kinds always match"),
            }
        }
        Ok(loss)
    }

    fn eval_logits(&self, xs: &[&Tensor]) -> Result<Vec<f32>> {
        let model = self.finalize()?;
        let mut out = Vec::with_capacity(xs.len() * self.classes);
        for x in xs {
            out.extend(model.forward(x)?);
        }
        Ok(out)
    }

    fn class_count(&self) -> usize {
        self.classes
    }
}
