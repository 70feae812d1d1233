//! Release gate. Each test checks one contract of the engine end to end:
//! kernel exactness, builder shape laws, footprint accounting, the ensemble
//! study, training mechanics, serialization, and the boosting arithmetic.
//! Every random draw is seeded, so the suite is deterministic.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tentaclenet::bitcore::{xnor_popcount_dot, BitTensor};
use tentaclenet::data::{synth_dataset, Split};
use tentaclenet::ensemble::{
    bagging_predict, bagging_train, compare_report, samme_alpha, samme_reweight,
    CompareCandidate,
};
use tentaclenet::layers::{
    binact_apply, fused_threshold, BatchNormParams, BinaryConvLayer,
};
use tentaclenet::model::hadamard::{pseudo_hadamard, sylvester};
use tentaclenet::model::spec::{HeadKind, SpecLayer};
use tentaclenet::model::{
    build_tentaclenet, footprint, load_model, parse_spec, save_model,
};
use tentaclenet::rng::{stream, stream_rng};
use tentaclenet::tensor::Tensor;
use tentaclenet::train::{
    evaluate, train, Graph, LRScheduler, ModelTrainer, TrainConfig,
};

fn study_spec_text() -> &'static str {
    "input 1x16x16\nconv 8 3x3 pad 1\nmaxpool 2\nconv 8 3x3 pad 1\nhead dense\nclasses 3\n"
}

#[test]
fn a01_xnor_dot_equals_float_dot_on_1000_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    for _ in 0..1000 {
        let n = rng.gen_range(1..=512);
        let a: Vec<f32> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let b: Vec<f32> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let pa = BitTensor::from_signs(&[1, n], &a).unwrap();
        let pb = BitTensor::from_signs(&[1, n], &b).unwrap();
        let fast = xnor_popcount_dot(pa.row_words(0), pb.row_words(0), n).unwrap();
        let exact: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        assert_eq!(fast as f64, exact, "dot mismatch at n={n}");
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "kernel check took {secs:.1}s");
}

/// Naive sliding-window conv over sign arrays. Out-of-bounds taps read -1,
/// matching the bit domain where padding is the zero bit. The filter scale
/// is the per-filter mean absolute weight, accumulated in f64.
#[allow(clippy::too_many_arguments)]
fn naive_scaled_conv(
    input: &[f32],
    weights: &[f32],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = h + 2 * pad - k + 1;
    let ow = w + 2 * pad - k + 1;
    let taps = c * k * k;
    let mut out = Vec::with_capacity(f * oh * ow);
    for fi in 0..f {
        let wf = &weights[fi * taps..(fi + 1) * taps];
        let alpha = wf.iter().map(|v| v.abs() as f64).sum::<f64>() / taps as f64;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i64;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy + ky) as isize - pad as isize;
                            let ix = (ox + kx) as isize - pad as isize;
                            let xv = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                let idx = (ic * h + iy as usize) * w + ix as usize;
                                if input[idx] >= 0.0 { 1 } else { -1 }
                            } else {
                                -1
                            };
                            let wv = if wf[(ic * k + ky) * k + kx] >= 0.0 { 1 } else { -1 };
                            acc += (xv * wv) as i64;
                        }
                    }
                }
                out.push(alpha * acc as f64);
            }
        }
    }
    out
}

#[test]
fn a02_binary_conv_matches_naive_oracle_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let start = Instant::now();
    for case in 0..200 {
        let c = rng.gen_range(1..=4);
        let f = rng.gen_range(1..=4);
        let h = rng.gen_range(1..=8);
        let w = rng.gen_range(1..=8);
        let pad = rng.gen_range(0..=1usize);
        let k_max = (h + 2 * pad).min(w + 2 * pad).min(3);
        let k = rng.gen_range(1..=k_max);

        let input: Vec<f32> = (0..c * h * w)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let weights: Vec<f32> = (0..f * c * k * k).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
        let taps = c * k * k;
        let alpha: Vec<f32> = (0..f)
            .map(|fi| {
                let wf = &weights[fi * taps..(fi + 1) * taps];
                (wf.iter().map(|v| v.abs() as f64).sum::<f64>() / taps as f64) as f32
            })
            .collect();

        let layer = BinaryConvLayer {
            packed: BitTensor::from_signs(&[f, taps], &weights).unwrap(),
            alpha,
            in_channels: c,
            kh: k,
            kw: k,
            stride: 1,
            pad,
        };
        let packed_in = BitTensor::from_signs(&[c, h, w], &input).unwrap();
        let got = layer.forward(&packed_in).unwrap();
        let want = naive_scaled_conv(&input, &weights, c, h, w, f, k, pad);

        assert_eq!(got.data().len(), want.len(), "case {case}: shape mismatch");
        for (i, (g, e)) in got.data().iter().zip(&want).enumerate() {
            let rel = (*g as f64 - e).abs() / e.abs().max(1.0);
            assert!(rel <= 1e-5, "case {case} position {i}: got {g}, want {e}");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "conv check took {secs:.1}s");
}

#[test]
fn a03_fused_threshold_agrees_with_explicit_batchnorm_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let chunk = 1000;
    let mut retained = 0usize;
    for _ in 0..100 {
        let mut mu = Vec::with_capacity(chunk);
        let mut var = Vec::with_capacity(chunk);
        let mut gamma = Vec::with_capacity(chunk);
        let mut beta = Vec::with_capacity(chunk);
        let mut xs = Vec::with_capacity(chunk);
        for _ in 0..chunk {
            mu.push(rng.gen_range(-2.0..2.0f32));
            var.push(rng.gen_range(0.0..4.0f32));
            let mag = rng.gen_range(1e-3..3.0f32);
            gamma.push(if rng.gen::<bool>() { mag } else { -mag });
            beta.push(rng.gen_range(-2.0..2.0f32));
            xs.push(rng.gen_range(-4.0..4.0f32));
        }
        let bn = BatchNormParams {
            mu: mu.clone(),
            var: var.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            eps: 1e-5,
        };
        let th = fused_threshold(&bn).unwrap();
        let fmap = Tensor::from_vec(&[chunk, 1, 1], xs.clone()).unwrap();
        let bits = binact_apply(&fmap, &th).unwrap();
        for ch in 0..chunk {
            let y = gamma[ch] as f64 * (xs[ch] as f64 - mu[ch] as f64)
                / (var[ch] as f64 + 1e-5).sqrt()
                + beta[ch] as f64;
            if y.abs() < 1e-6 {
                continue;
            }
            retained += 1;
            assert_eq!(
                bits.get_bit(ch, 0),
                y >= 0.0,
                "channel {ch}: x={} mu={} var={} gamma={} beta={} bn={y}",
                xs[ch], mu[ch], var[ch], gamma[ch], beta[ch]
            );
        }
    }
    assert!(retained > 99_000, "only {retained} of 100000 samples retained");
}

#[test]
fn a04_head_fusion_dimensions_follow_the_shape_laws() {
    // Feature-concatenation head: n*K inputs into C outputs.
    let dense = parse_spec(study_spec_text()).unwrap();
    let k = dense.feature_k().unwrap();
    assert_eq!(k, 8);
    // Logit-concatenation head: the final conv emits one channel per class,
    // so the fc block sees n*C inputs and holds n*C^2 weights.
    let pool = parse_spec(
        "input 1x16x16\nconv 8 3x3 pad 1\nconv 5 3x3 pad 1\nhead global_pool\nclasses 5\n",
    )
    .unwrap();
    assert_eq!(pool.head, HeadKind::GlobalPool);
    assert!(matches!(pool.layers.last(), Some(SpecLayer::Conv { filters: 5, .. })));

    for n in 1..=8 {
        let m = build_tentaclenet(&dense, n, 7).unwrap();
        assert_eq!(m.fc.inputs, n * k, "dense head inputs at n={n}");
        assert_eq!(m.fc.outputs, 3);
        assert_eq!(m.fc.weights.len(), n * k * 3, "dense head weights at n={n}");
        assert!(m.fc.bias.is_none());

        let m = build_tentaclenet(&pool, n, 7).unwrap();
        assert_eq!(m.fc.inputs, n * 5, "pool head inputs at n={n}");
        assert_eq!(m.fc.outputs, 5);
        assert_eq!(m.fc.weights.len(), n * 5 * 5, "pool head weights at n={n}");
    }
}

#[test]
fn a05_sylvester_gram_is_scaled_identity_and_pseudo_rows_stay_orthogonal() {
    for kpow in 0..=6u32 {
        let order = 1usize << kpow;
        let h = sylvester(order).unwrap();
        assert_eq!((h.rows, h.cols), (order, order));
        // Column gram: H^T H must equal order * I entry for entry.
        for a in 0..order {
            for b in 0..order {
                let dot: i64 = (0..order)
                    .map(|r| i64::from(h.at(r, a)) * i64::from(h.at(r, b)))
                    .sum();
                let want = if a == b { order as i64 } else { 0 };
                assert_eq!(dot, want, "order {order} columns ({a},{b})");
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for kpow in 1..=6u32 {
        let order = 1usize << kpow;
        let bank = pseudo_hadamard(order, order, &mut rng).unwrap();
        for a in 0..order {
            for b in 0..a {
                assert_eq!(bank.row_dot(a, b), 0, "order {order} rows ({a},{b})");
            }
        }
    }
}

#[test]
fn a06_footprint_grows_affinely_and_savings_arithmetic_reproduces() {
    let spec = parse_spec(study_spec_text()).unwrap();
    let totals: Vec<u64> = (1..=6)
        .map(|n| footprint(&build_tentaclenet(&spec, n, 3).unwrap()).total_bytes)
        .collect();
    let slope = totals[1] - totals[0];
    for w in totals.windows(2) {
        assert_eq!(w[1] - w[0], slope, "increments differ: {totals:?}");
    }

    // Expected slope from the serialized format itself: one tentacle's packed
    // filter words, its f32 alphas, its normalization records (5 bytes per
    // fused-threshold channel, 8 per terminal affine channel), plus one more
    // feature group of fc weights.
    let probe = build_tentaclenet(&spec, 1, 3).unwrap();
    let mut expected = 0u64;
    for stage in &probe.tentacles[0].stages {
        if let tentaclenet::model::TentacleStage::Conv { layer, post } = stage {
            expected += 8 * layer.packed.words().len() as u64;
            expected += 4 * layer.alpha.len() as u64;
            expected += match post {
                tentaclenet::model::StagePost::Binact(th) => 5 * th.channels() as u64,
                tentaclenet::model::StagePost::Affine { scale, .. } => 8 * scale.len() as u64,
                tentaclenet::model::StagePost::None => 0,
            };
        }
    }
    expected += 4 * (probe.feature_k * probe.classes) as u64;
    assert_eq!(slope, expected, "slope vs per-tentacle bytes");

    // Published-size arithmetic: the percent column is the size reduction
    // against the smallest competing ensemble, truncated to one decimal.
    let rows = compare_report(
        70.0,
        &[
            CompareCandidate {
                name: "tentaclenet".into(),
                members: 8,
                acc_pct: 67.0,
                footprint_bytes: 645,
            },
            CompareCandidate {
                name: "boosting".into(),
                members: 8,
                acc_pct: 66.0,
                footprint_bytes: 1445,
            },
        ],
    );
    assert_eq!(rows[0].savings_pct, 55.3);
    assert_eq!(rows[1].savings_pct, 0.0);
    let rows = compare_report(
        70.0,
        &[
            CompareCandidate {
                name: "tentaclenet".into(),
                members: 4,
                acc_pct: 68.0,
                footprint_bytes: 188,
            },
            CompareCandidate {
                name: "bagging".into(),
                members: 4,
                acc_pct: 67.0,
                footprint_bytes: 697,
            },
        ],
    );
    assert_eq!(rows[0].savings_pct, 73.0);
}

/// Accuracy study shared by the two statistical gates: 5 seeds of the
/// 3-class synthetic task for widths n in {1, 2, 4}, plus a 4-member bagged
/// baseline at the same budget. Deterministic end to end.
struct Study {
    mean_by_n: [(usize, f64); 3],
    bagging_mean: f64,
    secs: f64,
}

static STUDY: OnceLock<Study> = OnceLock::new();

fn study() -> &'static Study {
    STUDY.get_or_init(|| {
        let spec = parse_spec(study_spec_text()).unwrap();
        let data = synth_dataset(0, 3, 1, 16, 16, 3000, 600).unwrap();
        let test = data.subset(&data.indices(Split::Test)).unwrap();
        let cfg_for = |seed: u64| TrainConfig {
            epochs: 40,
            lr: 0.05,
            batch: 32,
            seed,
            ..TrainConfig::default()
        };
        let start = Instant::now();

        let mut mean_by_n = [(1usize, 0.0f64), (2, 0.0), (4, 0.0)];
        for slot in &mut mean_by_n {
            let mut sum = 0.0;
            for seed in 0..5u64 {
                let model = build_tentaclenet(&spec, slot.0, seed).unwrap();
                let (trained, _) = train(&model, &data, &cfg_for(seed)).unwrap();
                sum += evaluate(&trained, &test).unwrap().accuracy_pct;
            }
            slot.1 = sum / 5.0;
        }

        let mut bag_sum = 0.0;
        for seed in 0..5u64 {
            let mut rng = stream_rng(seed, stream::BAGGING);
            let ens = bagging_train(&spec, &data, 4, &cfg_for(seed), &mut rng).unwrap();
            let hits = (0..test.len())
                .filter(|&i| bagging_predict(&ens, &test.samples[i]).unwrap() == test.labels[i])
                .count();
            bag_sum += 100.0 * hits as f64 / test.len() as f64;
        }

        Study {
            mean_by_n,
            bagging_mean: bag_sum / 5.0,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn a07_widening_the_ensemble_lifts_mean_accuracy() {
    let s = study();
    let [(_, m1), (_, m2), (_, m4)] = s.mean_by_n;
    println!("means: n=1 {m1:.2}, n=2 {m2:.2}, n=4 {m4:.2} ({:.0}s)", s.secs);
    assert!(m2 >= m1, "n=2 mean {m2:.2} fell below n=1 mean {m1:.2}");
    assert!(m4 >= m2, "n=4 mean {m4:.2} fell below n=2 mean {m2:.2}");
    assert!(
        m4 - m1 >= 3.0,
        "n=4 mean {m4:.2} does not exceed n=1 mean {m1:.2} by 3 points"
    );
    assert!(s.secs < 900.0, "study took {:.0}s", s.secs);
}

#[test]
fn a08_shared_block_ensemble_keeps_pace_with_bagging() {
    let s = study();
    let m4 = s.mean_by_n[2].1;
    println!("tentacles n=4 {m4:.2} vs bagging m=4 {:.2}", s.bagging_mean);
    assert!(
        m4 >= s.bagging_mean - 0.5,
        "n=4 mean {m4:.2} trails 4-member bagging {:.2} by more than 0.5",
        s.bagging_mean
    );
}

#[test]
fn a09_plateau_drops_lr_masters_stay_clipped_and_reruns_are_byte_identical() {
    // Exactly 15 non-improving epochs trigger one factor-0.1 drop.
    let mut sched = LRScheduler::new(0.01, 0.1, 15, 1e-4).unwrap();
    sched.step(1.0).unwrap();
    for _ in 0..14 {
        sched.step(1.0).unwrap();
        assert_eq!(sched.lr(), 0.01, "early drop");
    }
    sched.step(1.0).unwrap();
    assert_eq!(sched.lr(), 0.01 * 0.1, "first drop");
    for _ in 0..14 {
        sched.step(1.0).unwrap();
        assert_eq!(sched.lr(), 0.01 * 0.1, "early second drop");
    }
    sched.step(1.0).unwrap();
    assert_eq!(sched.lr(), 0.01 * 0.1 * 0.1, "second drop");

    // Master weights stay inside [-1, 1] after every optimizer step, even at
    // a learning rate that would push them far outside without the clip.
    let spec = parse_spec(
        "input 1x8x8\nconv 4 3x3 pad 1\nconv 4 3x3 pad 1\nhead dense\nclasses 2\n",
    )
    .unwrap();
    let data = synth_dataset(9, 2, 1, 8, 8, 64, 16).unwrap();
    let model = build_tentaclenet(&spec, 2, 9).unwrap();
    let mut trainer = ModelTrainer::from_model(&model).unwrap();
    let xs: Vec<&Tensor> = data.samples[..8].iter().collect();
    let labels = &data.labels[..8];
    for step in 0..30 {
        trainer.train_batch(&xs, labels, 0.7, 0.9, 1e-8).unwrap();
        let (lo, hi) = trainer.master_weight_range();
        assert!(
            (-1.0..=1.0).contains(&lo) && (-1.0..=1.0).contains(&hi),
            "step {step}: master range [{lo}, {hi}]"
        );
    }

    // Same seed, same config: the full build+train+save pipeline emits the
    // same file twice.
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.05,
        batch: 16,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut files = Vec::new();
    for run in 0..2 {
        let model = build_tentaclenet(&spec, 2, 11).unwrap();
        let (trained, _) = train(&model, &data, &cfg).unwrap();
        let path = dir.path().join(format!("run{run}.tnet"));
        save_model(&trained, &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1], "same-seed runs diverged");
}

#[test]
fn a10_saved_models_reload_bit_exact_and_reject_corruption() {
    let spec = parse_spec(study_spec_text()).unwrap();
    let data = synth_dataset(4, 3, 1, 16, 16, 96, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        lr: 0.05,
        batch: 16,
        seed: 4,
        ..TrainConfig::default()
    };
    let model = build_tentaclenet(&spec, 2, 4).unwrap();
    let (trained, _) = train(&model, &data, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tnet");
    save_model(&trained, &path).unwrap();
    let reloaded = load_model(&path).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for case in 0..100 {
        let x = Tensor::from_vec(
            &[1, 16, 16],
            (0..256).map(|_| rng.gen_range(-2.0..2.0f32)).collect(),
        )
        .unwrap();
        let before = trained.forward(&x).unwrap();
        let after = reloaded.forward(&x).unwrap();
        let before_bits: Vec<u32> = before.iter().map(|v| v.to_bits()).collect();
        let after_bits: Vec<u32> = after.iter().map(|v| v.to_bits()).collect();
        assert_eq!(before_bits, after_bits, "case {case}: logits changed across reload");
    }

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = dir.path().join("corrupt.tnet");
    std::fs::write(&bad, &bytes).unwrap();
    let err = load_model(&bad).unwrap_err();
    assert!(
        err.to_string().contains("checksum"),
        "corruption not caught by the checksum: {err}"
    );
}

#[test]
fn a11_boosting_alphas_match_references_and_weights_renormalize() {
    // ln((1-err)/err) + ln(classes-1) at preset points.
    let cases: [(f64, usize, f64); 5] = [
        (0.3, 10, 3.0445224377234235),
        (0.25, 4, 2.1972245773362196),
        (0.6, 10, 1.7917594692280554),
        (0.1, 3, 2.890371757896165),
        (0.5, 2, 0.0),
    ];
    for (err, classes, want) in cases {
        let got = samme_alpha(err, classes);
        assert!(
            (got - want).abs() <= 1e-12,
            "alpha(err={err}, classes={classes}) = {got}, want {want}"
        );
    }
    // Zero error hits the capped branch.
    assert!((samme_alpha(0.0, 10) - 27.631021115928547).abs() <= 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let n = 400;
    let mut weights: Vec<f64> = vec![1.0 / n as f64; n];
    for round in 0..50 {
        let miss: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.3).collect();
        let alpha = rng.gen_range(0.05..3.0);
        samme_reweight(&mut weights, &miss, alpha).unwrap();
        let sum: f64 = weights.iter().sum();
        assert!(
            (sum - 1.0).abs() <= 1e-9,
            "round {round}: weights sum to {sum}"
        );
    }
}
