//! Straight-through training with a plateau learning-rate schedule.
//!
//! Binary layers train on full-precision master weights; each forward
//! binarizes them, each backward passes gradients straight through wherever
//! the master sits inside [-1, 1] and clips the masters back into that box
//! after every optimizer step. Normalization layers collect running
//! statistics that are folded into thresholds when training finalizes.

mod graph;
mod ops;

use rand::seq::SliceRandom;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::layers::argmax;
use crate::model::{Fp32Model, TentacleNetModel};
use crate::rng::{stream, stream_rng};
use crate::tensor::Tensor;

use graph::{Fp32Trainer, Trainer};

pub use graph::Graph;
pub use graph::Trainer as ModelTrainer;

/// Hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Upper bound on epochs; training always runs exactly this many.
    pub epochs: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// Multiplier applied to the learning rate when validation plateaus.
    pub lr_factor: f64,
    /// Non-improving epochs tolerated before the rate drops.
    pub patience: usize,
    /// Absolute improvement in validation loss that resets the plateau count.
    pub plateau_tol: f64,
    /// Mini-batch size.
    pub batch: usize,
    /// Seed for the shuffle and validation-split streams.
    pub seed: u64,
    /// Fraction of the train split held out for validation when the dataset
    /// has no validation split of its own.
    pub val_split: f64,
    /// Smallest magnitude a normalization scale may reach.
    pub gamma_clamp: f32,
    /// Momentum coefficient for SGD.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.01,
            lr_factor: 0.1,
            patience: 15,
            plateau_tol: 1e-4,
            batch: 32,
            seed: 0,
            val_split: 0.1,
            gamma_clamp: 1e-8,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!(
                "lr_factor must lie in (0, 1), got {}",
                self.lr_factor
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.plateau_tol.is_finite() && self.plateau_tol >= 0.0) {
            return Err(Error::Config(format!(
                "plateau_tol must be non-negative, got {}",
                self.plateau_tol
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_split) {
            return Err(Error::Config(format!(
                "val_split must lie in [0, 1), got {}",
                self.val_split
            )));
        }
        if !(self.gamma_clamp > 0.0) {
            return Err(Error::Config("gamma_clamp must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Reduce-on-plateau schedule: the rate drops by a fixed factor after
/// `patience` consecutive epochs without the validation loss improving the
/// best seen by more than `tol`.
#[derive(Debug, Clone)]
pub struct LRScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    tol: f64,
    best: f64,
    counter: usize,
}

impl LRScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, tol: f64) -> Result<Self> {
        if !(initial_lr.is_finite() && initial_lr > 0.0) {
            return Err(Error::Config(format!(
                "initial lr must be positive, got {initial_lr}"
            )));
        }
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::Config(format!(
                "factor must lie in (0, 1), got {factor}"
            )));
        }
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(Error::Config(format!(
                "tol must be non-negative, got {tol}"
            )));
        }
        Ok(Self {
            lr: initial_lr,
            factor,
            patience,
            tol,
            best: f64::INFINITY,
            counter: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Epochs since the last improvement.
    pub fn stall(&self) -> usize {
        self.counter
    }

    /// Record one epoch's validation loss and drop the rate if the plateau
    /// just reached `patience` epochs.
    pub fn step(&mut self, val_loss: f64) -> Result<()> {
        if val_loss.is_nan() {
            return Err(Error::NonFinite("validation loss is NaN".into()));
        }
        if val_loss < self.best - self.tol {
            self.best = val_loss;
            self.counter = 0;
            return Ok(());
        }
        self.counter += 1;
        if self.counter == self.patience {
            self.lr *= self.factor;
            self.counter = 0;
        }
        Ok(())
    }
}

/// Single-sample cross-entropy with a numerically stable log-sum-exp.
pub fn cross_entropy_loss(logits: &[f32], label: usize) -> Result<f64> {
    let (loss, _) = ops::batch_ce(logits, 1, logits.len(), &[label])?;
    Ok(loss)
}

/// Straight-through gradient: upstream passes where the pre-binarization
/// value sits in [-1, 1], and is zeroed outside.
pub fn ste_backward(upstream: &[f32], pre: &[f32]) -> Result<Vec<f32>> {
    if upstream.len() != pre.len() {
        return Err(Error::Shape(format!(
            "upstream has {} values, pre-activation has {}",
            upstream.len(),
            pre.len()
        )));
    }
    Ok(upstream
        .iter()
        .zip(pre)
        .map(|(&u, &p)| if p.abs() <= 1.0 { u } else { 0.0 })
        .collect())
}

/// One epoch's summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate in effect during the epoch (scheduler steps afterward).
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation accuracy in percent.
    pub val_acc: f64,
}

/// Per-epoch records for a full run, one per epoch actually executed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_loss,val_acc\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.4}\n",
                r.epoch, r.lr, r.train_loss, r.val_loss, r.val_acc
            ));
        }
        out
    }
}

/// Accuracy and loss over a sample set, with a per-class breakdown.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Percent of samples whose top logit matches the label.
    pub accuracy_pct: f64,
    /// Mean cross-entropy over all samples.
    pub mean_loss: f64,
    /// Per-class accuracy in percent; classes with no samples report 0.
    pub per_class: Vec<f64>,
    /// Samples seen per class.
    pub class_counts: Vec<usize>,
}

/// Train a tentacle network. Returns the finalized model and one history
/// row per epoch run.
pub fn train(
    model: &TentacleNetModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TentacleNetModel, TrainHistory)> {
    check_data(model.input, model.classes, data)?;
    let mut trainer = Trainer::from_model(model)?;
    let history = run_epochs(&mut trainer, data, cfg)?;
    Ok((trainer.finalize()?, history))
}

/// Train the full-precision baseline with the same driver and schedule.
pub fn train_fp32(
    model: &Fp32Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Fp32Model, TrainHistory)> {
    check_data(model.input, model.classes, data)?;
    let mut trainer = Fp32Trainer::from_model(model)?;
    let history = run_epochs(&mut trainer, data, cfg)?;
    Ok((trainer.finalize()?, history))
}

fn check_data(input: [usize; 3], classes: usize, data: &Dataset) -> Result<()> {
    data.validate()?;
    if data.shape != input {
        return Err(Error::Shape(format!(
            "dataset samples are {:?}, model expects {:?}",
            data.shape, input
        )));
    }
    if data.classes > classes {
        return Err(Error::Invalid(format!(
            "dataset has {} classes, model only outputs {}",
            data.classes, classes
        )));
    }
    Ok(())
}

/// Epoch driver shared by both trainers: seeded shuffling, mini-batch steps,
/// validation metrics, plateau scheduling, divergence checks.
fn run_epochs<G: Graph>(g: &mut G, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let train_pool = data.indices(Split::Train);
    if train_pool.is_empty() {
        return Err(Error::Invalid("dataset has no training samples".into()));
    }

    // Held-out validation: the dataset's own split when present, otherwise
    // the tail of a seeded shuffle of the train indices.
    let (train_idx, val_idx) = if data.has_val() {
        (train_pool, data.indices(Split::Val))
    } else {
        let mut pool = train_pool;
        let mut rng = stream_rng(cfg.seed, stream::VAL_SPLIT);
        pool.shuffle(&mut rng);
        let val_len = (pool.len() as f64 * cfg.val_split) as usize;
        let val = pool.split_off(pool.len() - val_len);
        (pool, val)
    };
    if train_idx.is_empty() {
        return Err(Error::Invalid(
            "validation hold-out consumed every training sample".into(),
        ));
    }

    let mut sched = LRScheduler::new(cfg.lr, cfg.lr_factor, cfg.patience, cfg.plateau_tol)?;
    let mut shuffle_rng = stream_rng(cfg.seed, stream::TRAIN_SHUFFLE);
    let mut history = TrainHistory::default();
    let mut order = train_idx.clone();

    for epoch in 0..cfg.epochs {
        let lr_epoch = sched.lr();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let xs: Vec<&Tensor> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let loss = g.train_batch(
                &xs,
                &labels,
                lr_epoch,
                cfg.momentum as f32,
                cfg.gamma_clamp,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        // Plateau signal: validation loss when a hold-out exists, otherwise
        // inference-mode metrics over the train split itself.
        let metric_idx = if val_idx.is_empty() { &train_idx } else { &val_idx };
        let (val_loss, val_acc) = eval_metrics(g, data, metric_idx, cfg.batch)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            lr: lr_epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        sched.step(val_loss)?;
    }
    Ok(history)
}

fn eval_metrics<G: Graph>(
    g: &G,
    data: &Dataset,
    indices: &[usize],
    batch: usize,
) -> Result<(f64, f64)> {
    let classes = g.class_count();
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for chunk in indices.chunks(batch) {
        let xs: Vec<&Tensor> = chunk.iter().map(|&i| &data.samples[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let logits = g.eval_logits(&xs)?;
        let (loss, _) = ops::batch_ce(&logits, chunk.len(), classes, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        for (bi, &label) in labels.iter().enumerate() {
            if argmax(&logits[bi * classes..(bi + 1) * classes]) == label {
                correct += 1;
            }
        }
    }
    let n = indices.len() as f64;
    Ok((loss_sum / n, 100.0 * correct as f64 / n))
}

/// Evaluate a model over every sample in the dataset. Callers narrow to a
/// split by taking a subset first.
pub fn evaluate(model: &TentacleNetModel, data: &Dataset) -> Result<EvalReport> {
    evaluate_with(data, model.classes, |x| model.forward(x))
}

/// Evaluate the full-precision baseline the same way.
pub fn evaluate_fp32(model: &Fp32Model, data: &Dataset) -> Result<EvalReport> {
    evaluate_with(data, model.classes, |x| model.forward(x))
}

fn evaluate_with(
    data: &Dataset,
    classes: usize,
    forward: impl Fn(&Tensor) -> Result<Vec<f32>>,
) -> Result<EvalReport> {
    data.validate()?;
    if data.samples.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    if data.classes > classes {
        return Err(Error::Invalid(format!(
            "dataset has {} classes, model only outputs {}",
            data.classes, classes
        )));
    }
    let mut loss_sum = 0.0f64;
    let mut correct = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (x, &label) in data.samples.iter().zip(&data.labels) {
        let logits = forward(x)?;
        loss_sum += cross_entropy_loss(&logits, label)?;
        counts[label] += 1;
        if argmax(&logits) == label {
            correct[label] += 1;
        }
    }
    let total = data.samples.len();
    let total_correct: usize = correct.iter().sum();
    let per_class = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 })
        .collect();
    Ok(EvalReport {
        accuracy_pct: 100.0 * total_correct as f64 / total as f64,
        mean_loss: loss_sum / total as f64,
        per_class,
        class_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset_with;
    use crate::model::serial::model_to_bytes;
    use crate::model::{build_tentaclenet, parse_spec, NetworkSpec};

    fn toy_spec() -> NetworkSpec {
        parse_spec("input 1x8x8\nconv 4 3x3 pad 1\nconv 4 3x3 pad 1\nhead dense\nclasses 2\n")
            .unwrap()
    }

    fn toy_data(seed: u64) -> crate::data::Dataset {
        // Widely separated class templates with light noise: linearly
        // separable for practical purposes.
        synth_dataset_with(seed, 2, 1, 8, 8, 60, 20, 0.05, 0.5).unwrap()
    }

    #[test]
    fn scheduler_drops_after_patience_without_improvement() {
        let mut s = LRScheduler::new(0.1, 0.1, 15, 1e-4).unwrap();
        s.step(1.0).unwrap();
        for _ in 0..14 {
            s.step(1.0).unwrap();
            assert!((s.lr() - 0.1).abs() < 1e-12);
        }
        s.step(1.0).unwrap();
        assert!((s.lr() - 0.01).abs() < 1e-12);
        assert_eq!(s.stall(), 0);
    }

    #[test]
    fn scheduler_improvement_resets_the_count() {
        let mut s = LRScheduler::new(0.1, 0.1, 15, 1e-4).unwrap();
        s.step(1.0).unwrap();
        for _ in 0..14 {
            s.step(1.0).unwrap();
        }
        assert_eq!(s.stall(), 14);
        s.step(0.5).unwrap();
        assert_eq!(s.stall(), 0);
        assert!((s.lr() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn scheduler_two_plateaus_compound() {
        let mut s = LRScheduler::new(0.1, 0.1, 3, 1e-4).unwrap();
        s.step(1.0).unwrap();
        for _ in 0..3 {
            s.step(1.0).unwrap();
        }
        assert!((s.lr() - 0.01).abs() < 1e-12);
        for _ in 0..3 {
            s.step(1.0).unwrap();
        }
        assert!((s.lr() - 0.001).abs() < 1e-12);
    }

    #[test]
    fn scheduler_sub_tolerance_improvement_counts_as_stall() {
        let mut s = LRScheduler::new(0.1, 0.5, 2, 1e-2).unwrap();
        s.step(1.0).unwrap();
        s.step(0.995).unwrap();
        assert_eq!(s.stall(), 1);
        s.step(0.994).unwrap();
        assert!((s.lr() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn scheduler_rejects_nan() {
        let mut s = LRScheduler::new(0.1, 0.1, 3, 0.0).unwrap();
        assert!(matches!(s.step(f64::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn ste_backward_masks_saturated_entries() {
        let up = vec![1.0f32, 2.0, 3.0, 4.0];
        let pre = vec![0.5f32, -1.0, 1.5, -2.0];
        let got = ste_backward(&up, &pre).unwrap();
        assert_eq!(got, vec![1.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            ste_backward(&up, &pre[..3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn cross_entropy_reference_values() {
        let uniform = vec![0.3f32; 4];
        assert!((cross_entropy_loss(&uniform, 2).unwrap() - (4.0f64).ln()).abs() < 1e-6);
        let mut hot = vec![0.0f32; 4];
        hot[1] = 100.0;
        assert!(cross_entropy_loss(&hot, 1).unwrap() < 1e-6);
        assert!(cross_entropy_loss(&hot, 0).unwrap() > 50.0);
    }

    #[test]
    fn history_csv_format() {
        let mut h = TrainHistory::default();
        h.epochs.push(EpochRecord {
            epoch: 0,
            lr: 0.01,
            train_loss: 0.69,
            val_loss: 0.7,
            val_acc: 51.25,
        });
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,lr,train_loss,val_loss,val_acc"));
        assert_eq!(lines.next(), Some("0,0.01,0.690000,0.700000,51.2500"));
    }

    #[test]
    fn zero_epoch_train_only_finalizes() {
        let model = build_tentaclenet(&toy_spec(), 2, 11).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, history) = train(&model, &toy_data(1), &cfg).unwrap();
        assert!(history.epochs.is_empty());
        assert_eq!(
            model_to_bytes(&model).unwrap(),
            model_to_bytes(&out).unwrap()
        );
    }

    #[test]
    fn training_fits_a_separable_toy_task() {
        let data = toy_data(7);
        let model = build_tentaclenet(&toy_spec(), 1, 7).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            lr: 0.05,
            batch: 16,
            seed: 7,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&model, &data, &cfg).unwrap();
        assert_eq!(history.epochs.len(), 30);
        let train_set = data.subset(&data.indices(Split::Train)).unwrap();
        let report = evaluate(&trained, &train_set).unwrap();
        assert!(
            report.accuracy_pct >= 95.0,
            "train accuracy {:.2}%",
            report.accuracy_pct
        );
    }

    #[test]
    fn training_halves_the_loss_on_the_toy_task() {
        let data = toy_data(3);
        let model = build_tentaclenet(&toy_spec(), 1, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            lr: 0.05,
            batch: 16,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, history) = train(&model, &data, &cfg).unwrap();
        let first = history.epochs.first().unwrap().train_loss;
        let last = history.epochs.last().unwrap().train_loss;
        assert!(
            last <= 0.5 * first,
            "loss went {first:.4} -> {last:.4}, expected at least a halving"
        );
    }

    #[test]
    fn same_seed_runs_are_identical() {
        let data = toy_data(5);
        let model = build_tentaclenet(&toy_spec(), 2, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.05,
            batch: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let (m1, h1) = train(&model, &data, &cfg).unwrap();
        let (m2, h2) = train(&model, &data, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(model_to_bytes(&m1).unwrap(), model_to_bytes(&m2).unwrap());
    }

    #[test]
    fn lr_never_increases_and_drops_by_factor() {
        let data = toy_data(9);
        let model = build_tentaclenet(&toy_spec(), 1, 9).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            lr: 0.05,
            patience: 3,
            batch: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let (_, history) = train(&model, &data, &cfg).unwrap();
        for pair in history.epochs.windows(2) {
            let (a, b) = (pair[0].lr, pair[1].lr);
            assert!(b <= a + 1e-15, "lr rose from {a} to {b}");
            if b < a {
                assert!((b - a * 0.1).abs() < 1e-12, "drop was not a factor of 10");
            }
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = toy_data(1).subset(&[]).unwrap();
        let model = build_tentaclenet(&toy_spec(), 1, 1).unwrap();
        assert!(train(&model, &data, &TrainConfig::default()).is_err());
        assert!(evaluate(&model, &data).is_err());
    }

    #[test]
    fn evaluate_reports_constant_predictor_on_balanced_set() {
        // Zeroed head weights force logits to all zeros, so argmax always
        // picks class 0.
        let spec = parse_spec(
            "input 1x8x8\nconv 4 3x3 pad 1\nconv 4 3x3 pad 1\nhead dense\nclasses 10\n",
        )
        .unwrap();
        let mut model = build_tentaclenet(&spec, 1, 2).unwrap();
        model.fc.weights.iter_mut().for_each(|w| *w = 0.0);
        let data = synth_dataset_with(2, 10, 1, 8, 8, 100, 0, 0.5, 0.1).unwrap();
        let report = evaluate(&model, &data).unwrap();
        assert!((report.accuracy_pct - 10.0).abs() < 1e-9);
        assert!((report.mean_loss - (10.0f64).ln()).abs() < 1e-6);
        assert!((report.per_class[0] - 100.0).abs() < 1e-9);
        assert!(report.per_class[1..].iter().all(|&a| a == 0.0));
        assert_eq!(report.class_counts.iter().sum::<usize>(), 100);
    }

    #[test]
    fn evaluate_matches_a_manual_tally() {
        let data = synth_dataset_with(4, 3, 1, 8, 8, 60, 0, 0.5, 0.1).unwrap();
        let spec = parse_spec(
            "input 1x8x8\nconv 4 3x3 pad 1\nconv 4 3x3 pad 1\nhead dense\nclasses 3\n",
        )
        .unwrap();
        let model = build_tentaclenet(&spec, 2, 4).unwrap();
        let report = evaluate(&model, &data).unwrap();
        let mut correct = 0usize;
        for (x, &label) in data.samples.iter().zip(&data.labels) {
            if model.predict(x).unwrap() == label {
                correct += 1;
            }
        }
        let expect = 100.0 * correct as f64 / data.samples.len() as f64;
        assert!((report.accuracy_pct - expect).abs() < 1e-9);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { lr_factor: 1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { batch: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { val_split: 1.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok }.validate().is_err());
    }

    #[test]
    fn fp32_baseline_trains_on_the_toy_task() {
        let data = toy_data(6);
        let model = crate::model::build_fp32_baseline(&toy_spec(), 6).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            lr: 0.05,
            batch: 16,
            seed: 6,
            ..TrainConfig::default()
        };
        let (trained, history) = train_fp32(&model, &data, &cfg).unwrap();
        assert_eq!(history.epochs.len(), 15);
        let train_set = data.subset(&data.indices(Split::Train)).unwrap();
        let report = evaluate_fp32(&trained, &train_set).unwrap();
        assert!(
            report.accuracy_pct >= 90.0,
            "fp32 train accuracy {:.2}%",
            report.accuracy_pct
        );
    }
}
