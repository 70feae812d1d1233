//! Bagging and boosting over independently trained single-tentacle
//! networks, plus the comparison table that puts them next to the
//! multi-tentacle template and the full-precision reference.
//!
//! Members are built from the same layer spec with one tentacle each, so an
//! N-member ensemble and an N-tentacle network binarize the same number of
//! filters and differ only in what they share.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::softmax;
use crate::model::{build_tentaclenet, NetworkSpec, TentacleNetModel};
use crate::rng::{stream, stream_rng};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig};

/// How a bagged ensemble fuses member outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Argmax of the mean of member softmax distributions.
    Average,
    /// Plurality over member argmaxes, ties to the lowest class index.
    Vote,
}

/// Independently trained members over a disjoint partition of the data.
#[derive(Debug, Clone)]
pub struct BaggedEnsemble {
    pub members: Vec<TentacleNetModel>,
    pub fusion: Fusion,
    /// Per-member build seeds drawn from the caller's rng.
    pub member_seeds: Vec<u64>,
    /// Indices of the training pool each member saw; disjoint, exhaustive.
    pub partitions: Vec<Vec<usize>>,
}

impl BaggedEnsemble {
    pub fn with_fusion(mut self, fusion: Fusion) -> Self {
        self.fusion = fusion;
        self
    }
}

/// Members with SAMME fusion weights, in training-round order.
#[derive(Debug, Clone)]
pub struct BoostedEnsemble {
    pub members: Vec<TentacleNetModel>,
    pub alphas: Vec<f64>,
    pub classes: usize,
}

/// Shuffle `0..len` and cut it into `n` disjoint parts whose sizes differ by
/// at most one, longer parts first.
fn partition_indices(len: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);
    let base = len / n;
    let extra = len % n;
    let mut parts = Vec::with_capacity(n);
    let mut at = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        parts.push(order[at..at + size].to_vec());
        at += size;
    }
    parts
}

/// Train `n` members, each on its own slice of a shuffled disjoint
/// partition of `data`. The rng drives the shuffle and the per-member build
/// seeds; everything downstream is deterministic from it.
pub fn bagging_train(
    spec: &NetworkSpec,
    data: &Dataset,
    n: usize,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<BaggedEnsemble> {
    if n == 0 {
        return Err(Error::Invalid("bagging needs at least one member".into()));
    }
    if n > data.len() {
        return Err(Error::Invalid(format!(
            "cannot split {} samples into {n} subsets",
            data.len()
        )));
    }
    let partitions = partition_indices(data.len(), n, rng);
    let member_seeds: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
    let mut members = Vec::with_capacity(n);
    for (part, &seed) in partitions.iter().zip(&member_seeds) {
        let subset = data.subset(part)?;
        let mut model = build_tentaclenet(spec, 1, seed)?;
        model.norm = data.norm.clone();
        let member_cfg = TrainConfig { seed, ..cfg.clone() };
        let (trained, _) = train(&model, &subset, &member_cfg)?;
        members.push(trained);
    }
    Ok(BaggedEnsemble {
        members,
        fusion: Fusion::Average,
        member_seeds,
        partitions,
    })
}

/// Plurality over votes with ties to the lowest class index.
pub fn plurality_vote(votes: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &v in votes {
        counts[v] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Weighted vote: each member adds its weight to its predicted class, ties
/// to the lowest class index.
pub fn weighted_vote(preds: &[usize], weights: &[f64], classes: usize) -> usize {
    let mut score = vec![0.0f64; classes];
    for (&p, &w) in preds.iter().zip(weights) {
        score[p] += w;
    }
    let mut best = 0;
    for (c, &s) in score.iter().enumerate() {
        if s > score[best] {
            best = c;
        }
    }
    best
}

/// Fuse member predictions for one input according to the ensemble's mode.
pub fn bagging_predict(e: &BaggedEnsemble, x: &Tensor) -> Result<usize> {
    match e.fusion {
        Fusion::Average => {
            let classes = e.members[0].classes;
            let mut mean = vec![0.0f64; classes];
            for m in &e.members {
                let p = softmax(&m.forward(x)?);
                for (acc, v) in mean.iter_mut().zip(&p) {
                    *acc += *v as f64;
                }
            }
            let mut best = 0;
            for (c, &s) in mean.iter().enumerate() {
                if s > mean[best] {
                    best = c;
                }
            }
            Ok(best)
        }
        Fusion::Vote => {
            let votes = e
                .members
                .iter()
                .map(|m| m.predict(x))
                .collect::<Result<Vec<_>>>()?;
            Ok(plurality_vote(&votes, e.members[0].classes))
        }
    }
}

/// SAMME fusion weight for one round: ln((1-err)/err) + ln(C-1), with a cap
/// of ln(1e12) when the round is error-free.
pub fn samme_alpha(err: f64, classes: usize) -> f64 {
    if err <= 0.0 {
        return 1e12f64.ln();
    }
    ((1.0 - err) / err).ln() + ((classes - 1) as f64).ln()
}

/// Multiply misclassified sample weights by e^alpha and renormalize the
/// vector to sum to one.
pub fn samme_reweight(weights: &mut [f64], misclassified: &[bool], alpha: f64) -> Result<()> {
    if weights.len() != misclassified.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} outcomes",
            weights.len(),
            misclassified.len()
        )));
    }
    let scale = alpha.exp();
    for (w, &miss) in weights.iter_mut().zip(misclassified) {
        if miss {
            *w *= scale;
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::NonFinite("sample weights after reweighting".into()));
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(())
}

/// SAMME boosting: each round trains a fresh member on a weighted resample
/// of the data, then upweights what it got wrong. Rounds whose weighted
/// error reaches the random-guess bound 1 - 1/C contribute zero weight and
/// end training early.
pub fn boost_train(
    spec: &NetworkSpec,
    data: &Dataset,
    rounds: usize,
    cfg: &TrainConfig,
) -> Result<BoostedEnsemble> {
    if rounds == 0 {
        return Err(Error::Invalid("boosting needs at least one round".into()));
    }
    if data.is_empty() {
        return Err(Error::Invalid("boosting needs a non-empty dataset".into()));
    }
    let first = data.labels[0];
    if data.labels.iter().all(|&l| l == first) {
        return Err(Error::Invalid(
            "boosting needs at least two classes present in the data".into(),
        ));
    }
    let classes = data.classes;
    let len = data.len();
    let mut rng = stream_rng(cfg.seed, stream::BOOSTING);
    let mut weights = vec![1.0 / len as f64; len];
    let mut members = Vec::with_capacity(rounds);
    let mut alphas = Vec::with_capacity(rounds);

    for _ in 0..rounds {
        let member_seed: u64 = rng.gen();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::Invalid(format!("degenerate sample weights: {e}")))?;
        let resample: Vec<usize> = (0..len).map(|_| dist.sample(&mut rng)).collect();
        let subset = data.subset(&resample)?;
        let mut model = build_tentaclenet(spec, 1, member_seed)?;
        model.norm = data.norm.clone();
        let member_cfg = TrainConfig {
            seed: member_seed,
            ..cfg.clone()
        };
        let (trained, _) = train(&model, &subset, &member_cfg)?;

        // Weighted error over the original data, not the resample.
        let mut misclassified = vec![false; len];
        let mut err = 0.0f64;
        for i in 0..len {
            if trained.predict(&data.samples[i])? != data.labels[i] {
                misclassified[i] = true;
                err += weights[i];
            }
        }

        if err >= 1.0 - 1.0 / classes as f64 {
            members.push(trained);
            alphas.push(0.0);
            break;
        }
        let alpha = samme_alpha(err, classes);
        samme_reweight(&mut weights, &misclassified, alpha)?;
        members.push(trained);
        alphas.push(alpha);
    }
    Ok(BoostedEnsemble {
        members,
        alphas,
        classes,
    })
}

/// Alpha-weighted vote over member predictions.
pub fn boost_predict(e: &BoostedEnsemble, x: &Tensor) -> Result<usize> {
    let preds = e
        .members
        .iter()
        .map(|m| m.predict(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(weighted_vote(&preds, &e.alphas, e.classes))
}

/// One line of the comparison table input.
#[derive(Debug, Clone)]
pub struct CompareCandidate {
    /// Template name; names starting with "tentacle" (any case) mark the
    /// rows the savings bracket applies to.
    pub name: String,
    pub members: usize,
    /// Test accuracy in percent.
    pub acc_pct: f64,
    pub footprint_bytes: u64,
}

/// One emitted row: accuracy delta against the full-precision reference and
/// size against the smallest competing ensemble.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub name: String,
    pub delta_pct: f64,
    pub members: usize,
    pub size_kb: f64,
    /// Size reduction against the smallest non-tentacle candidate,
    /// truncated to one decimal. Zero when there is no such candidate.
    pub savings_pct: f64,
}

/// Truncate toward zero at one decimal place.
fn truncate1(x: f64) -> f64 {
    (x * 10.0).trunc() / 10.0
}

/// Build comparison rows: delta = acc - fp32_acc, savings measured against
/// the smallest footprint among non-tentacle candidates.
pub fn compare_report(fp32_acc: f64, candidates: &[CompareCandidate]) -> Vec<CompareRow> {
    let reference = candidates
        .iter()
        .filter(|c| !c.name.to_ascii_lowercase().starts_with("tentacle"))
        .map(|c| c.footprint_bytes)
        .min();
    candidates
        .iter()
        .map(|c| {
            let savings = match reference {
                Some(r) if r > 0 => truncate1(100.0 * (1.0 - c.footprint_bytes as f64 / r as f64)),
                _ => 0.0,
            };
            CompareRow {
                name: c.name.clone(),
                delta_pct: c.acc_pct - fp32_acc,
                members: c.members,
                size_kb: c.footprint_bytes as f64 / 1024.0,
                savings_pct: savings,
            }
        })
        .collect()
}

/// Comparison table as CSV, one row per candidate.
pub fn compare_csv(benchmark: &str, rows: &[CompareRow]) -> String {
    let mut out = String::from("benchmark,template,delta_pct,members,size_kb,savings_pct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.2},{},{:.1},{:.1}\n",
            benchmark, r.name, r.delta_pct, r.members, r.size_kb, r.savings_pct
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset_with;
    use crate::model::parse_spec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> NetworkSpec {
        parse_spec("input 1x8x8\nconv 4 3x3 pad 1\nconv 4 3x3 pad 1\nhead dense\nclasses 2\n")
            .unwrap()
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 0,
            seed,
            ..TrainConfig::default()
        }
    }

    fn tiny_data(n: usize) -> Dataset {
        synth_dataset_with(11, 2, 1, 8, 8, n, 0, 0.3, 0.4).unwrap()
    }

    #[test]
    fn partition_is_near_equal_disjoint_and_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parts = partition_indices(103, 4, &mut rng);
        let mut sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![25, 26, 26, 26]);
        let mut all: Vec<usize> = parts.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
    }

    #[test]
    fn bagging_rejects_more_members_than_samples() {
        let data = tiny_data(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(bagging_train(&tiny_spec(), &data, 4, &quick_cfg(0), &mut rng).is_err());
        assert!(bagging_train(&tiny_spec(), &data, 0, &quick_cfg(0), &mut rng).is_err());
    }

    #[test]
    fn single_member_bag_predicts_like_its_member() {
        let data = tiny_data(12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bag = bagging_train(&tiny_spec(), &data, 1, &quick_cfg(3), &mut rng).unwrap();
        for x in &data.samples {
            assert_eq!(
                bagging_predict(&bag, x).unwrap(),
                bag.members[0].predict(x).unwrap()
            );
        }
        let voting = bag.with_fusion(Fusion::Vote);
        for x in &data.samples {
            assert_eq!(
                bagging_predict(&voting, x).unwrap(),
                voting.members[0].predict(x).unwrap()
            );
        }
    }

    #[test]
    fn plurality_and_weighted_votes() {
        assert_eq!(plurality_vote(&[2, 2, 5], 6), 2);
        assert_eq!(plurality_vote(&[1, 2], 3), 1, "tie goes to the lowest");
        assert_eq!(weighted_vote(&[3, 1], &[1.0, 0.5], 4), 3);
        assert_eq!(weighted_vote(&[2, 1], &[0.5, 0.5], 3), 1, "tie to lowest");
    }

    #[test]
    fn average_mode_matches_manual_mean_of_probabilities() {
        let data = tiny_data(16);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bag = bagging_train(&tiny_spec(), &data, 2, &quick_cfg(4), &mut rng).unwrap();
        for x in &data.samples {
            let mut mean = [0.0f64; 2];
            for m in &bag.members {
                for (acc, p) in mean.iter_mut().zip(softmax(&m.forward(x).unwrap())) {
                    *acc += p as f64;
                }
            }
            let manual = if mean[1] > mean[0] { 1 } else { 0 };
            assert_eq!(bagging_predict(&bag, x).unwrap(), manual);
        }
    }

    #[test]
    fn samme_alpha_reference_values() {
        assert!(samme_alpha(0.5, 2).abs() < 1e-12);
        assert!((samme_alpha(0.25, 2) - 3.0f64.ln()).abs() < 1e-12);
        assert!((samme_alpha(0.5, 3) - 2.0f64.ln()).abs() < 1e-12);
        assert!((samme_alpha(0.0, 2) - 1e12f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn samme_reweight_renormalizes() {
        let mut w = vec![0.25f64; 4];
        let miss = vec![true, false, false, true];
        samme_reweight(&mut w, &miss, 3.0f64.ln()).unwrap();
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!((w[0] / w[1] - 3.0).abs() < 1e-9);
        assert!(samme_reweight(&mut w, &miss[..2], 1.0).is_err());
    }

    #[test]
    fn boosting_rejects_single_class_data() {
        let mut data = tiny_data(10);
        data.labels.iter_mut().for_each(|l| *l = 0);
        assert!(boost_train(&tiny_spec(), &data, 2, &quick_cfg(0)).is_err());
    }

    #[test]
    fn single_round_boost_predicts_like_its_member() {
        let data = tiny_data(12);
        let boosted = boost_train(&tiny_spec(), &data, 1, &quick_cfg(5)).unwrap();
        assert_eq!(boosted.members.len(), 1);
        for x in &data.samples {
            assert_eq!(
                boost_predict(&boosted, x).unwrap(),
                boosted.members[0].predict(x).unwrap()
            );
        }
    }

    #[test]
    fn boost_predict_matches_brute_force_tally() {
        let data = tiny_data(20);
        let cfg = TrainConfig {
            epochs: 2,
            lr: 0.05,
            batch: 8,
            seed: 6,
            ..TrainConfig::default()
        };
        let boosted = boost_train(&tiny_spec(), &data, 2, &cfg).unwrap();
        for x in &data.samples {
            let mut score = vec![0.0f64; boosted.classes];
            for (m, &a) in boosted.members.iter().zip(&boosted.alphas) {
                score[m.predict(x).unwrap()] += a;
            }
            let mut best = 0;
            for (c, &s) in score.iter().enumerate() {
                if s > score[best] {
                    best = c;
                }
            }
            assert_eq!(boost_predict(&boosted, x).unwrap(), best);
        }
    }

    #[test]
    fn compare_report_reproduces_reference_savings() {
        let rows = compare_report(
            90.0,
            &[
                CompareCandidate {
                    name: "tentaclenet".into(),
                    members: 4,
                    acc_pct: 90.0,
                    footprint_bytes: 645 * 1024,
                },
                CompareCandidate {
                    name: "boosting".into(),
                    members: 4,
                    acc_pct: 89.0,
                    footprint_bytes: 1445 * 1024,
                },
            ],
        );
        assert_eq!(rows[0].delta_pct, 0.0);
        assert!((rows[0].savings_pct - 55.3).abs() < 1e-9);
        assert!((rows[1].delta_pct + 1.0).abs() < 1e-9);

        let fer = compare_report(
            70.0,
            &[
                CompareCandidate {
                    name: "TentacleNet".into(),
                    members: 4,
                    acc_pct: 70.0,
                    footprint_bytes: 188 * 1024,
                },
                CompareCandidate {
                    name: "bagging".into(),
                    members: 4,
                    acc_pct: 69.0,
                    footprint_bytes: 697 * 1024,
                },
            ],
        );
        assert!((fer[0].savings_pct - 73.0).abs() < 1e-9);
    }

    #[test]
    fn compare_csv_shape() {
        let rows = compare_report(
            80.0,
            &[CompareCandidate {
                name: "bagging".into(),
                members: 2,
                acc_pct: 78.5,
                footprint_bytes: 10240,
            }],
        );
        let csv = compare_csv("synth", &rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("benchmark,template,delta_pct,members,size_kb,savings_pct")
        );
        assert_eq!(lines.next(), Some("synth,bagging,-1.50,2,10.0,0.0"));
    }
}
