//! The five experiment drivers behind the CLI verbs.
//!
//! Every command is deterministic given its config: datasets, builds, and
//! training all derive from explicit seeds, and sweep results are written in
//! sweep order.

use std::fs;

use crate::cli::config::{DatasetSpec, ExperimentConfig};
use crate::data::{load_cifar10, load_grayscale_csv, synth_dataset_with, Dataset, Split};
use crate::ensemble::{
    bagging_predict, bagging_train, boost_predict, boost_train, compare_csv, compare_report,
    CompareCandidate,
};
use crate::error::{Error, Result};
use crate::model::{
    build_fp32_baseline, build_tentaclenet, footprint, fp32_footprint, load_model, parse_spec,
    save_model, FootprintReport, NetworkSpec, TentacleNetModel,
};
use crate::rng::{stream, stream_rng};
use crate::train::{evaluate, evaluate_fp32, train, train_fp32};

fn load_spec(cfg: &ExperimentConfig) -> Result<NetworkSpec> {
    let path = cfg
        .spec_path
        .as_ref()
        .ok_or_else(|| Error::Config("no spec file given (spec=PATH)".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read spec '{}': {e}", path.display())))?;
    parse_spec(&text)
}

fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given (dataset=...)".into()))?
    {
        DatasetSpec::Cifar10(dir) => load_cifar10(dir),
        DatasetSpec::Csv(path) => load_grayscale_csv(path, cfg.csv_height, cfg.csv_width),
        DatasetSpec::Synth => {
            let s = &cfg.synth;
            synth_dataset_with(
                s.seed, s.classes, s.channels, s.height, s.width, s.n_train, s.n_test, s.sigma,
                s.amplitude,
            )
        }
    }
}

fn benchmark_label(cfg: &ExperimentConfig) -> &'static str {
    match cfg.dataset {
        Some(DatasetSpec::Cifar10(_)) => "cifar10",
        Some(DatasetSpec::Csv(_)) => "csv",
        Some(DatasetSpec::Synth) | None => "synth",
    }
}

/// Samples a trained model is judged on: the test split when the dataset has
/// one, otherwise everything.
fn eval_pool(data: &Dataset) -> Result<Dataset> {
    let test = data.indices(Split::Test);
    if test.is_empty() {
        data.subset(&(0..data.len()).collect::<Vec<_>>())
    } else {
        data.subset(&test)
    }
}

fn train_pool(data: &Dataset) -> Result<Dataset> {
    data.subset(&data.indices(Split::Train))
}

fn ensure_out(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    Ok(())
}

/// One trained tentacle network and its test accuracy.
fn train_one(
    spec: &NetworkSpec,
    data: &Dataset,
    n: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<(TentacleNetModel, f64)> {
    let mut model = build_tentaclenet(spec, n, seed)?;
    model.norm = data.norm.clone();
    let (trained, _) = train(&model, data, &cfg.train_cfg(seed))?;
    let report = evaluate(&trained, &eval_pool(data)?)?;
    Ok((trained, report.accuracy_pct))
}

/// The full-precision accuracy deltas are measured against: a configured
/// number, or the trained baseline when --train-fp32 is set.
fn fp32_reference(cfg: &ExperimentConfig, spec: &NetworkSpec, data: &Dataset) -> Result<f64> {
    if let Some(acc) = cfg.fp32_acc {
        return Ok(acc);
    }
    if !cfg.train_fp32 {
        return Err(Error::Config(
            "no fp32 reference: set fp32_acc=... or pass --train-fp32".into(),
        ));
    }
    let seeds = cfg.seed_list();
    let mut total = 0.0;
    for &seed in &seeds {
        let mut model = build_fp32_baseline(spec, seed)?;
        model.norm = data.norm.clone();
        let (trained, _) = train_fp32(&model, data, &cfg.train_cfg(seed))?;
        total += evaluate_fp32(&trained, &eval_pool(data)?)?.accuracy_pct;
    }
    Ok(total / seeds.len() as f64)
}

/// Train one network and write the model file plus its history CSV.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let spec = load_spec(cfg)?;
    let data = load_data(cfg)?;
    ensure_out(cfg)?;
    let mut model = build_tentaclenet(&spec, cfg.n, cfg.seed)?;
    model.norm = data.norm.clone();
    let (trained, history) = train(&model, &data, &cfg.train_cfg(cfg.seed))?;
    let model_path = cfg.out.join("model.tnet");
    save_model(&trained, &model_path)?;
    fs::write(cfg.out.join("history.csv"), history.to_csv())?;
    let report = evaluate(&trained, &eval_pool(&data)?)?;
    println!(
        "trained n={} for {} epochs: accuracy {:.4}%, mean loss {:.6}",
        cfg.n,
        history.epochs.len(),
        report.accuracy_pct,
        report.mean_loss
    );
    println!("model: {}", model_path.display());
    Ok(())
}

/// Evaluate a saved model and write a key:value report.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let path = cfg
        .model_path
        .as_ref()
        .ok_or_else(|| Error::Config("no model file given (model=PATH)".into()))?;
    let model = load_model(path)?;
    let data = load_data(cfg)?;
    let pool = eval_pool(&data)?;
    let report = evaluate(&model, &pool)?;
    ensure_out(cfg)?;
    let mut text = format!(
        "accuracy_pct: {:.4}\nmean_loss: {:.6}\nsamples: {}\n",
        report.accuracy_pct,
        report.mean_loss,
        pool.len()
    );
    for (c, acc) in report.per_class.iter().enumerate() {
        text.push_str(&format!("class_{c}_acc_pct: {acc:.4}\n"));
    }
    fs::write(cfg.out.join("eval.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn print_footprint(title: &str, r: &FootprintReport) {
    println!("== {title} ==");
    println!("shared_conv_bytes: {}", r.shared_conv_bytes);
    println!("binary_weight_bytes: {}", r.binary_weight_bytes);
    println!("scale_threshold_bytes: {}", r.scale_threshold_bytes);
    println!("batchnorm_bytes: {}", r.batchnorm_bytes);
    println!("fc_bytes: {}", r.fc_bytes);
    println!("total_bytes: {} ({:.1} kB)", r.total_bytes, r.total_kb());
    println!("per_tentacle_bytes: {}", r.per_tentacle_bytes);
    for layer in &r.per_layer {
        println!("  {}: {} bytes", layer.name, layer.bytes);
    }
}

/// Print the byte-exact footprint breakdown, either of a saved model or of
/// fresh builds across the tentacle sweep.
pub fn cmd_footprint(cfg: &ExperimentConfig) -> Result<()> {
    if let Some(path) = &cfg.model_path {
        let model = load_model(path)?;
        print_footprint(&format!("model {} (n={})", path.display(), model.n), &footprint(&model));
        return Ok(());
    }
    let spec = load_spec(cfg)?;
    for &n in &cfg.tentacles {
        let model = build_tentaclenet(&spec, n, cfg.seed)?;
        print_footprint(&format!("n={n}"), &footprint(&model));
    }
    let baseline = build_fp32_baseline(&spec, cfg.seed)?;
    print_footprint("fp32 baseline", &fp32_footprint(&baseline));
    Ok(())
}

/// Sweep tentacle counts, training each point at every seed, and write the
/// accuracy/size curve.
pub fn cmd_curve(cfg: &ExperimentConfig) -> Result<()> {
    let spec = load_spec(cfg)?;
    let data = load_data(cfg)?;
    ensure_out(cfg)?;
    let fp32 = fp32_reference(cfg, &spec, &data)?;
    let seeds = cfg.seed_list();
    let mut csv = String::from("n,acc,delta_vs_fp32,size_kb\n");
    for &n in &cfg.tentacles {
        let mut total = 0.0;
        for &seed in &seeds {
            let (_, acc) = train_one(&spec, &data, n, seed, cfg)?;
            total += acc;
        }
        let acc = total / seeds.len() as f64;
        let size_kb = footprint(&build_tentaclenet(&spec, n, seeds[0])?).total_kb();
        let row = format!("{n},{acc:.4},{:.4},{size_kb:.1}", acc - fp32);
        println!("{row}");
        csv.push_str(&row);
        csv.push('\n');
    }
    fs::write(cfg.out.join("curve.csv"), csv)?;
    Ok(())
}

/// Train the template and both ensemble baselines at matched member count
/// and write the comparison table.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<()> {
    let spec = load_spec(cfg)?;
    let data = load_data(cfg)?;
    ensure_out(cfg)?;
    let fp32 = fp32_reference(cfg, &spec, &data)?;
    let m = cfg.members;
    let train_set = train_pool(&data)?;
    let test_set = eval_pool(&data)?;

    let (tentacle_model, tentacle_acc) = train_one(&spec, &data, m, cfg.seed, cfg)?;
    let tentacle_bytes = footprint(&tentacle_model).total_bytes;
    // Ensemble members are single-tentacle networks; their footprint is m
    // independent copies.
    let member_bytes = footprint(&build_tentaclenet(&spec, 1, cfg.seed)?).total_bytes;

    let mut bag_rng = stream_rng(cfg.seed, stream::BAGGING);
    let bag = bagging_train(&spec, &train_set, m, &cfg.train_cfg(cfg.seed), &mut bag_rng)?;
    let mut bag_correct = 0usize;
    for (x, &label) in test_set.samples.iter().zip(&test_set.labels) {
        if bagging_predict(&bag, x)? == label {
            bag_correct += 1;
        }
    }
    let bag_acc = 100.0 * bag_correct as f64 / test_set.len() as f64;

    let boosted = boost_train(&spec, &train_set, m, &cfg.train_cfg(cfg.seed))?;
    let mut boost_correct = 0usize;
    for (x, &label) in test_set.samples.iter().zip(&test_set.labels) {
        if boost_predict(&boosted, x)? == label {
            boost_correct += 1;
        }
    }
    let boost_acc = 100.0 * boost_correct as f64 / test_set.len() as f64;

    let rows = compare_report(
        fp32,
        &[
            CompareCandidate {
                name: "tentaclenet".into(),
                members: m,
                acc_pct: tentacle_acc,
                footprint_bytes: tentacle_bytes,
            },
            CompareCandidate {
                name: "bagging".into(),
                members: m,
                acc_pct: bag_acc,
                footprint_bytes: member_bytes * m as u64,
            },
            CompareCandidate {
                name: "boosting".into(),
                members: boosted.members.len(),
                acc_pct: boost_acc,
                footprint_bytes: member_bytes * boosted.members.len() as u64,
            },
        ],
    );
    let csv = compare_csv(benchmark_label(cfg), &rows);
    print!("{csv}");
    fs::write(cfg.out.join("compare.csv"), csv)?;
    Ok(())
}
