//! Train a two-tentacle network on the synthetic template task and watch the
//! plateau schedule work.

use tentaclenet::data::{synth_dataset_with, Split};
use tentaclenet::model::{build_tentaclenet, parse_spec};
use tentaclenet::train::{evaluate, train, TrainConfig};

fn main() {
    let spec = parse_spec(
        "input 1x8x8\nconv 4 3x3 pad 1\nconv 4 3x3 pad 1\nhead dense\nclasses 2\n",
    )
    .unwrap();
    let data = synth_dataset_with(1, 2, 1, 8, 8, 200, 60, 0.3, 0.3).unwrap();

    let mut model = build_tentaclenet(&spec, 2, 1).unwrap();
    model.norm = data.norm.clone();

    let cfg = TrainConfig {
        epochs: 25,
        lr: 0.05,
        batch: 16,
        seed: 1,
        patience: 5,
        ..TrainConfig::default()
    };
    let (trained, history) = train(&model, &data, &cfg).unwrap();

    println!("epoch    lr      train_loss  val_loss  val_acc");
    for r in history.epochs.iter().step_by(4) {
        println!(
            "{:>5}  {:<7.5}  {:>9.4}  {:>8.4}  {:>6.2}%",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_acc
        );
    }

    let test = data.subset(&data.indices(Split::Test)).unwrap();
    let report = evaluate(&trained, &test).unwrap();
    println!(
        "test: {:.2}% accuracy, mean loss {:.4}, per-class {:?}",
        report.accuracy_pct,
        report.mean_loss,
        report
            .per_class
            .iter()
            .map(|a| format!("{a:.1}%"))
            .collect::<Vec<_>>()
    );
}
