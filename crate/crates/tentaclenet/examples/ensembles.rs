//! Bagging and boosting over single-tentacle members on the synthetic task,
//! next to one multi-tentacle network of the same member count.

use tentaclenet::data::{synth_dataset_with, Dataset, Split};
use tentaclenet::ensemble::{
    bagging_predict, bagging_train, boost_predict, boost_train, Fusion,
};
use tentaclenet::model::{build_tentaclenet, parse_spec};
use tentaclenet::rng::{stream, stream_rng};
use tentaclenet::tensor::Tensor;
use tentaclenet::train::{evaluate, train, TrainConfig};

fn accuracy(data: &Dataset, mut predict: impl FnMut(&Tensor) -> usize) -> f64 {
    let hits = data
        .samples
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| predict(x) == y)
        .count();
    100.0 * hits as f64 / data.len() as f64
}

fn main() {
    let spec = parse_spec(
        "input 1x8x8\nconv 4 3x3 pad 1\nconv 4 3x3 pad 1\nhead dense\nclasses 3\n",
    )
    .unwrap();
    let data = synth_dataset_with(2, 3, 1, 8, 8, 240, 90, 0.4, 0.2).unwrap();
    let train_set = data.subset(&data.indices(Split::Train)).unwrap();
    let test = data.subset(&data.indices(Split::Test)).unwrap();
    let cfg = TrainConfig {
        epochs: 12,
        lr: 0.05,
        batch: 16,
        seed: 2,
        ..TrainConfig::default()
    };
    const MEMBERS: usize = 3;

    let mut single = build_tentaclenet(&spec, MEMBERS, 2).unwrap();
    single.norm = data.norm.clone();
    let (tentacled, _) = train(&single, &data, &cfg).unwrap();
    let t_acc = evaluate(&tentacled, &test).unwrap().accuracy_pct;

    let mut rng = stream_rng(2, stream::BAGGING);
    let bag = bagging_train(&spec, &train_set, MEMBERS, &cfg, &mut rng).unwrap();
    let avg_acc = accuracy(&test, |x| bagging_predict(&bag, x).unwrap());
    let voting = bag.clone().with_fusion(Fusion::Vote);
    let vote_acc = accuracy(&test, |x| bagging_predict(&voting, x).unwrap());

    let boosted = boost_train(&spec, &train_set, MEMBERS, &cfg).unwrap();
    let boost_acc = accuracy(&test, |x| boost_predict(&boosted, x).unwrap());

    println!("{MEMBERS} members on 3-class synth:");
    println!("  tentacles (shared blocks): {t_acc:.1}%");
    println!("  bagging, averaged softmax: {avg_acc:.1}%");
    println!("  bagging, plurality vote:   {vote_acc:.1}%");
    println!(
        "  boosting, alphas {:?}: {boost_acc:.1}%",
        boosted
            .alphas
            .iter()
            .map(|a| format!("{a:.2}"))
            .collect::<Vec<_>>()
    );
}
