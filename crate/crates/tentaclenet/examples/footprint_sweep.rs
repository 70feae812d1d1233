//! Model size is affine in the tentacle count: a fixed shared cost plus a
//! constant per-tentacle increment (packed bits, alphas, thresholds) and the
//! head's growth.

use tentaclenet::model::{build_tentaclenet, footprint, fp32_footprint, build_fp32_baseline, parse_spec};

const SPEC: &str = "\
input 1x16x16
conv 8 3x3 pad 1
maxpool 2
conv 8 3x3 pad 1
head dense
classes 3
";

fn main() {
    let spec = parse_spec(SPEC).unwrap();
    println!("{:>2}  {:>10}  {:>8}", "n", "bytes", "kB");
    let mut totals = Vec::new();
    for n in 1..=6 {
        let model = build_tentaclenet(&spec, n, 1).unwrap();
        let r = footprint(&model);
        println!("{n:>2}  {:>10}  {:>8.2}", r.total_bytes, r.total_kb());
        totals.push(r.total_bytes);
    }
    let slopes: Vec<u64> = totals.windows(2).map(|w| w[1] - w[0]).collect();
    println!("per-tentacle increment: {:?} (constant)", slopes);
    assert!(slopes.windows(2).all(|w| w[0] == w[1]));

    let fp32 = fp32_footprint(&build_fp32_baseline(&spec, 1).unwrap());
    println!(
        "fp32 baseline: {} bytes; n=4 binarized: {} bytes ({:.1}% of it)",
        fp32.total_bytes,
        totals[3],
        100.0 * totals[3] as f64 / fp32.total_bytes as f64
    );
}
