//! The comparison-table arithmetic: accuracy deltas against a
//! full-precision reference and size savings against the smallest competing
//! ensemble, truncated to one decimal.

use tentaclenet::ensemble::{compare_csv, compare_report, CompareCandidate};

fn main() {
    // A 645 kB template against a 1445 kB boosted ensemble: 55.3% smaller.
    let rows = compare_report(
        92.5,
        &[
            CompareCandidate {
                name: "tentaclenet".into(),
                members: 8,
                acc_pct: 89.9,
                footprint_bytes: 645 * 1024,
            },
            CompareCandidate {
                name: "boosting".into(),
                members: 8,
                acc_pct: 89.1,
                footprint_bytes: 1445 * 1024,
            },
        ],
    );
    print!("{}", compare_csv("cifar10", &rows));
    assert_eq!(rows[0].savings_pct, 55.3);

    // 188 kB against a 697 kB bagged ensemble: 73.0% smaller.
    let rows = compare_report(
        65.0,
        &[
            CompareCandidate {
                name: "tentaclenet".into(),
                members: 4,
                acc_pct: 63.1,
                footprint_bytes: 188 * 1024,
            },
            CompareCandidate {
                name: "bagging".into(),
                members: 4,
                acc_pct: 62.4,
                footprint_bytes: 697 * 1024,
            },
        ],
    );
    print!("{}", compare_csv("fer", &rows));
    assert_eq!(rows[0].savings_pct, 73.0);
}
