//! Sylvester Hadamard construction and the pseudo-Hadamard fit used to
//! initialize binary filter banks with mutually orthogonal sign rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tentaclenet::model::hadamard::{pseudo_hadamard, sylvester};

fn main() {
    let h = sylvester(8).unwrap();
    println!("H8:");
    for r in 0..8 {
        let row: String = (0..8)
            .map(|c| if h.at(r, c) > 0 { '+' } else { '-' })
            .collect();
        println!("  {row}");
    }

    // Gram matrix is 8I: rows are orthogonal with squared norm 8.
    for a in 0..8 {
        for b in 0..8 {
            assert_eq!(h.row_dot(a, b), if a == b { 8 } else { 0 });
        }
    }
    println!("H8 gram = 8*I");

    // A 10x36 filter bank does not match any Hadamard order; the fit picks
    // rows of the next power-of-two matrix.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = pseudo_hadamard(10, 36, &mut rng).unwrap();
    println!("pseudo-Hadamard fit: {}x{}", bank.rows, bank.cols);
    let max_dot = (0..10)
        .flat_map(|a| (0..a).map(move |b| (a, b)))
        .map(|(a, b)| bank.row_dot(a, b).abs())
        .max()
        .unwrap();
    println!("max |row dot| across pairs = {max_dot} (of {})", 36);
}
