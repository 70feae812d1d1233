//! The core identity: a dot product of ±1 vectors equals
//! 2 * popcount(xnor(a, b)) - n over bit-packed rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tentaclenet::bitcore::{xnor_popcount_dot, BitTensor};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for n in [1usize, 7, 64, 65, 300] {
        let a: Vec<f32> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let b: Vec<f32> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();

        let float_dot: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();

        let pa = BitTensor::from_signs(&[1, n], &a).unwrap();
        let pb = BitTensor::from_signs(&[1, n], &b).unwrap();
        let bit_dot = xnor_popcount_dot(pa.row_words(0), pb.row_words(0), n).unwrap();

        println!(
            "n={n:>3}  float dot = {float_dot:>6.1}  xnor/popcount dot = {bit_dot:>4}  ({} words)",
            pa.words_per_row()
        );
        assert_eq!(float_dot as i32, bit_dot);
    }
    println!("all dots agree exactly");
}
