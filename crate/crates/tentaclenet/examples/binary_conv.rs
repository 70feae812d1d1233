//! A binarized convolution: float filters collapse to packed sign bits plus
//! one alpha per filter, and the popcount path reproduces the naive ±1
//! sliding window scaled by alpha.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tentaclenet::bitcore::BitTensor;
use tentaclenet::layers::{per_filter_alpha, BinaryConvLayer};

fn main() {
    let (in_c, h, w, filters, k) = (2usize, 6usize, 6usize, 3usize, 3usize);
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Full-precision filters, then their binary form.
    let weights: Vec<f32> = (0..filters * in_c * k * k)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    let alpha = per_filter_alpha(&weights, filters).unwrap();
    let layer = BinaryConvLayer {
        packed: BitTensor::from_signs(&[filters, in_c * k * k], &weights).unwrap(),
        alpha: alpha.clone(),
        in_channels: in_c,
        kh: k,
        kw: k,
        stride: 1,
        pad: 1,
    };

    // A ±1 input map, as an inner layer would receive.
    let signs: Vec<f32> = (0..in_c * h * w)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let input = BitTensor::from_signs(&[in_c, h, w], &signs).unwrap();

    let out = layer.forward(&input).unwrap();

    // Naive oracle: slide the sign of each weight over the ±1 map, padding
    // with -1, then scale by alpha.
    let sign = |v: f32| if v >= 0.0 { 1.0f32 } else { -1.0 };
    let mut worst = 0.0f32;
    for f in 0..filters {
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0f32;
                for c in 0..in_c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy as isize + ky as isize - 1;
                            let ix = ox as isize + kx as isize - 1;
                            let x = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                -1.0
                            } else {
                                signs[(c * h + iy as usize) * w + ix as usize]
                            };
                            acc += sign(weights[((f * in_c + c) * k + ky) * k + kx]) * x;
                        }
                    }
                }
                let want = alpha[f] * acc;
                let got = out.data()[(f * h + oy) * w + ox];
                worst = worst.max((want - got).abs());
            }
        }
    }
    println!("output shape {:?}, alpha = {alpha:?}", out.shape());
    println!("max |popcount - naive| = {worst:e}");
    assert!(worst <= 1e-5);
}
