//! Serialize a model, load it back, and verify bit-exact logits. The file
//! carries a CRC over its payload, so corruption is caught at load.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tentaclenet::model::{build_tentaclenet, load_model, parse_spec, save_model};
use tentaclenet::tensor::Tensor;

fn main() {
    let spec = parse_spec(
        "input 2x8x8\nconv 4 3x3 pad 1\nmaxpool 2\nconv 5 3x3 pad 1\nhead dense\nclasses 3\n",
    )
    .unwrap();
    let model = build_tentaclenet(&spec, 3, 77).unwrap();

    let dir = std::env::temp_dir().join("tnet_roundtrip_example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.tnet");
    save_model(&model, &path).unwrap();
    let bytes = std::fs::metadata(&path).unwrap().len();
    println!("saved {} ({bytes} bytes)", path.display());

    let loaded = load_model(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..20 {
        let x: Vec<f32> = (0..2 * 8 * 8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let t = Tensor::from_vec(&[2, 8, 8], x).unwrap();
        let a = model.forward(&t).unwrap();
        let b = loaded.forward(&t).unwrap();
        assert_eq!(a, b, "logits diverged on input {i}");
    }
    println!("20 random forwards bit-exact after reload");

    // Flip one payload byte: the CRC check refuses the file.
    let mut raw = std::fs::read(&path).unwrap();
    let mid = raw.len() / 2;
    raw[mid] ^= 0x01;
    let bad = dir.join("corrupt.tnet");
    std::fs::write(&bad, raw).unwrap();
    match load_model(&bad) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => panic!("corruption went unnoticed"),
    }
}
