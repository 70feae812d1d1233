//! Dataset loading and synthesis.
//!
//! Samples are stored as the loader produced them (pixel data scaled to
//! [0, 1], synthetic data raw); the per-channel standardization constants
//! computed from the train split ride along in [`Dataset::norm`] and are
//! applied by the model, so a saved model evaluates correctly without the
//! original loader configuration.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::DataNorm;
use crate::rng::{stream, stream_rng};
use crate::tensor::Tensor;

/// Which split a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A labeled image collection with split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub classes: usize,
    pub shape: [usize; 3],
    pub provenance: String,
    /// Train-split standardization constants, identity if none apply.
    pub norm: DataNorm,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of all samples tagged with `split`, in storage order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// True if the loader supplied an explicit validation split.
    pub fn has_val(&self) -> bool {
        self.splits.contains(&Split::Val)
    }

    /// A new dataset holding clones of the selected samples. Split tags and
    /// normalization carry over.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Invalid(format!(
                    "subset index {i} out of range for {} samples",
                    self.len()
                )));
            }
        }
        Ok(Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
            classes: self.classes,
            shape: self.shape,
            provenance: format!("{} subset[{}]", self.provenance, indices.len()),
            norm: self.norm.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.labels.len() || self.samples.len() != self.splits.len() {
            return Err(Error::Invalid(
                "samples, labels and splits must have equal length".into(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::Invalid("a dataset needs at least 2 classes".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.shape() != self.shape {
                return Err(Error::Shape(format!(
                    "sample {i} has shape {:?}, dataset shape is {:?}",
                    s.shape(),
                    self.shape
                )));
            }
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.classes)
        {
            return Err(Error::Invalid(format!(
                "label {l} at sample {i} exceeds class count {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Per-channel mean/std over the listed samples, pixel-wise. `std` is floored
/// at 1e-6 so constant channels stay usable.
fn channel_stats(samples: &[Tensor], indices: &[usize], channels: usize) -> DataNorm {
    let mut sum = vec![0.0f64; channels];
    let mut sum_sq = vec![0.0f64; channels];
    let mut count = vec![0u64; channels];
    for &i in indices {
        let t = &samples[i];
        let plane = t.len() / channels;
        let data = t.data();
        for ch in 0..channels {
            for &v in &data[ch * plane..(ch + 1) * plane] {
                sum[ch] += v as f64;
                sum_sq[ch] += (v as f64) * (v as f64);
                count[ch] += 1;
            }
        }
    }
    let mut mean = Vec::with_capacity(channels);
    let mut std = Vec::with_capacity(channels);
    for ch in 0..channels {
        let n = count[ch].max(1) as f64;
        let m = sum[ch] / n;
        let var = (sum_sq[ch] / n - m * m).max(0.0);
        mean.push(m as f32);
        std.push(var.sqrt().max(1e-6) as f32);
    }
    DataNorm { mean, std }
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const CIFAR_BATCH_RECORDS: usize = 10_000;

fn read_cifar_batch(
    path: &Path,
    split: Split,
    samples: &mut Vec<Tensor>,
    labels: &mut Vec<usize>,
    splits: &mut Vec<Split>,
) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Context {
            context: format!("reading {}", path.display()),
            source: Box::new(e.into()),
        }
    })?;
    if bytes.len() != CIFAR_RECORD * CIFAR_BATCH_RECORDS {
        return Err(Error::Truncated(format!(
            "truncated batch {}: {} bytes, want {}",
            path.display(),
            bytes.len(),
            CIFAR_RECORD * CIFAR_BATCH_RECORDS
        )));
    }
    for (rec, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = chunk[0];
        if label > 9 {
            return Err(Error::CorruptData(format!(
                "corrupt record {rec} in {}: label byte {label}",
                path.display()
            )));
        }
        let pixels: Vec<f32> = chunk[1..].iter().map(|&b| b as f32 / 255.0).collect();
        samples.push(Tensor::from_vec(&[3, 32, 32], pixels)?);
        labels.push(label as usize);
        splits.push(split);
    }
    Ok(())
}

/// Load the six-file CIFAR-10 binary layout: five train batches and one test
/// batch of 10,000 records each, one label byte then three 1024-byte channel
/// planes per record.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut samples = Vec::with_capacity(60_000);
    let mut labels = Vec::with_capacity(60_000);
    let mut splits = Vec::with_capacity(60_000);
    for i in 1..=5 {
        read_cifar_batch(
            &dir.join(format!("data_batch_{i}.bin")),
            Split::Train,
            &mut samples,
            &mut labels,
            &mut splits,
        )?;
    }
    read_cifar_batch(
        &dir.join("test_batch.bin"),
        Split::Test,
        &mut samples,
        &mut labels,
        &mut splits,
    )?;
    let train_idx: Vec<usize> = (0..5 * CIFAR_BATCH_RECORDS).collect();
    let norm = channel_stats(&samples, &train_idx, 3);
    let ds = Dataset {
        samples,
        labels,
        splits,
        classes: 10,
        shape: [3, 32, 32],
        provenance: format!(
            "cifar10 dir={} norm_mean={:?} norm_std={:?}",
            dir.display(),
            norm.mean,
            norm.std
        ),
        norm,
    };
    ds.validate()?;
    Ok(ds)
}

/// Load a FER-style CSV: a header row, then `label,pixels,usage` rows where
/// `pixels` is `height * width` space-separated byte values and `usage` is
/// Training, PublicTest, or PrivateTest.
pub fn load_grayscale_csv(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Context {
        context: format!("reading {}", path.display()),
        source: Box::new(e.into()),
    })?;
    let mut lines = text.lines().enumerate();
    let Some((_, _header)) = lines.next() else {
        return Err(Error::Parse("empty file, expected a header row".into()));
    };
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    let mut max_label = 0usize;
    for (lineno, line) in lines {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let (Some(label_s), Some(pixels_s), Some(usage_s)) =
            (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse(format!(
                "line {row}: expected label,pixels,usage"
            )));
        };
        let label: usize = label_s
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {row}: bad label {label_s:?}")))?;
        let mut pixels = Vec::with_capacity(height * width);
        for tok in pixels_s.split_ascii_whitespace() {
            let v: u32 = tok
                .parse()
                .map_err(|_| Error::Parse(format!("line {row}: bad pixel {tok:?}")))?;
            if v > 255 {
                return Err(Error::Parse(format!("line {row}: pixel {v} out of range")));
            }
            pixels.push(v as f32 / 255.0);
        }
        if pixels.len() != height * width {
            return Err(Error::Parse(format!(
                "line {row}: expected {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        let split = match usage_s.trim() {
            "Training" => Split::Train,
            "PublicTest" => Split::Val,
            "PrivateTest" => Split::Test,
            other => {
                return Err(Error::Parse(format!(
                    "line {row}: unknown usage tag {other:?}"
                )))
            }
        };
        max_label = max_label.max(label);
        samples.push(Tensor::from_vec(&[1, height, width], pixels)?);
        labels.push(label);
        splits.push(split);
    }
    if samples.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    let train_idx: Vec<usize> = (0..samples.len())
        .filter(|&i| splits[i] == Split::Train)
        .collect();
    let norm = channel_stats(&samples, &train_idx, 1);
    let ds = Dataset {
        samples,
        labels,
        splits,
        classes: (max_label + 1).max(2),
        shape: [1, height, width],
        provenance: format!(
            "csv path={} norm_mean={:?} norm_std={:?}",
            path.display(),
            norm.mean,
            norm.std
        ),
        norm,
    };
    ds.validate()?;
    Ok(ds)
}

/// Synthetic benchmark with the default noise level and template amplitude.
pub fn synth_dataset(
    seed: u64,
    classes: usize,
    channels: usize,
    h: usize,
    w: usize,
    n_train: usize,
    n_test: usize,
) -> Result<Dataset> {
    synth_dataset_with(seed, classes, channels, h, w, n_train, n_test, 0.5, 0.1)
}

/// Synthetic benchmark generator. Each class is a fixed random ±amplitude
/// spatial template; every sample is its class template plus N(0, sigma²)
/// noise. Labels cycle through the classes, so counts are balanced. Fully
/// deterministic given the seed.
#[allow(clippy::too_many_arguments)]
pub fn synth_dataset_with(
    seed: u64,
    classes: usize,
    channels: usize,
    h: usize,
    w: usize,
    n_train: usize,
    n_test: usize,
    sigma: f32,
    amplitude: f32,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Invalid("synth_dataset needs at least 2 classes".into()));
    }
    if channels == 0 || h == 0 || w == 0 || n_train == 0 {
        return Err(Error::Invalid("synth_dataset dimensions must be positive".into()));
    }
    if sigma < 0.0 || amplitude <= 0.0 {
        return Err(Error::Invalid(
            "synth_dataset needs sigma >= 0 and amplitude > 0".into(),
        ));
    }
    let dim = channels * h * w;
    let mut rng = stream_rng(seed, stream::SYNTH);
    let templates: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| if rng.gen::<bool>() { amplitude } else { -amplitude })
                .collect()
        })
        .collect();
    let mut make = |count: usize, split: Split, samples: &mut Vec<Tensor>, labels: &mut Vec<usize>, splits: &mut Vec<Split>| -> Result<()> {
        for i in 0..count {
            let class = i % classes;
            let data: Vec<f32> = templates[class]
                .iter()
                .map(|&t| {
                    let noise: f32 = StandardNormal.sample(&mut rng);
                    t + sigma * noise
                })
                .collect();
            samples.push(Tensor::from_vec(&[channels, h, w], data)?);
            labels.push(class);
            splits.push(split);
        }
        Ok(())
    };
    let mut samples = Vec::with_capacity(n_train + n_test);
    let mut labels = Vec::with_capacity(n_train + n_test);
    let mut splits = Vec::with_capacity(n_train + n_test);
    make(n_train, Split::Train, &mut samples, &mut labels, &mut splits)?;
    make(n_test, Split::Test, &mut samples, &mut labels, &mut splits)?;
    let ds = Dataset {
        samples,
        labels,
        splits,
        classes,
        shape: [channels, h, w],
        provenance: format!(
            "synth seed={seed} classes={classes} shape={channels}x{h}x{w} sigma={sigma} amplitude={amplitude}"
        ),
        norm: DataNorm::default(),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_cifar_batch(path: &Path, start_label: u8) {
        let mut bytes = Vec::with_capacity(CIFAR_RECORD * CIFAR_BATCH_RECORDS);
        for rec in 0..CIFAR_BATCH_RECORDS {
            bytes.push((start_label as usize + rec) as u8 % 10);
            for i in 0..3072 {
                bytes.push((rec + i) as u8);
            }
        }
        std::fs::write(path, bytes).unwrap();
    }

    fn fake_cifar_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            write_cifar_batch(&dir.path().join(format!("data_batch_{i}.bin")), i as u8);
        }
        write_cifar_batch(&dir.path().join("test_batch.bin"), 7);
        dir
    }

    #[test]
    fn cifar_layout_and_counts() {
        let dir = fake_cifar_dir();
        let ds = load_cifar10(dir.path()).unwrap();
        assert_eq!(ds.len(), 60_000);
        assert_eq!(ds.shape, [3, 32, 32]);
        assert_eq!(ds.indices(Split::Train).len(), 50_000);
        assert_eq!(ds.indices(Split::Test).len(), 10_000);
        // First record's label is byte 0 of the first train file.
        let raw = std::fs::read(dir.path().join("data_batch_1.bin")).unwrap();
        assert_eq!(ds.labels[0], raw[0] as usize);
        // Pixel byte 1 of record 0 is channel 0, position 0.
        assert_eq!(ds.samples[0].data()[0], raw[1] as f32 / 255.0);
    }

    #[test]
    fn cifar_truncation_and_corruption() {
        let dir = fake_cifar_dir();
        let path = dir.path().join("data_batch_3.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_cifar10(dir.path()),
            Err(Error::Truncated(_))
        ));

        let dir = fake_cifar_dir();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = 11;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_cifar10(dir.path()),
            Err(Error::CorruptData(_))
        ));
    }

    #[test]
    fn csv_row_parsing_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("faces.csv");
        let mut text = String::from("emotion,pixels,Usage\n");
        text.push_str(&format!("3,{},Training\n", ["0"; 4].join(" ")));
        text.push_str(&format!("1,{},PublicTest\n", ["255"; 4].join(" ")));
        text.push_str(&format!("0,{},PrivateTest\n", ["128"; 4].join(" ")));
        std::fs::write(&path, text).unwrap();
        let ds = load_grayscale_csv(&path, 2, 2).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels, vec![3, 1, 0]);
        assert_eq!(ds.classes, 4);
        assert_eq!(ds.splits, vec![Split::Train, Split::Val, Split::Test]);
        assert_eq!(ds.samples[0].data(), &[0.0; 4]);
        assert_eq!(ds.samples[1].data(), &[1.0; 4]);
    }

    #[test]
    fn csv_wrong_pixel_count_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "emotion,pixels,Usage\n2,0 0 0,Training\n").unwrap();
        match load_grayscale_csv(&path, 2, 2) {
            Err(Error::Parse(msg)) => {
                assert!(msg.contains("line 2"), "{msg}");
                assert!(msg.contains("got 3"), "{msg}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_pixels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        let pixels = "13 0 255 7";
        std::fs::write(
            &path,
            format!("emotion,pixels,Usage\n5,{pixels},Training\n"),
        )
        .unwrap();
        let ds = load_grayscale_csv(&path, 2, 2).unwrap();
        let back: Vec<String> = ds.samples[0]
            .data()
            .iter()
            .map(|&v| format!("{}", (v * 255.0).round() as u32))
            .collect();
        assert_eq!(back.join(" "), pixels);
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_dataset(11, 3, 1, 8, 8, 30, 9).unwrap();
        let b = synth_dataset(11, 3, 1, 8, 8, 30, 9).unwrap();
        assert_eq!(a, b);
        for c in 0..3 {
            let count = a
                .indices(Split::Train)
                .iter()
                .filter(|&&i| a.labels[i] == c)
                .count();
            assert_eq!(count, 10);
        }
        let c = synth_dataset(12, 3, 1, 8, 8, 30, 9).unwrap();
        assert_ne!(a.samples[0], c.samples[0]);
    }

    #[test]
    fn synth_noiseless_matches_templates_exactly() {
        let ds = synth_dataset_with(5, 4, 1, 6, 6, 40, 12, 0.0, 0.1).unwrap();
        // Noiseless samples equal their class template, so nearest-template
        // classification is exact.
        for i in 0..ds.len() {
            let class_rep = &ds.samples[ds.labels[i]];
            assert_eq!(ds.samples[i].data(), class_rep.data());
        }
    }

    #[test]
    fn synth_default_noise_is_separable_by_nearest_template() {
        let ds = synth_dataset(21, 3, 1, 16, 16, 300, 300).unwrap();
        // Recover templates as per-class means of the train split, then check
        // a nearest-template classifier clears 90% on the test split.
        let dim = 256;
        let mut means = vec![vec![0.0f32; dim]; 3];
        let mut counts = [0usize; 3];
        for &i in &ds.indices(Split::Train) {
            counts[ds.labels[i]] += 1;
            for (m, &v) in means[ds.labels[i]].iter_mut().zip(ds.samples[i].data()) {
                *m += v;
            }
        }
        for c in 0..3 {
            for m in &mut means[c] {
                *m /= counts[c] as f32;
            }
        }
        let mut correct = 0;
        let test = ds.indices(Split::Test);
        for &i in &test {
            let best = (0..3)
                .min_by(|&a, &b| {
                    let da: f32 = means[a]
                        .iter()
                        .zip(ds.samples[i].data())
                        .map(|(m, v)| (m - v) * (m - v))
                        .sum();
                    let db: f32 = means[b]
                        .iter()
                        .zip(ds.samples[i].data())
                        .map(|(m, v)| (m - v) * (m - v))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best == ds.labels[i] {
                correct += 1;
            }
        }
        let acc = 100.0 * correct as f32 / test.len() as f32;
        assert!(acc >= 90.0, "nearest-template accuracy {acc}");
    }

    #[test]
    fn subset_carries_metadata() {
        let ds = synth_dataset(3, 2, 1, 4, 4, 10, 4).unwrap();
        let sub = ds.subset(&[0, 3, 5]).unwrap();
        assert_eq!(sub.len(), 3);
        assert_eq!(sub.labels, vec![ds.labels[0], ds.labels[3], ds.labels[5]]);
        assert_eq!(sub.classes, 2);
        assert!(ds.subset(&[99]).is_err());
    }
}
