//! The model file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "TNET"  magic, 4 bytes
//! u16     format version (currently 1)
//! ...     payload: header, shared conv, thresholds, tentacles, fc
//! u32     CRC32 (IEEE) over the payload bytes
//! ```
//!
//! Packed binary weights are written as their in-memory word layout (64-bit
//! little-endian words, LSB-first bits, row-aligned), so a round trip is
//! bit-exact. Floats are written raw, so a round trip is byte-exact too.

use std::path::Path;

use crate::bitcore::BitTensor;
use crate::error::{Error, Result};
use crate::layers::{BinaryConvLayer, ChannelThresholds, FpConv, FpDense};
use crate::model::spec::HeadKind;
use crate::model::{DataNorm, StagePost, Tentacle, TentacleNetModel, TentacleStage};

const MAGIC: &[u8; 4] = b"TNET";
const VERSION: u16 = 1;

/// CRC32, IEEE polynomial, reflected. Matches zip/png/zlib.
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, vs: &[f32]) {
        for &v in vs {
            self.f32(v);
        }
    }

    fn usize32(&mut self, v: usize) -> Result<()> {
        let v32 = u32::try_from(v)
            .map_err(|_| Error::Invalid(format!("dimension {v} exceeds the format's u32 range")))?;
        self.u32(v32);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(format!(
                "{what}: wanted {n} bytes at offset {}, file payload ends at {}",
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after the last record",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn write_thresholds(w: &mut Writer, th: &ChannelThresholds) {
    w.f32s(&th.c);
    for &f in &th.flipped {
        w.u8(f as u8);
    }
}

fn read_thresholds(r: &mut Reader, channels: usize) -> Result<ChannelThresholds> {
    let c = r.f32s(channels, "threshold values")?;
    let mut flipped = Vec::with_capacity(channels);
    for _ in 0..channels {
        match r.u8("threshold flag")? {
            0 => flipped.push(false),
            1 => flipped.push(true),
            other => {
                return Err(Error::Malformed(format!(
                    "threshold flag byte {other} (want 0 or 1)"
                )))
            }
        }
    }
    Ok(ChannelThresholds { c, flipped })
}

fn write_fp_conv(w: &mut Writer, c: &FpConv) -> Result<()> {
    w.usize32(c.filters)?;
    w.usize32(c.in_channels)?;
    w.usize32(c.kh)?;
    w.usize32(c.kw)?;
    w.usize32(c.stride)?;
    w.usize32(c.pad)?;
    w.f32s(&c.weights);
    match &c.bias {
        None => w.u8(0),
        Some(b) => {
            w.u8(1);
            w.f32s(b);
        }
    }
    Ok(())
}

fn read_fp_conv(r: &mut Reader) -> Result<FpConv> {
    let filters = r.len("conv filters")?;
    let in_channels = r.len("conv in_channels")?;
    let kh = r.len("conv kh")?;
    let kw = r.len("conv kw")?;
    let stride = r.len("conv stride")?;
    let pad = r.len("conv pad")?;
    let weights = r.f32s(filters * in_channels * kh * kw, "conv weights")?;
    let bias = match r.u8("conv bias tag")? {
        0 => None,
        1 => Some(r.f32s(filters, "conv bias")?),
        other => return Err(Error::Malformed(format!("conv bias tag {other}"))),
    };
    let conv = FpConv {
        weights,
        bias,
        filters,
        in_channels,
        kh,
        kw,
        stride,
        pad,
    };
    conv.validate()?;
    Ok(conv)
}

fn write_dense(w: &mut Writer, d: &FpDense) -> Result<()> {
    w.usize32(d.outputs)?;
    w.usize32(d.inputs)?;
    w.f32s(&d.weights);
    match &d.bias {
        None => w.u8(0),
        Some(b) => {
            w.u8(1);
            w.f32s(b);
        }
    }
    Ok(())
}

fn read_dense(r: &mut Reader) -> Result<FpDense> {
    let outputs = r.len("dense outputs")?;
    let inputs = r.len("dense inputs")?;
    let weights = r.f32s(outputs * inputs, "dense weights")?;
    let bias = match r.u8("dense bias tag")? {
        0 => None,
        1 => Some(r.f32s(outputs, "dense bias")?),
        other => return Err(Error::Malformed(format!("dense bias tag {other}"))),
    };
    let dense = FpDense {
        weights,
        bias,
        outputs,
        inputs,
    };
    dense.validate()?;
    Ok(dense)
}

fn write_tentacle(w: &mut Writer, t: &Tentacle) -> Result<()> {
    w.usize32(t.stages.len())?;
    for stage in &t.stages {
        match stage {
            TentacleStage::Conv { layer, post } => {
                w.u8(0);
                w.usize32(layer.filters())?;
                w.usize32(layer.in_channels)?;
                w.usize32(layer.kh)?;
                w.usize32(layer.kw)?;
                w.usize32(layer.stride)?;
                w.usize32(layer.pad)?;
                for &word in layer.packed.words() {
                    w.u64(word);
                }
                w.f32s(&layer.alpha);
                match post {
                    StagePost::Binact(th) => {
                        w.u8(0);
                        write_thresholds(w, th);
                    }
                    StagePost::Affine { scale, shift } => {
                        w.u8(1);
                        w.f32s(scale);
                        w.f32s(shift);
                    }
                    StagePost::None => w.u8(2),
                }
            }
            TentacleStage::MaxPool { k, stride } => {
                w.u8(1);
                w.usize32(*k)?;
                w.usize32(*stride)?;
            }
        }
    }
    Ok(())
}

fn read_tentacle(r: &mut Reader) -> Result<Tentacle> {
    let count = r.len("stage count")?;
    let mut stages = Vec::with_capacity(count);
    for _ in 0..count {
        match r.u8("stage tag")? {
            0 => {
                let filters = r.len("stage filters")?;
                let in_channels = r.len("stage in_channels")?;
                let kh = r.len("stage kh")?;
                let kw = r.len("stage kw")?;
                let stride = r.len("stage stride")?;
                let pad = r.len("stage pad")?;
                let row_bits = in_channels * kh * kw;
                let words_per_row = row_bits.div_ceil(64);
                let raw = r.take(8 * filters * words_per_row, "packed weights")?;
                let words: Vec<u64> = raw
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let packed = BitTensor::from_raw(&[filters, row_bits], words)?;
                let alpha = r.f32s(filters, "alpha")?;
                let post = match r.u8("post tag")? {
                    0 => StagePost::Binact(read_thresholds(r, filters)?),
                    1 => StagePost::Affine {
                        scale: r.f32s(filters, "affine scale")?,
                        shift: r.f32s(filters, "affine shift")?,
                    },
                    2 => StagePost::None,
                    other => return Err(Error::Malformed(format!("post tag {other}"))),
                };
                let layer = BinaryConvLayer {
                    packed,
                    alpha,
                    in_channels,
                    kh,
                    kw,
                    stride,
                    pad,
                };
                layer.validate()?;
                stages.push(TentacleStage::Conv { layer, post });
            }
            1 => {
                let k = r.len("pool k")?;
                let stride = r.len("pool stride")?;
                stages.push(TentacleStage::MaxPool { k, stride });
            }
            other => return Err(Error::Malformed(format!("stage tag {other}"))),
        }
    }
    Ok(Tentacle { stages })
}

/// Serialize a validated model to the file-format byte string.
pub fn model_to_bytes(model: &TentacleNetModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut w = Writer::new();
    w.u64(model.spec_digest);
    w.u64(model.master_seed);
    w.usize32(model.n)?;
    w.usize32(model.classes)?;
    w.usize32(model.feature_k)?;
    w.u8(match model.head {
        HeadKind::GlobalPool => 0,
        HeadKind::Dense => 1,
    });
    for d in model.input {
        w.usize32(d)?;
    }
    w.usize32(model.norm.mean.len())?;
    for ch in 0..model.norm.mean.len() {
        w.f32(model.norm.mean[ch]);
        w.f32(model.norm.std[ch]);
    }
    for &seed in &model.tentacle_seeds {
        w.u64(seed);
    }
    write_fp_conv(&mut w, &model.shared_conv)?;
    write_thresholds(&mut w, &model.shared_post);
    for t in &model.tentacles {
        write_tentacle(&mut w, t)?;
    }
    write_dense(&mut w, &model.fc)?;

    let payload = w.buf;
    let mut out = Vec::with_capacity(payload.len() + 10);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32(&payload).to_le_bytes());
    Ok(out)
}

/// Parse and validate a model file image.
pub fn model_from_bytes(bytes: &[u8]) -> Result<TentacleNetModel> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("file shorter than the magic".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated("file shorter than the fixed framing".into()));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion { found: version });
    }
    let payload = &bytes[6..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32(payload);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }

    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let spec_digest = r.u64("spec digest")?;
    let master_seed = r.u64("master seed")?;
    let n = r.len("tentacle count")?;
    let classes = r.len("class count")?;
    let feature_k = r.len("feature count")?;
    let head = match r.u8("head kind")? {
        0 => HeadKind::GlobalPool,
        1 => HeadKind::Dense,
        other => return Err(Error::Malformed(format!("head kind {other}"))),
    };
    let input = [
        r.len("input channels")?,
        r.len("input height")?,
        r.len("input width")?,
    ];
    let norm_channels = r.len("norm channels")?;
    let mut norm = DataNorm::default();
    for _ in 0..norm_channels {
        norm.mean.push(r.f32("norm mean")?);
        norm.std.push(r.f32("norm std")?);
    }
    let mut tentacle_seeds = Vec::with_capacity(n);
    for _ in 0..n {
        tentacle_seeds.push(r.u64("tentacle seed")?);
    }
    let shared_conv = read_fp_conv(&mut r)?;
    let shared_post = read_thresholds(&mut r, shared_conv.filters)?;
    let mut tentacles = Vec::with_capacity(n);
    for _ in 0..n {
        tentacles.push(read_tentacle(&mut r)?);
    }
    let fc = read_dense(&mut r)?;
    r.done()?;

    let model = TentacleNetModel {
        n,
        classes,
        feature_k,
        head,
        input,
        spec_digest,
        master_seed,
        tentacle_seeds,
        norm,
        shared_conv,
        shared_post,
        tentacles,
        fc,
    };
    model.validate()?;
    Ok(model)
}

/// Write a model file.
pub fn save_model(model: &TentacleNetModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<TentacleNetModel> {
    let bytes = std::fs::read(path)?;
    model_from_bytes(&bytes)
}
