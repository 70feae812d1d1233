//! Bit-packed tensors and the XNOR/popcount kernels.
//!
//! Values live in {-1, +1} and are stored one bit per element: bit 1 maps to
//! +1, bit 0 to -1. Packing is row-aligned: each logical row (the product of
//! the leading dimensions indexes rows; the last dimension is the row length)
//! starts on a fresh 64-bit word, padded with zero bits up to the word
//! boundary. Within a word the least-significant bit holds the lowest element
//! index. The same layout is written verbatim by the model serializer, so it
//! is normative for the file format as well.
//!
//! The dot product of two packed rows is `2 * popcount(xnor) - n`. XNOR of
//! two zero pad bits yields 1, so the final word is masked down to the valid
//! bits before counting; pad positions can never contribute.

use crate::error::{Error, Result};

/// Packed {-1,+1} tensor. Immutable after construction in practice: all
/// kernels take `&self` and return fresh tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitTensor {
    shape: Vec<usize>,
    rows: usize,
    row_bits: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

/// Result of [`xnor_gemm`]: signed integer dot products, one per row pair.
/// Every entry `v` satisfies `|v| <= n` and `v ≡ n (mod 2)` for shared bit
/// length `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    values: Vec<i32>,
}

impl IntMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> i32 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }
}

fn check_shape(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!(
            "bit tensor shape must be non-empty with positive dims, got {shape:?}"
        )));
    }
    let row_bits = *shape.last().unwrap();
    let rows = shape[..shape.len() - 1].iter().product();
    Ok((rows, row_bits))
}

impl BitTensor {
    /// All-zero tensor (every element -1).
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let (rows, row_bits) = check_shape(shape)?;
        let words_per_row = row_bits.div_ceil(64);
        Ok(Self {
            shape: shape.to_vec(),
            rows,
            row_bits,
            words_per_row,
            words: vec![0; rows * words_per_row],
        })
    }

    /// Pack a float tensor against per-channel thresholds: bit = 1 iff
    /// `value >= threshold` (ties map to 1). `thresholds` must have a length
    /// that evenly divides the element count; each threshold covers one
    /// contiguous leading block, so `thresholds.len() == shape[0]` gives the
    /// usual per-channel behaviour and a single threshold broadcasts to all.
    pub fn binarize(values: &[f32], shape: &[usize], thresholds: &[f32]) -> Result<Self> {
        let (rows, row_bits) = check_shape(shape)?;
        if rows * row_bits != values.len() {
            return Err(Error::Shape(format!(
                "binarize: {} values do not fill shape {shape:?}",
                values.len()
            )));
        }
        if thresholds.is_empty() || !values.len().is_multiple_of(thresholds.len()) {
            return Err(Error::Shape(format!(
                "binarize: {} thresholds do not broadcast over {} values",
                thresholds.len(),
                values.len()
            )));
        }
        if let Some(t) = thresholds.iter().find(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("binarize threshold {t}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("binarize input value".into()));
        }
        let block = values.len() / thresholds.len();
        let mut out = Self::zeros(shape)?;
        for (flat, &v) in values.iter().enumerate() {
            if v >= thresholds[flat / block] {
                out.set_bit(flat / row_bits, flat % row_bits, true);
            }
        }
        Ok(out)
    }

    /// Pack a sign pattern: non-negative packs as +1.
    pub fn from_signs(shape: &[usize], values: &[f32]) -> Result<Self> {
        Self::binarize(values, shape, &[0.0])
    }

    /// Rebuild from raw words, validating row alignment and zeroed pad bits.
    /// Used by the model deserializer.
    pub fn from_raw(shape: &[usize], words: Vec<u64>) -> Result<Self> {
        let (rows, row_bits) = check_shape(shape)?;
        let words_per_row = row_bits.div_ceil(64);
        if words.len() != rows * words_per_row {
            return Err(Error::Shape(format!(
                "bit tensor shape {shape:?} needs {} words, got {}",
                rows * words_per_row,
                words.len()
            )));
        }
        let t = Self {
            shape: shape.to_vec(),
            rows,
            row_bits,
            words_per_row,
            words,
        };
        let tail = t.tail_mask();
        if tail != u64::MAX {
            for r in 0..rows {
                if t.words[r * words_per_row + words_per_row - 1] & !tail != 0 {
                    return Err(Error::Malformed(format!("nonzero pad bits in row {r}")));
                }
            }
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row_bits(&self) -> usize {
        self.row_bits
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.words[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    /// Mask selecting the valid bits of a row's final word.
    fn tail_mask(&self) -> u64 {
        match self.row_bits % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    pub fn get_bit(&self, row: usize, bit: usize) -> bool {
        debug_assert!(row < self.rows && bit < self.row_bits);
        let w = self.words[row * self.words_per_row + bit / 64];
        (w >> (bit % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, row: usize, bit: usize, value: bool) {
        debug_assert!(row < self.rows && bit < self.row_bits);
        let w = &mut self.words[row * self.words_per_row + bit / 64];
        if value {
            *w |= 1u64 << (bit % 64);
        } else {
            *w &= !(1u64 << (bit % 64));
        }
    }

    /// Inverse encoding: bit 1 -> +1.0, bit 0 -> -1.0, row by row.
    pub fn unpack_to_signs(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.rows * self.row_bits);
        for row in 0..self.rows {
            for bit in 0..self.row_bits {
                out.push(if self.get_bit(row, bit) { 1.0 } else { -1.0 });
            }
        }
        out
    }

    /// Dot product of one row of `self` against one row of `other`.
    pub fn dot_rows(&self, row: usize, other: &BitTensor, other_row: usize) -> Result<i32> {
        if self.row_bits != other.row_bits {
            return Err(Error::Shape(format!(
                "dot: row lengths differ ({} vs {})",
                self.row_bits, other.row_bits
            )));
        }
        xnor_popcount_dot(
            self.row_words(row),
            other.row_words(other_row),
            self.row_bits,
        )
    }
}

/// Integer dot product of two packed ±1 rows over their first `n` bits:
/// `2 * popcount(xnor(a, b)) - n`. Words beyond the first `ceil(n/64)` are
/// ignored, so rows carrying extra pad words give the same answer.
pub fn xnor_popcount_dot(a: &[u64], b: &[u64], n: usize) -> Result<i32> {
    if n == 0 {
        return Err(Error::Shape("dot: bit length must be positive".into()));
    }
    let needed = n.div_ceil(64);
    if a.len() < needed || b.len() < needed {
        return Err(Error::Shape(format!(
            "dot: rows hold {}/{} words, {} bits need {}",
            a.len(),
            b.len(),
            n,
            needed
        )));
    }
    let full = n / 64;
    let rem = n % 64;
    let mut pop: u32 = 0;
    for k in 0..full {
        pop += (!(a[k] ^ b[k])).count_ones();
    }
    if rem > 0 {
        let mask = (1u64 << rem) - 1;
        pop += ((!(a[full] ^ b[full])) & mask).count_ones();
    }
    Ok(2 * pop as i32 - n as i32)
}

/// All-pairs row dot products: `out[i][j] = dot(a.row(i), b.row(j))`.
pub fn xnor_gemm(a: &BitTensor, b: &BitTensor) -> Result<IntMatrix> {
    if a.row_bits != b.row_bits {
        return Err(Error::Shape(format!(
            "gemm: row lengths differ ({} vs {})",
            a.row_bits, b.row_bits
        )));
    }
    let n = a.row_bits;
    let mut values = Vec::with_capacity(a.rows * b.rows);
    for i in 0..a.rows {
        let ra = a.row_words(i);
        for j in 0..b.rows {
            values.push(xnor_popcount_dot(ra, b.row_words(j), n)?);
        }
    }
    Ok(IntMatrix {
        rows: a.rows,
        cols: b.rows,
        values,
    })
}

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::Invalid(
            "conv geometry: kernel and stride must be >= 1".into(),
        ));
    }
    if size + 2 * pad < k {
        return Err(Error::Shape(format!(
            "conv geometry: window {k} does not fit extent {size} with pad {pad}"
        )));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

/// Lower a packed `[C, H, W]` feature map to patch rows for convolution by
/// GEMM: one row per output position, `C*kh*kw` bits per row, ordered
/// channel-major then kernel row, kernel column. Spatial padding positions
/// take bit 0 (-1).
pub fn im2row_binary(
    fmap: &BitTensor,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<BitTensor> {
    if fmap.shape.len() != 3 {
        return Err(Error::Shape(format!(
            "im2row expects a [C, H, W] tensor, got shape {:?}",
            fmap.shape
        )));
    }
    if kh == 0 || kw == 0 || stride == 0 {
        return Err(Error::Invalid(
            "im2row: kernel dims and stride must be >= 1".into(),
        ));
    }
    let (c, h, w) = (fmap.shape[0], fmap.shape[1], fmap.shape[2]);
    let h_out = conv_out_dim(h, kh, stride, pad)?;
    let w_out = conv_out_dim(w, kw, stride, pad)?;
    let mut out = BitTensor::zeros(&[h_out * w_out, c * kh * kw])?;
    for oy in 0..h_out {
        for ox in 0..w_out {
            let patch = oy * w_out + ox;
            let mut bit = 0;
            for ch in 0..c {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let iy = (oy * stride + dy) as isize - pad as isize;
                        let ix = (ox * stride + dx) as isize - pad as isize;
                        let inside =
                            iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w;
                        if inside && fmap.get_bit(ch * h + iy as usize, ix as usize) {
                            out.set_bit(patch, bit, true);
                        }
                        bit += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Max pooling in the bit domain: the window maximum of ±1 values is +1 iff
/// any bit in the window is set, i.e. an OR reduction. No padding.
pub fn binary_maxpool(fmap: &BitTensor, k: usize, stride: usize) -> Result<BitTensor> {
    if fmap.shape.len() != 3 {
        return Err(Error::Shape(format!(
            "binary_maxpool expects a [C, H, W] tensor, got shape {:?}",
            fmap.shape
        )));
    }
    if k == 0 || stride == 0 {
        return Err(Error::Invalid(
            "binary_maxpool: window and stride must be >= 1".into(),
        ));
    }
    let (c, h, w) = (fmap.shape[0], fmap.shape[1], fmap.shape[2]);
    if h < k || w < k {
        return Err(Error::Shape(format!(
            "binary_maxpool: {k}x{k} window does not fit {h}x{w} input"
        )));
    }
    let h_out = (h - k) / stride + 1;
    let w_out = (w - k) / stride + 1;
    let mut out = BitTensor::zeros(&[c, h_out, w_out])?;
    for ch in 0..c {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut any = false;
                'win: for dy in 0..k {
                    for dx in 0..k {
                        if fmap.get_bit(ch * h + oy * stride + dy, ox * stride + dx) {
                            any = true;
                            break 'win;
                        }
                    }
                }
                if any {
                    out.set_bit(ch * h_out + oy, ox, true);
                }
            }
        }
    }
    Ok(out)
}
