//! Declarative network specs: a line-oriented text format describing the
//! baseline CNN that the tentacle builder replicates.
//!
//! ```text
//! # comment
//! input 1x16x16            # channels x height x width (or one number: N features)
//! conv 6 3x3 pad 1         # filters, kernel, then optional: stride S, pad P, nonorm
//! maxpool 2                # window (stride defaults to the window)
//! conv 3 3x3 pad 1
//! head global_pool         # or: head dense
//! classes 3
//! ```
//!
//! The first conv becomes the shared full-precision block, every following
//! layer is replicated into the tentacles, and the head line picks how the
//! shared fully-connected block is shaped. `nonorm` (last conv only) drops
//! that conv's normalization stage.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Per-tentacle logits concatenated: the fc block takes n*C inputs.
    GlobalPool,
    /// Per-tentacle feature vectors concatenated: the fc block takes n*K
    /// inputs and replaces the baseline's own dense layer.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecLayer {
    Conv {
        filters: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        norm: bool,
    },
    MaxPool {
        k: usize,
        stride: usize,
    },
}

/// Parsed and validated network description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: [usize; 3],
    pub layers: Vec<SpecLayer>,
    pub head: HeadKind,
    pub classes: usize,
}

fn parse_dims(token: &str, line: usize) -> Result<Vec<usize>> {
    token
        .split('x')
        .map(|p| {
            p.parse::<usize>().map_err(|_| {
                Error::Parse(format!("line {line}: bad dimension list \"{token}\""))
            })
        })
        .collect()
}

/// Parse the text format. Errors name the offending line.
pub fn parse_spec(text: &str) -> Result<NetworkSpec> {
    let mut input: Option<[usize; 3]> = None;
    let mut layers = Vec::new();
    let mut head: Option<HeadKind> = None;
    let mut classes: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut words = body.split_whitespace();
        let keyword = words.next().unwrap();
        let rest: Vec<&str> = words.collect();
        match keyword {
            "input" => {
                if rest.len() != 1 {
                    return Err(Error::Parse(format!(
                        "line {line}: input takes one dimension list"
                    )));
                }
                let dims = parse_dims(rest[0], line)?;
                input = Some(match dims.len() {
                    1 => [dims[0], 1, 1],
                    2 => [1, dims[0], dims[1]],
                    3 => [dims[0], dims[1], dims[2]],
                    _ => {
                        return Err(Error::Parse(format!(
                            "line {line}: input wants 1-3 dims, got {}",
                            dims.len()
                        )))
                    }
                });
            }
            "conv" => {
                if rest.len() < 2 {
                    return Err(Error::Parse(format!(
                        "line {line}: conv wants filters and a kernel"
                    )));
                }
                let filters = rest[0].parse::<usize>().map_err(|_| {
                    Error::Parse(format!("line {line}: bad filter count \"{}\"", rest[0]))
                })?;
                let kd = parse_dims(rest[1], line)?;
                let (kh, kw) = match kd.len() {
                    1 => (kd[0], kd[0]),
                    2 => (kd[0], kd[1]),
                    _ => {
                        return Err(Error::Parse(format!(
                            "line {line}: kernel wants 1-2 dims"
                        )))
                    }
                };
                let mut stride = 1;
                let mut pad = 0;
                let mut norm = true;
                let mut it = rest[2..].iter();
                while let Some(attr) = it.next() {
                    match *attr {
                        "stride" | "pad" => {
                            let v = it
                                .next()
                                .and_then(|v| v.parse::<usize>().ok())
                                .ok_or_else(|| {
                                    Error::Parse(format!(
                                        "line {line}: {attr} wants an integer"
                                    ))
                                })?;
                            if *attr == "stride" {
                                stride = v;
                            } else {
                                pad = v;
                            }
                        }
                        "nonorm" => norm = false,
                        other => {
                            return Err(Error::Parse(format!(
                                "line {line}: unknown conv attribute \"{other}\""
                            )))
                        }
                    }
                }
                layers.push(SpecLayer::Conv {
                    filters,
                    kh,
                    kw,
                    stride,
                    pad,
                    norm,
                });
            }
            "maxpool" => {
                if rest.is_empty() {
                    return Err(Error::Parse(format!(
                        "line {line}: maxpool wants a window size"
                    )));
                }
                let k = rest[0].parse::<usize>().map_err(|_| {
                    Error::Parse(format!("line {line}: bad window \"{}\"", rest[0]))
                })?;
                let stride = match rest.get(1) {
                    None => k,
                    Some(&"stride") => rest
                        .get(2)
                        .and_then(|v| v.parse::<usize>().ok())
                        .ok_or_else(|| {
                            Error::Parse(format!("line {line}: stride wants an integer"))
                        })?,
                    Some(other) => {
                        return Err(Error::Parse(format!(
                            "line {line}: unknown maxpool attribute \"{other}\""
                        )))
                    }
                };
                layers.push(SpecLayer::MaxPool { k, stride });
            }
            "head" => {
                head = Some(match rest.first() {
                    Some(&"global_pool") => HeadKind::GlobalPool,
                    Some(&"dense") => HeadKind::Dense,
                    other => {
                        return Err(Error::Parse(format!(
                            "line {line}: head wants global_pool or dense, got {other:?}"
                        )))
                    }
                });
            }
            "classes" => {
                classes = Some(
                    rest.first()
                        .and_then(|v| v.parse::<usize>().ok())
                        .ok_or_else(|| {
                            Error::Parse(format!("line {line}: classes wants an integer"))
                        })?,
                );
            }
            other => {
                return Err(Error::Parse(format!(
                    "line {line}: unknown keyword \"{other}\""
                )))
            }
        }
    }

    let spec = NetworkSpec {
        input: input.ok_or_else(|| Error::Parse("missing input line".into()))?,
        layers,
        head: head.ok_or_else(|| Error::Parse("missing head line".into()))?,
        classes: classes.ok_or_else(|| Error::Parse("missing classes line".into()))?,
    };
    spec.validate()?;
    Ok(spec)
}

impl NetworkSpec {
    /// Structural checks. Shape propagation failures surface here too, so a
    /// valid spec always builds.
    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::Config(format!(
                "input dims must be positive, got {:?}",
                self.input
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if !matches!(self.layers.first(), Some(SpecLayer::Conv { .. })) {
            return Err(Error::Config("first layer must be a conv".into()));
        }
        let conv_count = self
            .layers
            .iter()
            .filter(|l| matches!(l, SpecLayer::Conv { .. }))
            .count();
        if conv_count < 2 {
            return Err(Error::Config(
                "no inner layers to binarize: the spec needs the shared first conv plus at least one more".into(),
            ));
        }
        if !matches!(self.layers.last(), Some(SpecLayer::Conv { .. })) {
            return Err(Error::Config(
                "last layer before the head must be a conv".into(),
            ));
        }
        let last_conv_idx = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                SpecLayer::Conv {
                    filters,
                    kh,
                    kw,
                    stride,
                    norm,
                    ..
                } => {
                    if *filters == 0 || *kh == 0 || *kw == 0 || *stride == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: conv dims must be positive"
                        )));
                    }
                    if !*norm && i != last_conv_idx {
                        return Err(Error::Config(format!(
                            "layer {i}: nonorm is only supported on the last conv"
                        )));
                    }
                    if !*norm && i == 0 {
                        return Err(Error::Config(
                            "the shared first conv requires normalization".into(),
                        ));
                    }
                }
                SpecLayer::MaxPool { k, stride } => {
                    if *k == 0 || *stride == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: pool dims must be positive"
                        )));
                    }
                }
            }
        }
        let chain = self.layer_shapes()?;
        let final_channels = chain.last().unwrap()[0];
        if self.head == HeadKind::GlobalPool && final_channels != self.classes {
            return Err(Error::Config(format!(
                "global_pool head needs the last conv to emit {} channels (one per class), got {final_channels}",
                self.classes
            )));
        }
        Ok(())
    }

    /// Shape after each layer, starting from the declared input.
    pub fn layer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                SpecLayer::Conv {
                    filters,
                    kh,
                    kw,
                    stride,
                    pad,
                    ..
                } => [
                    *filters,
                    crate::bitcore::conv_out_dim(shape[1], *kh, *stride, *pad)
                        .map_err(|e| e.context(format!("layer {i}")))?,
                    crate::bitcore::conv_out_dim(shape[2], *kw, *stride, *pad)
                        .map_err(|e| e.context(format!("layer {i}")))?,
                ],
                SpecLayer::MaxPool { k, stride } => [
                    shape[0],
                    crate::bitcore::conv_out_dim(shape[1], *k, *stride, 0)
                        .map_err(|e| e.context(format!("layer {i}")))?,
                    crate::bitcore::conv_out_dim(shape[2], *k, *stride, 0)
                        .map_err(|e| e.context(format!("layer {i}")))?,
                ],
            };
            out.push(shape);
        }
        Ok(out)
    }

    /// Feature count per tentacle after global pooling: the last conv's
    /// filter count (equals the class count for global-pool heads).
    pub fn feature_k(&self) -> Result<usize> {
        Ok(self.layer_shapes()?.last().unwrap()[0])
    }

    /// Declared layer count m: convs plus the head stage.
    pub fn m(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, SpecLayer::Conv { .. }))
            .count()
            + 1
    }

    /// Normalized one-line-per-layer rendering; the digest is taken over this.
    pub fn canonical_text(&self) -> String {
        let mut out = format!("input {}x{}x{}\n", self.input[0], self.input[1], self.input[2]);
        for layer in &self.layers {
            match layer {
                SpecLayer::Conv {
                    filters,
                    kh,
                    kw,
                    stride,
                    pad,
                    norm,
                } => {
                    out.push_str(&format!("conv {filters} {kh}x{kw} stride {stride} pad {pad}"));
                    if !norm {
                        out.push_str(" nonorm");
                    }
                    out.push('\n');
                }
                SpecLayer::MaxPool { k, stride } => {
                    out.push_str(&format!("maxpool {k} stride {stride}\n"));
                }
            }
        }
        out.push_str(match self.head {
            HeadKind::GlobalPool => "head global_pool\n",
            HeadKind::Dense => "head dense\n",
        });
        out.push_str(&format!("classes {}\n", self.classes));
        out
    }

    pub fn digest(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }
}

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "\
# tiny three-class spec
input 1x16x16
conv 6 3x3 pad 1
maxpool 2
conv 3 3x3 pad 1
head global_pool
classes 3
";

    #[test]
    fn parses_the_tiny_spec() {
        let spec = parse_spec(TINY).unwrap();
        assert_eq!(spec.input, [1, 16, 16]);
        assert_eq!(spec.layers.len(), 3);
        assert_eq!(spec.head, HeadKind::GlobalPool);
        assert_eq!(spec.classes, 3);
        assert_eq!(spec.m(), 3);
        assert_eq!(spec.feature_k().unwrap(), 3);
        let shapes = spec.layer_shapes().unwrap();
        assert_eq!(shapes, vec![[6, 16, 16], [6, 8, 8], [3, 8, 8]]);
    }

    #[test]
    fn one_dimensional_input_becomes_channels() {
        let spec = parse_spec(
            "input 64\nconv 64 1x1\nconv 64 1x1 nonorm\nhead dense\nclasses 10\n",
        )
        .unwrap();
        assert_eq!(spec.input, [64, 1, 1]);
        assert_eq!(spec.feature_k().unwrap(), 64);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_spec("input 1x16x16\nconv 6 3x3 wobble\nhead dense\nclasses 3\n")
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_spec("input 1x16x16\nconv 6 3x3\nfrobnicate\nhead dense\nclasses 3\n")
            .unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn single_conv_spec_rejected() {
        let err =
            parse_spec("input 1x8x8\nconv 3 3x3 pad 1\nhead global_pool\nclasses 3\n").unwrap_err();
        assert!(err.to_string().contains("no inner layers"), "{err}");
    }

    #[test]
    fn global_pool_head_needs_class_channels() {
        let err = parse_spec(
            "input 1x8x8\nconv 4 3x3 pad 1\nconv 5 3x3 pad 1\nhead global_pool\nclasses 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("one per class"), "{err}");
    }

    #[test]
    fn nonorm_restricted_to_last_conv() {
        let err = parse_spec(
            "input 1x8x8\nconv 4 3x3 pad 1 nonorm\nconv 3 3x3 pad 1\nhead global_pool\nclasses 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("nonorm"), "{err}");
    }

    #[test]
    fn canonical_text_round_trips_and_digests() {
        let spec = parse_spec(TINY).unwrap();
        let canon = spec.canonical_text();
        let reparsed = parse_spec(&canon).unwrap();
        assert_eq!(spec, reparsed);
        assert_eq!(spec.digest(), reparsed.digest());
        // Appending a layer changes the digest.
        let other = parse_spec(
            "input 1x16x16\nconv 6 3x3 pad 1\nmaxpool 2\nconv 6 3x3 pad 1\nconv 3 3x3 pad 1\nhead global_pool\nclasses 3\n",
        )
        .unwrap();
        assert_ne!(spec.digest(), other.digest());
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"hello"), 0xa430_d846_80aa_bd0b);
    }
}
