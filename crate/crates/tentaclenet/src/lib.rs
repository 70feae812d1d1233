//! Binarized convolutional networks with a parallel-tentacle ensemble
//! template.
//!
//! The crate covers the full path from bit-packed XNOR/popcount kernels to
//! trained multi-tentacle classifiers:
//!
//! - [`bitcore`]: packed ±1 tensors, the XNOR-GEMM, im2row lowering, and
//!   bit-domain max pooling.
//! - [`layers`]: binary and full-precision layers, batch-norm folding into
//!   per-channel sign thresholds, and whole-network inference.
//! - [`model`]: network specs, the tentacle builder, Hadamard-style
//!   initialization, byte-exact footprint accounting, and the model file
//!   format.
//! - [`train`]: straight-through-estimator training with plateau learning
//!   rate decay.
//! - [`ensemble`]: bagging and boosting baselines plus side-by-side
//!   comparison reports.
//! - [`data`]: dataset loading and the synthetic benchmark generator.
//! - [`cli`]: the command surface behind the `tnet` binary.
//!
//! Every run is reproducible from a single master seed; see [`rng`] for how
//! per-tentacle and per-purpose streams are derived from it.

#![forbid(unsafe_code)]

pub mod bitcore;
pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
