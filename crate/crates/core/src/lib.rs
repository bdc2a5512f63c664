//! Desk-scale 3D segmentation toolkit.
//!
//! The crate bundles a minimal reverse-mode tensor engine, a
//! shuffle-then-reorder spatial attention block, boundary-weighted Dice
//! losses, a small encoder-decoder segmentation net, synthetic volume
//! generation, sliding-window inference, and surface-distance metrics,
//! plus the training/ablation machinery that ties them together.

// `Real` is f64 by default and f32 under the `f32` feature, so casts at
// the Real <-> f64 boundary (disk formats, statistics accumulators) are
// no-ops in one configuration and real conversions in the other.
#![allow(clippy::unnecessary_cast)]

pub mod ablate;
pub mod ckpt;
pub mod conv;
pub mod error;
pub mod fdcheck;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod shuffle;
pub mod sram;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
