//! Mask-based mixing augmentation and mean-teacher semi-supervised training
//! for semantic segmentation, at desk scale.
//!
//! The crate provides:
//!
//! - [`grid`]: dense image / label / probability / mask types and the pixel
//!   ops (`argmax_labels`, `confidence_map`, `one_hot`) everything shares;
//! - [`rng`]: a counter-based deterministic generator passed explicitly into
//!   every randomized operation;
//! - [`maskgen`]: CutMix, ClassMix, and ComplexMix mixing-mask generators;
//! - [`mixer`]: mask-driven blending of image pairs, label pairs, and
//!   per-pixel weight grids;
//! - [`model`]: a small fully-convolutional reference network with exact
//!   analytic gradients, SGD with momentum, polynomial LR decay, and a
//!   bit-exact checkpoint format;
//! - [`losses`]: supervised and confidence-gated unsupervised cross entropy
//!   with gradients w.r.t. logits;
//! - [`trainer`]: the mean-teacher loop (supervised warmup, pseudo-labels,
//!   mask mixing, student SGD, teacher EMA);
//! - [`data`]: synthetic shapes dataset generation, PPM/PGM IO, and
//!   labeled/unlabeled split management;
//! - [`metrics`]: confusion matrices, per-class IoU, and seed-averaged mIoU;
//! - [`config`] and [`cli`]: JSON experiment configs and the `gen-data` /
//!   `train` / `sweep` / `eval` commands.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod grid;
pub mod losses;
pub mod maskgen;
pub mod metrics;
pub mod mixer;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
