//! In-context conditional video generation at desk scale.
//!
//! One model family, three paradigms: multi-reference images-to-video,
//! text-guided video extension with shot-transition modes, and audio-driven
//! talking generation with keyframe-constrained long-form synthesis. All
//! numerics are `f64` end to end and every sampling path is a pure function
//! of `(parameters, request, seed)`, so results are bit-reproducible on a
//! given platform.
//!
//! Module map:
//! - [`codec`] — spatiotemporal autoencoder between pixel clips and latents
//! - [`backbone`] — diffusion-transformer denoiser with factorized 3-D rotary
//!   positions
//! - [`incontext`] — segment layout, condition bundles, classifier-free
//!   dropout, guidance
//! - [`diffusion`] — flow-matching objective, masked loss, Euler sampler,
//!   bucket sampler
//! - [`extension`] — single-shot and shot-switching video extension
//! - [`shots`] — cut detection and transition classification
//! - [`avatar`] — audio features, talking generation, keyframe-constrained
//!   long-form inference
//! - [`synthdata`] — deterministic synthetic corpora with exact ground truth
//! - [`analysis`] — analytic oracles (subject segmentation, identity
//!   classification, PSNR, correlations)
//! - [`tensor`] — reverse-mode autodiff engine used by codec and backbone

pub mod analysis;
pub mod avatar;
pub mod backbone;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod extension;
pub mod incontext;
pub mod io;
pub mod parallel;
pub mod records;
pub mod rng;
pub mod shots;
pub mod synthdata;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
