//! PAST: pixel alignment + self-training for unsupervised domain adaptation
//! in volumetric semantic segmentation.
//!
//! The pipeline translates labeled source-domain volumes into the target
//! domain with a two-domain GAN whose discriminators' encoders are reused as
//! the generators' encoders, trains a 3D segmentation network on the
//! synthesized volumes, then iteratively refines it on pseudo-labels selected
//! from the top-q confidence portion of its own predictions on the combined
//! synthesized + real target set.
//!
//! Everything is desk-scale, CPU-only and bit-deterministic per seed, and is
//! exercised end-to-end on a synthetic two-domain phantom with known ground
//! truth in both domains.

pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod segmentation;
pub mod selftrain;
pub mod translation;

pub use error::{Error, Result};
