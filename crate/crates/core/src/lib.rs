//! Semi-supervised retinal vessel segmentation.
//!
//! A tri-decoder U-Net student is trained on a few labeled source images and
//! many unlabeled target images. An EMA teacher supplies consistency targets
//! whose uncertain pixels are emphasised by Monte Carlo dropout, and a
//! patch discriminator aligns bottleneck features across the two domains.

pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
mod imgproc;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod unveiling;
pub mod types;

pub use error::{Error, Result};
pub use types::{binarize, validate_sample, BinaryMask, DomainTag, LabeledSample, ProbMap, RasterImage, RawSample, Sample, UnlabeledSample};

/// Crate version embedded in every artifact.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
