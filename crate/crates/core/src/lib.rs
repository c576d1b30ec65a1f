//! `vqlab` is a laboratory for compressed-video quality work.
//!
//! It bundles the pieces needed to build and evaluate a compressed-video
//! quality database and a no-reference quality model on top of it:
//!
//! * [`vio`]: Y4M ingest and clip slicing.
//! * [`fidelity`]: full-reference PSNR, SSIM and MS-SSIM.
//! * [`content`]: SI/TI content descriptors.
//! * [`labeling`]: exponential quality-decay laws, sparse-anchor fitting,
//!   inferred MOS and subjective session planning.
//! * [`preprocess`]: subsequence splitting, saliency cropping and cube tiling.
//! * [`stnet`]: a small reverse-mode tensor engine and the spatiotemporal
//!   quality network built on it.
//! * [`harness`]: correlation statistics, content-disjoint splits and the
//!   experiment runner.

pub mod cli;
pub mod content;
pub mod error;
pub mod fidelity;
pub mod harness;
pub mod labeling;
pub mod preprocess;
pub mod stnet;
pub mod synth;
pub mod util;
pub mod vio;

pub use error::{Error, Result};

/// Version tag written into every machine-readable output.
pub const SCHEMA_VERSION: u32 = 1;
