//! Mesh-based image alignment built from exact numerical kernels.
//!
//! The library aligns a target image onto a reference image with a
//! coarse-to-fine pipeline: a contextual correlation layer turns feature
//! maps into dense feature flow, global homographies are fitted and
//! photometrically refined on the first two pyramid layers, and the third
//! layer deforms a backward multi-grid mesh by minimizing a content
//! alignment loss plus a depth-aware shape-preserved loss.
//!
//! Main entry points:
//! - [`aligner::align`] runs the whole pipeline on an image pair.
//! - [`correlation::ccl`] is the standalone correlation layer
//!   (correlation volume, scale softmax, feature flow).
//! - [`mesh::warp_mesh`] is the backward multi-grid warp.
//! - [`evalkit`] provides synthetic pair generation and the overlap
//!   PSNR/SSIM and 4-pt RMSE metrics.
//!
//! The `meshalign-cli` workspace crate exposes the `synth`, `align`,
//! `eval`, and `bench` commands on top of this library.

pub mod aligner;
pub mod bench;
pub mod correlation;
pub mod error;
pub mod evalkit;
pub mod homography;
pub mod imaging;
pub mod mesh;
pub mod objective;
pub mod pyramid;
pub mod viz;

mod parallel;

pub use error::{Error, Result};
pub use imaging::Image;
