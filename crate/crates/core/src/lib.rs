//! Stroke-based image reconstruction.
//!
//! The crate rebuilds a raster image as an ordered timeline of parametric
//! brushstrokes — paint strokes that deposit color and smudge strokes that
//! drag existing paint — fitted by gradient descent through differentiable
//! renderers. The main pieces:
//!
//! - [`image`]: pixel containers, PPM/PGM/PNG input and output, Sobel
//!   fields, grid partitioning.
//! - [`geometry`]: quadratic Bézier strokes and stamp sampling.
//! - [`diff`]: reverse-mode automatic differentiation on a tape, plus
//!   finite-difference gradient checking.
//! - [`paint`]: stamp-compositing renderers (sequential reference,
//!   tile-parallel, and a smooth variant for optimization).
//! - [`smudge`]: patch-based smudge renderers (stepwise reference and a
//!   closed-form one-shot approximation).
//! - [`texture`]: procedural per-stroke texture from a small latent vector.
//! - [`losses`]: pixel, gradient-alignment, segmentation-overlap, area, and
//!   optimal-transport objectives.
//! - [`timeline`]: serializable stroke timelines and deterministic replay.
//! - [`optimize`]: coarse-to-fine reconstruction loop with RMSprop/Adam.
//! - [`checks`]: gradient-check suites comparing tape gradients against
//!   central differences.

pub mod checks;
pub mod diff;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod optimize;
pub mod paint;
pub mod parallel;
pub mod smudge;
pub mod texture;
pub mod timeline;
