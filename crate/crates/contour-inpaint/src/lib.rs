//! Foreground-aware image inpainting.
//!
//! Filling holes that overlap or touch foreground objects goes wrong when a
//! model has no notion of where the object boundary continues inside the
//! hole. This crate disentangles the problem into two stages: a contour
//! completion model first predicts the missing foreground boundary, and an
//! image completion model then paints content with that boundary as an extra
//! input channel. Both are coarse-to-refine gated-convolution generators
//! trained against spectrally normalized patch discriminators with hinge
//! losses, under a three-stage curriculum that ramps the adversarial weight
//! from 0 to 0.01 to 1 relative to the content loss.
//!
//! The crate ships a synthetic-scene data kit (exact segmentation masks,
//! Sobel-derived contours, free-form brush holes), trainers with bitwise
//! checkpoint round-trips and deterministic replay, an inference pipeline
//! with pluggable foreground detection, and L1/L2/PSNR/SSIM evaluation
//! reports. See the `examples/` directory for runnable entry points to each
//! capability; the `contour-inpaint` binary wraps the same functionality as
//! subcommands.

pub mod cli;
pub mod config;
pub mod contour;
pub mod data;
pub mod error;
pub mod inpaint;
pub mod evalkit;
pub mod nn;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
