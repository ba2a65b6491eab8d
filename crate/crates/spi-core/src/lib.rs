//! Single-pixel imaging toolkit.
//!
//! Simulates bucket-detector measurements under binary ±1 sampling masks and
//! reconstructs scenes three ways: a jointly learned mask + generator network
//! trained adversarially, the exact Walsh–Hadamard inverse at full sampling,
//! and conjugate-gradient Tikhonov least squares for anything in between.
//!
//! Modules:
//! - [`imaging`], [`hadamard`], [`solver`], [`mask_export`]: the physics
//!   forward model and classical reconstruction paths.
//! - [`nn`]: the trainable stack (binary mask layer with straight-through
//!   gradients, reconstruction generator, adversarial discriminator).
//! - [`loss`], [`metrics`]: training losses and PSNR/SSIM evaluation.
//! - [`data`]: STL-10 ingestion, preprocessing, splits, synthetic scenes.
//! - [`train`]: the optimization loop, checkpoints, inference, evaluation.

pub mod data;
pub mod error;
pub mod hadamard;
pub mod imaging;
pub mod loss;
pub mod mask_export;
pub mod metrics;
pub mod nn;
pub mod pgm;
pub mod solver;
pub mod train;

pub use error::{Error, Result};
pub use imaging::{
    binarize, decompose_mask, forward_measure, sampling_count, MaskSet, MeasurementVector,
    NoiseConfig, SceneImage,
};
