//! Frequency-guided variational prior over fixed-length human motion windows.
//!
//! The crate is organised bottom-up:
//!
//! * [`kinematics`]: rotation algebra, yaw normalization, forward kinematics
//!   and finite-difference dynamics.
//! * [`frequency`]: orthonormal DCT-II and the sequence/segment spectra used
//!   as encoder guidance.
//! * [`diffcore`]: a small tape-based reverse-mode autodiff engine, parameter
//!   store, Adam and the binary checkpoint format.
//! * [`prior`]: the VAE itself (input assembly, encoder, decoder, loss,
//!   training loop).
//! * [`datagen`]: procedural motion clips, resampling, windowing and splits.
//! * [`tasks`]: sampling, interpolation, latent-optimization infilling and the
//!   evaluation metrics.

pub mod config;
pub mod datagen;
pub mod diffcore;
pub mod error;
pub mod frequency;
pub mod kinematics;
pub mod prior;
pub mod tasks;

pub use error::{Error, ErrorCategory, Result};
