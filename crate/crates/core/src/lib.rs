//! Nonparallel voice conversion with a cycle-consistent variational
//! autoencoder (CycleVAE) for spectral mapping and a Parallel WaveGAN
//! vocoder trained with multiresolution STFT losses and converted-feature
//! augmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`dsp`]: STFT, warped mel-cepstral analysis, F0 and band aperiodicity
//!   extraction, silence trimming, mel-cepstral distortion.
//! - [`nn`]: a tape-based reverse-mode autodiff engine with dense, 1-D
//!   convolution and gated recurrent layers, Adam, and noise samplers.
//! - [`cyclevae`]: the many-to-many encoder/decoder, the cycle flow and its
//!   variational loss.
//! - [`pwg`]: the noise-driven WaveNet-style generator, the discriminator,
//!   the multiresolution STFT loss and the augmented adversarial objective.
//! - [`pipeline`]: manifests, feature and checkpoint files, training
//!   orchestration, conversion and objective evaluation.

pub mod cyclevae;
pub mod dsp;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod pwg;

pub use error::{Error, Result};
