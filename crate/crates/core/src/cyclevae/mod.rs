//! Cycle-consistent variational autoencoder for many-to-many spectral
//! conversion.
//!
//! One encoder maps acoustic frames (mel-cepstrum plus excitation) to a
//! per-frame Laplacian posterior and speaker logits; one decoder maps a
//! latent plus a one-hot speaker code back to mel-cepstra.

mod cycle;
mod loss;
mod model;
mod train;

pub use cycle::{augmentation_features, convert, cycle_forward, reparameterize, sample_pivot, CycleNoise, CycleOutputs, CycleStep};
pub use loss::{elbo_loss, kl_laplace, LossTerms, LossWeights};
pub use crate::nn::FeatureNorm;
pub use model::{CycleVae, ModelConfig, NetConfig, Posterior, SpeakerCode};
pub use train::{evaluate, sample_noise, train_step, EpochMetrics, TrainItem, TrainReport};
