//! Non-autoregressive GAN vocoder: a noise-driven dilated-convolution
//! generator conditioned on acoustic frames, a convolutional
//! discriminator, and multi-resolution STFT losses.

mod config;
mod discriminator;
mod generator;
mod loss;
mod train;

pub use config::{DiscriminatorConfig, GeneratorConfig, Stage, VocoderConfig};
pub use discriminator::Discriminator;
pub use generator::{synthesize, Generator};
pub use loss::{
    discriminator_loss, generator_loss, mr_stft_loss, mr_stft_loss_tape, AugmentedBatch, GeneratorTerms, Provenance,
};
pub use train::{vocoder_train_step, VocoderReport, VocoderState};
