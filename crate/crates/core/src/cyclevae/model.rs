use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LossWeights;
use crate::dsp::EXCITATION_DIM;
use crate::error::{ensure, Error, Result};
use crate::nn::{FeatureNorm, ParameterStore, RecurrentBlock, RecurrentConfig, Tape, Tensor, Var};

/// Index into the speaker set, with the set size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpeakerCode {
    index: usize,
    count: usize,
}

impl SpeakerCode {
    pub fn new(index: usize, count: usize) -> Result<Self> {
        ensure!(
            index < count,
            Error::InvalidArgument(format!("speaker index {index} out of range for {count} speakers"))
        );
        Ok(Self { index, count })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.count];
        v[self.index] = 1.0;
        v
    }
}

/// Sizes of one recurrent network (encoder or decoder).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub conv_channels: usize,
    /// Receptive field of the input convolution in frames.
    pub conv_width: usize,
    pub hidden: usize,
    pub feedback: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            conv_channels: 64,
            conv_width: 7,
            hidden: 128,
            feedback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mcep_dim: usize,
    pub latent_dim: usize,
    pub speakers: usize,
    pub n_cycles: usize,
    pub encoder: NetConfig,
    pub decoder: NetConfig,
    /// Truncated backpropagation length in frames (`None`: full sequence).
    pub truncate: Option<usize>,
    pub weights: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mcep_dim: 49,
            latent_dim: 32,
            speakers: 2,
            n_cycles: 2,
            encoder: NetConfig::default(),
            decoder: NetConfig::default(),
            truncate: None,
            weights: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_cycles >= 1, Error::Config("n_cycles must be >= 1".into()));
        ensure!(self.speakers >= 2, Error::Config("need at least 2 speakers".into()));
        ensure!(self.mcep_dim >= 2, Error::Config("mcep_dim must be >= 2".into()));
        ensure!(self.latent_dim >= 1, Error::Config("latent_dim must be >= 1".into()));
        for (name, net) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            ensure!(
                net.conv_channels >= 1 && net.conv_width >= 1 && net.hidden >= 1,
                Error::Config(format!("{name} sizes must be >= 1"))
            );
        }
        Ok(())
    }

    /// Encoder input width: mel-cepstrum plus excitation.
    pub fn feature_dim(&self) -> usize {
        self.mcep_dim + EXCITATION_DIM
    }

    fn encoder_block(&self) -> RecurrentConfig {
        RecurrentConfig {
            in_dim: self.feature_dim(),
            conv_channels: self.encoder.conv_channels,
            conv_width: self.encoder.conv_width,
            hidden: self.encoder.hidden,
            out_dim: 2 * self.latent_dim + self.speakers,
            feedback: self.encoder.feedback,
            truncate: self.truncate,
        }
    }

    fn decoder_block(&self) -> RecurrentConfig {
        RecurrentConfig {
            in_dim: self.latent_dim + self.speakers,
            conv_channels: self.decoder.conv_channels,
            conv_width: self.decoder.conv_width,
            hidden: self.decoder.hidden,
            out_dim: self.mcep_dim,
            feedback: self.decoder.feedback,
            truncate: self.truncate,
        }
    }
}

/// Per-frame latent posterior: location, log scale, and speaker logits
/// (each `T x dim` on the tape).
#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mu: Var,
    pub log_scale: Var,
    pub logits: Var,
}

/// Encoder, decoder and the feature normalization they share.
#[derive(Debug, Clone)]
pub struct CycleVae {
    pub config: ModelConfig,
    pub encoder: RecurrentBlock,
    pub decoder: RecurrentBlock,
    /// Normalization of encoder inputs; its first `mcep_dim` channels also
    /// de-normalize decoder outputs.
    pub norm: FeatureNorm,
}

impl CycleVae {
    /// Registers encoder and decoder parameters in `store`.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let encoder = RecurrentBlock::new(store, "encoder", config.encoder_block(), rng)?;
        let decoder = RecurrentBlock::new(store, "decoder", config.decoder_block(), rng)?;
        let norm = FeatureNorm::identity(config.feature_dim());
        Ok(Self {
            config,
            encoder,
            decoder,
            norm,
        })
    }

    pub fn set_norm(&mut self, norm: FeatureNorm) -> Result<()> {
        ensure!(
            norm.dim() == self.config.feature_dim(),
            Error::Shape(format!(
                "normalization has {} channels, model expects {}",
                norm.dim(),
                self.config.feature_dim()
            ))
        );
        self.norm = norm;
        Ok(())
    }

    /// Encodes `T x (mcep_dim + 5)` acoustic features.
    pub fn encode(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Posterior> {
        let cfg = &self.config;
        ensure!(
            tape.value(x).cols() == cfg.feature_dim(),
            Error::Shape(format!(
                "encoder expects {} feature channels, got {}",
                cfg.feature_dim(),
                tape.value(x).cols()
            ))
        );
        let xn = self.norm.normalize(tape, x)?;
        let out = self.encoder.forward(tape, store, xn)?;
        let dz = cfg.latent_dim;
        Ok(Posterior {
            mu: tape.slice_cols(out, 0, dz)?,
            log_scale: tape.slice_cols(out, dz, 2 * dz)?,
            logits: tape.slice_cols(out, 2 * dz, 2 * dz + cfg.speakers)?,
        })
    }

    /// Decodes `T x latent_dim` latents under speaker `code` into mel-cepstra.
    pub fn decode(&self, tape: &mut Tape, store: &ParameterStore, z: Var, code: SpeakerCode) -> Result<Var> {
        let cfg = &self.config;
        ensure!(
            code.count() == cfg.speakers,
            Error::InvalidArgument(format!(
                "speaker code for {} speakers, model has {}",
                code.count(),
                cfg.speakers
            ))
        );
        ensure!(
            tape.value(z).cols() == cfg.latent_dim,
            Error::Shape(format!("decoder expects {} latent dims, got {}", cfg.latent_dim, tape.value(z).cols()))
        );
        let frames = tape.value(z).rows();
        let one_hot = code.one_hot();
        let codes = Tensor::matrix(frames, cfg.speakers, one_hot.repeat(frames))?;
        let codes = tape.constant(codes);
        let input = tape.concat_cols(&[z, codes])?;
        let out = self.decoder.forward(tape, store, input)?;
        self.norm.head(cfg.mcep_dim).denormalize(tape, out)
    }
}
