use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::StftSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub residual_channels: usize,
    /// Gate pre-activation width; split in halves for tanh and sigmoid.
    pub gate_channels: usize,
    pub skip_channels: usize,
    pub layers: usize,
    /// Dilations run `1, 2, 4, ...` and restart every `layers / stacks` layers.
    pub stacks: usize,
    pub kernel_width: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            residual_channels: 16,
            gate_channels: 32,
            skip_channels: 16,
            layers: 10,
            stacks: 2,
            kernel_width: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn dilations(&self) -> Vec<usize> {
        let per = (self.layers / self.stacks.max(1)).max(1);
        (0..self.layers).map(|l| 1 << (l % per)).collect()
    }

    /// Samples on each side of an output that influence it.
    pub fn half_receptive_field(&self) -> usize {
        self.dilations().iter().map(|d| d * (self.kernel_width - 1).div_ceil(2)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub layers: usize,
    pub kernel_width: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            layers: 6,
            kernel_width: 3,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    /// First and last layers are undilated; the middle ones use `1, 2, 4, ...`.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.layers)
            .map(|l| if l == 0 || l + 1 == self.layers { 1 } else { 1 << (l - 1) })
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.dilations().iter().map(|d| d * (self.kernel_width - 1)).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderConfig {
    /// Conditioning channels per frame (mel-cepstrum plus excitation).
    pub cond_dim: usize,
    /// Waveform samples per conditioning frame.
    pub hop: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub resolutions: Vec<StftSpec>,
    pub lambda_adv: f64,
    pub pretrain_steps: u64,
    pub adversarial_steps: u64,
    /// Frames per random training crop.
    pub segment_frames: usize,
    pub batch_size: usize,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            cond_dim: 54,
            hop: 120,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            resolutions: vec![
                StftSpec::new(512, 60, 240),
                StftSpec::new(1024, 120, 600),
                StftSpec::new(2048, 240, 1200),
            ],
            lambda_adv: 4.0,
            pretrain_steps: 2000,
            adversarial_steps: 4000,
            segment_frames: 40,
            batch_size: 1,
            generator_lr: 1e-4,
            discriminator_lr: 5e-5,
        }
    }
}

/// Training phase selected by the step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// STFT losses only; the discriminator is untouched.
    Pretrain,
    /// One discriminator update followed by one generator update.
    Adversarial,
}

impl VocoderConfig {
    pub fn stage(&self, step_index: u64) -> Stage {
        if step_index < self.pretrain_steps {
            Stage::Pretrain
        } else {
            Stage::Adversarial
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.pretrain_steps + self.adversarial_steps
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        ensure!(self.hop >= 1, Error::Config("hop must be >= 1".into()));
        ensure!(self.cond_dim >= 1, Error::Config("cond_dim must be >= 1".into()));
        ensure!(
            g.layers >= 1 && g.stacks >= 1 && g.kernel_width >= 1 && g.residual_channels >= 1 && g.skip_channels >= 1,
            Error::Config("generator sizes must be >= 1".into())
        );
        ensure!(
            g.gate_channels >= 2 && g.gate_channels % 2 == 0,
            Error::Config("gate_channels must be even and >= 2".into())
        );
        let d = &self.discriminator;
        ensure!(
            d.layers >= 2 && d.channels >= 1 && d.kernel_width >= 1,
            Error::Config("discriminator needs >= 2 layers".into())
        );
        ensure!(!self.resolutions.is_empty(), Error::Config("need at least one STFT resolution".into()));
        for r in &self.resolutions {
            ensure!(
                r.fft_size.is_power_of_two() && r.win_length <= r.fft_size && r.hop >= 1 && r.hop <= r.win_length,
                Error::Config(format!("invalid STFT resolution {r:?}"))
            );
        }
        ensure!(self.segment_frames >= 1, Error::Config("segment_frames must be >= 1".into()));
        ensure!(self.batch_size >= 1, Error::Config("batch_size must be >= 1".into()));
        Ok(())
    }
}
