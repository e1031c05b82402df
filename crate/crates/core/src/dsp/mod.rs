//! Signal analysis and feature mathematics.

pub mod analysis;
pub mod aperiodicity;
pub mod f0;
pub mod features;
pub mod mcep;
pub mod stft;
pub mod wav;

pub use analysis::{analyze, analyze_trimmed, AnalysisConfig};
pub use aperiodicity::code_aperiodicity;
pub use f0::{estimate_f0, interpolate_log_f0, PitchFrame};
pub use features::{
    mcd, transform_log_f0, trim_silence, AcousticFrameSequence, ExcitationFrame, LogF0Stats, EXCITATION_DIM,
};
pub use mcep::{mel_cepstrum_analysis, MelCepstrumAnalyzer};
pub use stft::{istft, stft, Spectrogram, StftSpec};
pub use wav::{read_wav, write_wav};

use crate::error::{ensure, Error, Result};

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        ensure!(sample_rate > 0, Error::InvalidArgument("sample rate must be > 0".into()));
        ensure!(!samples.is_empty(), Error::EmptyWaveform);
        ensure!(samples.iter().all(|s| s.is_finite()), Error::NonFinite("waveform".into()));
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
