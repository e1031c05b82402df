//! End-to-end conversion of one utterance.

use std::path::Path;

use rand::SeedableRng;

use super::train_vae::{load_vae, LoadedVae};
use super::train_vocoder::{load_vocoder, LoadedVocoder};
use crate::cyclevae::{convert, SpeakerCode};
use crate::dsp::{analyze_trimmed, read_wav, write_wav, Waveform};
use crate::error::{ensure, Error, Result};
use crate::nn::{Rng, Tensor};
use crate::pwg::synthesize;

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub wave: Waveform,
    /// Analysis frames of the input, `ceil(len / hop)`.
    pub frames: usize,
    /// Frames that were converted; the rest of the output is silence.
    pub kept: std::ops::Range<usize>,
}

/// Converts `wave` from `source` to `target`: trimmed analysis, spectral
/// conversion with mapped log-F0, vocoding, and zero-filled trimmed edges
/// so the output spans exactly the input's frames.
pub fn convert_waveform<R: rand::Rng + ?Sized>(
    wave: &Waveform,
    source: &str,
    target: &str,
    vae: &LoadedVae,
    vocoder: &LoadedVocoder,
    rng: &mut R,
) -> Result<Conversion> {
    let meta = &vae.meta;
    let (si, ti) = (meta.speaker_index(source)?, meta.speaker_index(target)?);
    let cfg = &meta.analysis;
    let hop = cfg.hop();
    ensure!(
        vocoder.generator.config.hop == hop,
        Error::CheckpointMismatch(format!(
            "vocoder hop {} differs from analysis hop {hop}",
            vocoder.generator.config.hop
        ))
    );
    let src = &meta.speakers[si];
    let tgt = &meta.speakers[ti];
    let (seq, kept) = analyze_trimmed(wave, cfg, src.f0_min, src.f0_max, src.power_threshold_db)?;
    let code = SpeakerCode::new(ti, meta.speakers.len())?;
    let converted = convert(&vae.model, &vae.store, &seq, code, &src.log_f0, &tgt.log_f0)?;
    let cond = Tensor::matrix(converted.frames(), converted.feature_dim(), converted.to_matrix())?;
    let voiced = synthesize(&vocoder.generator, &vocoder.store, &cond, cfg.sample_rate, rng)?;
    let frames = wave.len().div_ceil(hop);
    let mut samples = vec![0.0; frames * hop];
    samples[kept.start * hop..kept.end * hop].copy_from_slice(voiced.samples());
    Ok(Conversion {
        wave: Waveform::new(samples, cfg.sample_rate)?,
        frames,
        kept,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionOutcome {
    pub frames: usize,
    pub samples: usize,
    /// Samples outside `[-1, 1]` before PCM encoding.
    pub clipped: usize,
}

/// File-level conversion; the output is 16-bit PCM at the analysis rate.
pub fn convert_utterance(
    wav: &Path,
    source: &str,
    target: &str,
    vae_checkpoint: &Path,
    vocoder_checkpoint: &Path,
    out: &Path,
    seed: u64,
) -> Result<ConversionOutcome> {
    let vae = load_vae(vae_checkpoint)?;
    let vocoder = load_vocoder(vocoder_checkpoint)?;
    // validate speakers before touching audio
    vae.meta.speaker_index(source)?;
    vae.meta.speaker_index(target)?;
    let wave = read_wav(wav)?;
    ensure!(
        wave.sample_rate() == vae.meta.analysis.sample_rate,
        Error::UnsupportedWav(format!(
            "{} Hz input, models expect {} Hz",
            wave.sample_rate(),
            vae.meta.analysis.sample_rate
        ))
    );
    let mut rng = Rng::seed_from_u64(seed);
    let c = convert_waveform(&wave, source, target, &vae, &vocoder, &mut rng)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let clipped = write_wav(out, &c.wave)?;
    Ok(ConversionOutcome {
        frames: c.frames,
        samples: c.wave.len(),
        clipped,
    })
}
