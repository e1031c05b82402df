//! Waveform -> acoustic features.

use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::aperiodicity::code_aperiodicity;
use super::f0::{estimate_f0, hop_samples, interpolate_log_f0, PitchFrame};
use super::features::{trim_range, AcousticFrameSequence, ExcitationFrame};
use super::mcep::MelCepstrumAnalyzer;
use super::Waveform;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    /// Mel-cepstrum dimension including coefficient 0.
    pub mcep_dim: usize,
    pub alpha: f64,
    pub power_threshold_db: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24000,
            frame_shift_ms: 5.0,
            fft_size: 2048,
            mcep_dim: 49,
            alpha: 0.466,
            power_threshold_db: -40.0,
        }
    }
}

impl AnalysisConfig {
    pub fn hop(&self) -> usize {
        hop_samples(self.sample_rate, self.frame_shift_ms)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sample_rate > 0 && self.hop() >= 1,
            Error::Config("sample rate and frame shift must give a hop of at least one sample".into())
        );
        ensure!(
            self.fft_size.is_power_of_two() && self.fft_size >= 64,
            Error::Config(format!("fft_size {} must be a power of two >= 64", self.fft_size))
        );
        ensure!(self.mcep_dim >= 2, Error::Config("mcep_dim must be >= 2".into()));
        ensure!(
            self.alpha.abs() < 1.0,
            Error::Config(format!("alpha {} outside (-1, 1)", self.alpha))
        );
        Ok(())
    }
}

/// F0 used to size the envelope window where no pitch is available.
const DEFAULT_ENVELOPE_F0: f64 = 500.0;

/// Pitch-adaptive spectral envelope: a Hann window of three pitch periods,
/// power normalized by window energy, then rectangular smoothing over one
/// harmonic spacing to remove harmonic ripple. Returns one-sided magnitudes.
pub fn spectral_envelope(wave: &Waveform, f0: &[f64], hop: usize, fft_size: usize) -> Vec<Vec<f64>> {
    let sr = wave.sample_rate() as f64;
    let x = wave.samples();
    let bins = fft_size / 2 + 1;
    let bin_hz = sr / fft_size as f64;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let mut power = vec![0.0; bins];
    let mut prefix = vec![0.0; 2 * bins + 1];
    f0.iter()
        .enumerate()
        .map(|(t, &f)| {
            let f = if f > 0.0 { f } else { DEFAULT_ENVELOPE_F0 };
            let len = ((3.0 * sr / f).round() as usize).clamp(4, fft_size);
            let center = (t * hop) as isize;
            let half = (len / 2) as isize;
            buf.fill(Complex::new(0.0, 0.0));
            let mut wsum = 0.0;
            for i in 0..len {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / len as f64).cos();
                wsum += w * w;
                let j = center - half + i as isize;
                if j >= 0 && (j as usize) < x.len() {
                    buf[i] = Complex::new(w * x[j as usize], 0.0);
                }
            }
            fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr() / wsum;
            }
            // mirror around DC and Nyquist so the window never leaves the spectrum
            let width = ((0.5 * f / bin_hz).round() as usize).min(bins - 1);
            let ext = |k: isize| -> f64 {
                let n = bins as isize - 1;
                let k = if k < 0 { -k } else if k > n { 2 * n - k } else { k };
                power[k as usize]
            };
            let lo = -(width as isize);
            let total = bins + 2 * width;
            prefix[0] = 0.0;
            for i in 0..total {
                prefix[i + 1] = prefix[i] + ext(lo + i as isize);
            }
            let span = (2 * width + 1) as f64;
            (0..bins)
                .map(|k| ((prefix[k + 2 * width + 1] - prefix[k]) / span).sqrt())
                .collect()
        })
        .collect()
}

/// Raw per-frame analysis before trimming and F0 interpolation.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    pub mcep: Vec<f64>,
    pub pitch: Vec<PitchFrame>,
    pub coded_ap: Vec<[f64; 3]>,
    pub mcep_dim: usize,
    pub frame_shift_ms: f64,
}

impl FrameAnalysis {
    pub fn frames(&self) -> usize {
        self.pitch.len()
    }
}

pub fn analyze_frames(wave: &Waveform, cfg: &AnalysisConfig, f0_min: f64, f0_max: f64) -> Result<FrameAnalysis> {
    cfg.validate()?;
    ensure!(
        wave.sample_rate() == cfg.sample_rate,
        Error::UnsupportedWav(format!(
            "sample rate {} Hz, expected {} Hz (resample before analysis)",
            wave.sample_rate(),
            cfg.sample_rate
        ))
    );
    let hop = cfg.hop();
    let pitch = estimate_f0(wave, f0_min, f0_max, cfg.frame_shift_ms)?;
    let f0: Vec<f64> = pitch.iter().map(|p| p.f0).collect();
    let envelope_f0: Vec<f64> = match interpolate_log_f0(&f0, &pitch.iter().map(|p| p.voiced).collect::<Vec<_>>()) {
        Ok(track) => track.iter().map(|l| l.exp()).collect(),
        Err(_) => vec![DEFAULT_ENVELOPE_F0; f0.len()],
    };
    let analyzer = MelCepstrumAnalyzer::new(cfg.fft_size / 2 + 1, cfg.alpha, cfg.mcep_dim - 1)?;
    let mut mcep = Vec::with_capacity(pitch.len() * cfg.mcep_dim);
    for mag in spectral_envelope(wave, &envelope_f0, hop, cfg.fft_size) {
        mcep.extend(analyzer.analyze(&mag)?);
    }
    let coded_ap = code_aperiodicity(wave, &f0, hop);
    Ok(FrameAnalysis {
        mcep,
        pitch,
        coded_ap,
        mcep_dim: cfg.mcep_dim,
        frame_shift_ms: cfg.frame_shift_ms,
    })
}

fn assemble(raw: &FrameAnalysis, range: Range<usize>) -> Result<AcousticFrameSequence> {
    let pitch = &raw.pitch[range.clone()];
    let f0: Vec<f64> = pitch.iter().map(|p| p.f0).collect();
    let voiced: Vec<bool> = pitch.iter().map(|p| p.voiced).collect();
    let log_f0 = interpolate_log_f0(&f0, &voiced)?;
    let excitation = range
        .clone()
        .zip(log_f0)
        .map(|(t, log_f0)| ExcitationFrame {
            log_f0,
            voiced: raw.pitch[t].voiced,
            coded_ap: raw.coded_ap[t],
        })
        .collect();
    let d = raw.mcep_dim;
    AcousticFrameSequence::new(
        d,
        raw.mcep[range.start * d..range.end * d].to_vec(),
        excitation,
        raw.frame_shift_ms,
    )
}

/// Full-length feature sequence, `ceil(len / hop)` frames.
pub fn analyze(wave: &Waveform, cfg: &AnalysisConfig, f0_min: f64, f0_max: f64) -> Result<AcousticFrameSequence> {
    let raw = analyze_frames(wave, cfg, f0_min, f0_max)?;
    assemble(&raw, 0..raw.frames())
}

/// Features with leading and trailing silence removed, plus the kept frame
/// range within the untrimmed analysis.
pub fn analyze_trimmed(
    wave: &Waveform,
    cfg: &AnalysisConfig,
    f0_min: f64,
    f0_max: f64,
    power_threshold_db: f64,
) -> Result<(AcousticFrameSequence, Range<usize>)> {
    let raw = analyze_frames(wave, cfg, f0_min, f0_max)?;
    // trimming looks only at coefficient 0, so a placeholder excitation suffices
    let probe = AcousticFrameSequence::new(
        raw.mcep_dim,
        raw.mcep.clone(),
        vec![
            ExcitationFrame {
                log_f0: 0.0,
                voiced: false,
                coded_ap: [1.0; 3],
            };
            raw.frames()
        ],
        raw.frame_shift_ms,
    )?;
    let range = trim_range(&probe, power_threshold_db)?;
    Ok((assemble(&raw, range.clone())?, range))
}
