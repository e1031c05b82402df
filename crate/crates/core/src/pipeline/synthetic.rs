//! Parallel synthetic corpus: formant-filtered pulse-train vowel sequences
//! rendered by speakers with distinct pitch and vocal-tract scale.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, SpeakerEntry};
use crate::dsp::{write_wav, Waveform};
use crate::error::{ensure, Error, Result};
use crate::nn::Rng as ChaRng;

/// Formant frequencies (Hz) of five vowels.
pub const VOWELS: [(char, [f64; 3]); 5] = [
    ('a', [730.0, 1090.0, 2440.0]),
    ('i', [270.0, 2290.0, 3010.0]),
    ('u', [300.0, 870.0, 2240.0]),
    ('e', [530.0, 1840.0, 2480.0]),
    ('o', [570.0, 840.0, 2410.0]),
];
const BANDWIDTHS: [f64; 3] = [80.0, 110.0, 160.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticVoice {
    pub id: String,
    /// Median F0 in Hz.
    pub f0: f64,
    /// Relative per-utterance F0 offsets, cycled over utterances.
    pub f0_offsets: Vec<f64>,
    /// Multiplier on every formant frequency.
    pub formant_scale: f64,
    pub f0_min: f64,
    pub f0_max: f64,
}

impl SyntheticVoice {
    /// F0 of utterance `k`.
    pub fn utterance_f0(&self, k: usize) -> f64 {
        self.f0 * (1.0 + self.f0_offsets[k % self.f0_offsets.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub sample_rate: u32,
    pub voices: Vec<SyntheticVoice>,
    pub train_per_speaker: usize,
    pub validation_per_speaker: usize,
    pub vowels_per_utterance: usize,
    pub vowel_secs: f64,
    pub transition_secs: f64,
    pub pad_secs: f64,
    /// Aspiration noise level relative to the pulse amplitude.
    pub noise_level: f64,
    /// Standard deviation of the background noise added after peak
    /// normalization, like a recording noise floor.
    pub floor_noise: f64,
    pub hop: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let offsets = vec![-0.04, -0.02, 0.0, 0.02, 0.04];
        Self {
            sample_rate: 24000,
            voices: vec![
                SyntheticVoice {
                    id: "spk_a".into(),
                    f0: 110.0,
                    f0_offsets: offsets.clone(),
                    formant_scale: 1.0,
                    f0_min: 70.0,
                    f0_max: 200.0,
                },
                SyntheticVoice {
                    id: "spk_b".into(),
                    f0: 210.0,
                    f0_offsets: offsets,
                    formant_scale: 1.18,
                    f0_min: 130.0,
                    f0_max: 380.0,
                },
            ],
            train_per_speaker: 10,
            validation_per_speaker: 2,
            vowels_per_utterance: 3,
            vowel_secs: 0.2,
            transition_secs: 0.05,
            pad_secs: 0.1,
            noise_level: 0.02,
            floor_noise: 3e-4,
            hop: 120,
            seed: 7,
        }
    }
}

/// Vowel indices spoken in utterance `k` (identical for every voice).
pub fn utterance_content(k: usize, vowels: usize) -> Vec<usize> {
    (0..vowels).map(|i| (k * 3 + i * (k % 4 + 1)) % VOWELS.len()).collect()
}

/// Second-order resonator with unit gain at DC.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, sr: f64) -> f64 {
        let r = (-PI * bw / sr).exp();
        let a1 = 2.0 * r * (2.0 * PI * freq / sr).cos();
        let a2 = -r * r;
        let gain = 1.0 - a1 - a2;
        let y = gain * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders utterance `k` for `voice`; the length is a multiple of `hop`.
pub fn render_utterance(spec: &SyntheticSpec, voice: &SyntheticVoice, k: usize, seed: u64) -> Result<Waveform> {
    let sr = spec.sample_rate as f64;
    let content = utterance_content(k, spec.vowels_per_utterance);
    let seg = (spec.vowel_secs * sr) as usize;
    let trans = ((spec.transition_secs * sr) as usize).min(seg);
    let pad = (spec.pad_secs * sr) as usize;
    let voiced = seg * content.len();
    let total = (2 * pad + voiced).div_ceil(spec.hop) * spec.hop;
    ensure!(voiced > 0, Error::InvalidArgument("utterance has no vowels".into()));
    let f0 = voice.utterance_f0(k);
    let mut rng = ChaRng::seed_from_u64(seed);

    // formant track with linear transitions at vowel boundaries
    let formants = |n: usize| -> [f64; 3] {
        let i = (n / seg).min(content.len() - 1);
        let cur = VOWELS[content[i]].1;
        let into = n - i * seg;
        if i + 1 < content.len() && into + trans > seg {
            let next = VOWELS[content[i + 1]].1;
            let a = (into + trans - seg) as f64 / trans as f64;
            std::array::from_fn(|j| cur[j] + a * (next[j] - cur[j]))
        } else {
            cur
        }
    };

    // fractional-position impulse train through a two-stage glottal lowpass
    let period = sr / f0;
    let mut pulses = vec![0.0; voiced + 1];
    let mut pos = rng.random_range(0.0..period);
    while pos < voiced as f64 {
        let n = pos.floor() as usize;
        let frac = pos - n as f64;
        pulses[n] += 1.0 - frac;
        pulses[n + 1] += frac;
        pos += period;
    }
    let (mut g1, mut g2) = (0.0, 0.0);
    let mut glottal: Vec<f64> = pulses[..voiced]
        .iter()
        .map(|&e| {
            g1 = 0.1 * e + 0.9 * g1;
            g2 = 0.1 * g1 + 0.9 * g2;
            g2
        })
        .collect();
    let mean = glottal.iter().sum::<f64>() / voiced as f64;
    let std = (glottal.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / voiced as f64).sqrt();
    for g in glottal.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *g += spec.noise_level * std * noise;
    }

    let mut x = vec![0.0; total];
    let mut res = [
        Resonator { y1: 0.0, y2: 0.0 },
        Resonator { y1: 0.0, y2: 0.0 },
        Resonator { y1: 0.0, y2: 0.0 },
    ];
    let ramp = (0.01 * sr) as usize;
    let mut prev = 0.0;
    for (n, &g) in glottal.iter().enumerate() {
        let f = formants(n);
        let mut s = g;
        for (j, r) in res.iter_mut().enumerate() {
            s = r.step(s, f[j] * voice.formant_scale, BANDWIDTHS[j] * voice.formant_scale, sr);
        }
        let env = if n < ramp {
            n as f64 / ramp as f64
        } else if voiced - n < ramp {
            (voiced - n) as f64 / ramp as f64
        } else {
            1.0
        };
        // lip radiation as a first difference
        x[pad + n] = (s - prev) * env;
        prev = s;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    for v in x.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *v += spec.floor_noise * noise;
    }
    Waveform::new(x, spec.sample_rate)
}

/// Silence threshold annotated for the synthetic voices. Their spectra are
/// steeply lowpass, so the mean log magnitude of the noise floor sits only
/// 25 to 30 dB under the loudest frame.
pub const POWER_THRESHOLD_DB: f64 = -20.0;

/// Writes every utterance as 16-bit WAV under `dir` plus `manifest.json`.
/// Returns the manifest.
pub fn write_corpus(spec: &SyntheticSpec, dir: &Path) -> Result<CorpusManifest> {
    ensure!(spec.voices.len() >= 2, Error::Config("need at least 2 voices".into()));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let per = spec.train_per_speaker + spec.validation_per_speaker;
    let mut speakers = Vec::new();
    for (v, voice) in spec.voices.iter().enumerate() {
        let sub = dir.join(&voice.id);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut train = vec![];
        let mut validation = vec![];
        for k in 0..per {
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add((v * 1000 + k) as u64);
            let wave = render_utterance(spec, voice, k, seed)?;
            let rel = format!("{}/utt_{k:03}.wav", voice.id);
            write_wav(dir.join(&rel), &wave)?;
            if k < spec.train_per_speaker {
                train.push(rel);
            } else {
                validation.push(rel);
            }
        }
        speakers.push(SpeakerEntry {
            id: voice.id.clone(),
            f0_min: voice.f0_min,
            f0_max: voice.f0_max,
            power_threshold_db: POWER_THRESHOLD_DB,
            train,
            validation,
        });
    }
    let manifest = CorpusManifest {
        sample_rate: spec.sample_rate,
        speakers,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
