use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{ensure, Error, Result};

/// Periodic Hann window.
pub fn hann_periodic(win_length: usize) -> Vec<f64> {
    (0..win_length)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win_length as f64).cos())
        .collect()
}

/// Maps an index of the reflection-padded signal back onto `0..len`.
pub(crate) fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * (n - 1) - j;
    }
    j as usize
}

pub fn stft_frames(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftSpec {
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
}

impl StftSpec {
    pub fn new(fft_size: usize, hop: usize, win_length: usize) -> Self {
        Self {
            fft_size,
            hop,
            win_length,
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub(crate) fn validate(&self, len: usize) -> Result<()> {
        ensure!(len > 0, Error::EmptyWaveform);
        ensure!(
            self.fft_size.is_power_of_two(),
            Error::InvalidArgument(format!("fft size {} is not a power of two", self.fft_size))
        );
        ensure!(
            self.win_length >= 1 && self.win_length <= self.fft_size,
            Error::InvalidArgument("window length must be in 1..=fft_size".into())
        );
        ensure!(
            self.hop >= 1 && self.hop <= self.win_length,
            Error::InvalidArgument(format!(
                "hop {} must be in 1..=win_length ({})",
                self.hop, self.win_length
            ))
        );
        ensure!(
            self.fft_size / 2 < len,
            Error::InvalidArgument(format!(
                "signal of {len} samples too short for reflection padding of {}",
                self.fft_size / 2
            ))
        );
        Ok(())
    }
}

/// One-sided complex spectrogram, frame-major.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectrogram {
    pub fn frame(&self, f: usize) -> &[Complex<f64>] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Complex STFT over raw samples: periodic Hann window of `win_length`
/// centered in `fft_size`, frames centered at `f * hop` on a
/// reflection-padded signal, `ceil(len / hop)` frames.
pub fn stft_samples(planner: &mut FftPlanner<f64>, x: &[f64], spec: StftSpec) -> Result<Spectrogram> {
    spec.validate(x.len())?;
    let n = spec.fft_size;
    let bins = spec.bins();
    let frames = stft_frames(x.len(), spec.hop);
    let win = hann_periodic(spec.win_length);
    let woff = (n - spec.win_length) / 2;
    let half = (n / 2) as isize;
    let fft = planner.plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        let start = (f * spec.hop) as isize - half;
        for (i, w) in win.iter().enumerate() {
            let j = start + (woff + i) as isize;
            buf[woff + i] = Complex::new(w * x[reflect(j, x.len())], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, data })
}

pub fn stft(wave: &Waveform, fft_size: usize, hop: usize, win_length: usize) -> Result<Spectrogram> {
    let mut planner = FftPlanner::new();
    stft_samples(&mut planner, wave.samples(), StftSpec::new(fft_size, hop, win_length))
}

/// Weighted overlap-add inverse of [`stft_samples`] producing `len` samples.
pub fn istft(spec_frames: &Spectrogram, spec: StftSpec, len: usize) -> Result<Vec<f64>> {
    ensure!(
        spec_frames.bins == spec.bins(),
        Error::Shape(format!("spectrogram has {} bins, expected {}", spec_frames.bins, spec.bins()))
    );
    let n = spec.fft_size;
    let half = n / 2;
    let win = hann_periodic(spec.win_length);
    let woff = (n - spec.win_length) / 2;
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    let padded_len = len + n;
    let mut out = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..spec_frames.frames {
        let frame = spec_frames.frame(f);
        buf[..frame.len()].copy_from_slice(frame);
        for k in 1..n - half {
            buf[n - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = f * spec.hop;
        for (i, w) in win.iter().enumerate() {
            let j = start + woff + i;
            if j < padded_len {
                out[j] += w * buf[woff + i].re / n as f64;
                norm[j] += w * w;
            }
        }
    }
    Ok((0..len)
        .map(|i| {
            let j = i + half;
            if norm[j] > 1e-11 {
                out[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect())
}
