//! Normalized-autocorrelation pitch tracking.

use super::Waveform;
use crate::error::{ensure, Error, Result};

/// Minimum normalized correlation at the chosen lag for a voiced decision.
pub const CLARITY_THRESHOLD: f64 = 0.45;
/// First local maximum within this fraction of the best peak wins, which
/// suppresses octave-down errors.
const PEAK_PICK_RATIO: f64 = 0.9;
/// Mean-square level below which a frame is treated as silent.
const SILENCE_POWER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchFrame {
    /// Hz, or 0 when unvoiced.
    pub f0: f64,
    pub voiced: bool,
    /// Normalized correlation at the selected lag.
    pub clarity: f64,
}

pub fn hop_samples(sample_rate: u32, frame_shift_ms: f64) -> usize {
    (sample_rate as f64 * frame_shift_ms / 1000.0).round() as usize
}

/// Per-frame F0 for frames centered at `t * hop`, `t = 0..ceil(len / hop)`.
///
/// Each frame compares `W = ceil(sr / f0_min)` samples before the center
/// with the same span shifted by every lag in `[sr / f0_max, sr / f0_min]`.
/// Frames whose `2 W` analysis span leaves the signal are unvoiced.
pub fn estimate_f0(wave: &Waveform, f0_min: f64, f0_max: f64, frame_shift_ms: f64) -> Result<Vec<PitchFrame>> {
    let sr = wave.sample_rate() as f64;
    ensure!(
        f0_min > 0.0 && f0_min < f0_max && f0_max < sr / 4.0,
        Error::InvalidArgument(format!(
            "F0 range [{f0_min}, {f0_max}] must satisfy 0 < min < max < sr/4"
        ))
    );
    let hop = hop_samples(wave.sample_rate(), frame_shift_ms);
    ensure!(hop >= 1, Error::InvalidArgument("frame shift shorter than one sample".into()));
    let x = wave.samples();
    let min_lag = ((sr / f0_max).floor() as usize).max(2);
    let max_lag = (sr / f0_min).ceil() as usize;
    let w = max_lag;
    let frames = x.len().div_ceil(hop);

    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v * v);
    }
    let energy = |s: usize| prefix[s + w] - prefix[s];

    let unvoiced = PitchFrame {
        f0: 0.0,
        voiced: false,
        clarity: 0.0,
    };
    let mut out = Vec::with_capacity(frames);
    let mut corr = vec![0.0; max_lag + 2];
    for t in 0..frames {
        let center = t * hop;
        if center < w || center + w + 1 > x.len() {
            out.push(unvoiced);
            continue;
        }
        let start = center - w;
        let e0 = energy(start);
        if e0 / (w as f64) < SILENCE_POWER {
            out.push(unvoiced);
            continue;
        }
        let lo = min_lag - 1;
        let hi = (max_lag + 1).min(x.len() - w - start);
        let a = &x[start..start + w];
        for lag in lo..=hi {
            let b = &x[start + lag..start + lag + w];
            let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let den = (e0 * energy(start + lag)).sqrt();
            corr[lag] = if den > 0.0 { num / den } else { 0.0 };
        }
        let peaks: Vec<usize> = (min_lag..=max_lag.min(hi - 1))
            .filter(|&l| corr[l] > corr[l - 1] && corr[l] >= corr[l + 1])
            .collect();
        let Some(best) = peaks.iter().map(|&l| corr[l]).reduce(f64::max) else {
            out.push(unvoiced);
            continue;
        };
        if !(best >= CLARITY_THRESHOLD) {
            out.push(PitchFrame {
                clarity: best.max(0.0),
                ..unvoiced
            });
            continue;
        }
        let lag = *peaks
            .iter()
            .find(|&&l| corr[l] >= PEAK_PICK_RATIO * best)
            .expect("best peak qualifies");
        let clarity = corr[lag];
        if clarity < CLARITY_THRESHOLD {
            out.push(PitchFrame { clarity, ..unvoiced });
            continue;
        }
        let (ym, y0, yp) = (corr[lag - 1], corr[lag], corr[lag + 1]);
        let denom = ym - 2.0 * y0 + yp;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        out.push(PitchFrame {
            f0: sr / (lag as f64 + shift),
            voiced: true,
            clarity,
        });
    }
    Ok(out)
}

/// Continuous log-F0 track: log F0 on voiced frames, linear interpolation
/// (in log domain) across unvoiced gaps, and edge hold outside the first
/// and last voiced frames.
pub fn interpolate_log_f0(f0: &[f64], voiced: &[bool]) -> Result<Vec<f64>> {
    ensure!(
        f0.len() == voiced.len(),
        Error::Shape(format!("{} F0 values vs {} voicing flags", f0.len(), voiced.len()))
    );
    let idx: Vec<usize> = (0..f0.len()).filter(|&i| voiced[i] && f0[i] > 0.0).collect();
    ensure!(!idx.is_empty(), Error::UnvoicedUtterance);
    let mut out = vec![0.0; f0.len()];
    let first = idx[0];
    let last = *idx.last().unwrap();
    for v in out.iter_mut().take(first + 1) {
        *v = f0[first].ln();
    }
    for v in out.iter_mut().skip(last) {
        *v = f0[last].ln();
    }
    for pair in idx.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (la, lb) = (f0[a].ln(), f0[b].ln());
        for (i, v) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            let frac = (i - a) as f64 / (b - a) as f64;
            *v = la + frac * (lb - la);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sine(freq: f64, secs: f64) -> Waveform {
        let sr = 24000;
        let n = (sr as f64 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap()
    }

    #[test]
    fn sine_200hz() {
        let frames = estimate_f0(&sine(200.0, 0.5), 70.0, 400.0, 5.0).unwrap();
        let interior = &frames[5..frames.len() - 5];
        assert!(interior.iter().all(|f| f.voiced));
        assert!(interior.iter().all(|f| (f.f0 - 200.0).abs() <= 2.0), "{:?}", interior[0]);
    }

    #[test]
    fn white_noise_mostly_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let w = Waveform::new((0..24000).map(|_| rng.random_range(-0.5..0.5)).collect(), 24000).unwrap();
        let frames = estimate_f0(&w, 70.0, 400.0, 5.0).unwrap();
        let rate = frames.iter().filter(|f| f.voiced).count() as f64 / frames.len() as f64;
        assert!(rate < 0.2, "{rate}");
    }

    #[test]
    fn silence_unvoiced() {
        let w = Waveform::new(vec![0.0; 12000], 24000).unwrap();
        let frames = estimate_f0(&w, 70.0, 400.0, 5.0).unwrap();
        assert!(frames.iter().all(|f| !f.voiced && f.f0 == 0.0));
    }

    #[test]
    fn bad_range_rejected() {
        assert!(estimate_f0(&sine(100.0, 0.1), 400.0, 70.0, 5.0).is_err());
        assert!(estimate_f0(&sine(100.0, 0.1), 70.0, 7000.0, 5.0).is_err());
    }

    #[test]
    fn interpolation_cases() {
        let all = interpolate_log_f0(&[200.0; 4], &[true; 4]).unwrap();
        assert!(all.iter().all(|v| (v - 200f64.ln()).abs() < 1e-15));

        let f0 = [100.0, 0.0, 0.0, 0.0, 200.0];
        let uv = [true, false, false, false, true];
        let t = interpolate_log_f0(&f0, &uv).unwrap();
        for (i, v) in t.iter().enumerate() {
            // geometric interpolation in Hz
            let hz = 100.0 * 2f64.powf(i as f64 / 4.0);
            assert!((v - hz.ln()).abs() < 1e-12);
        }

        let single = interpolate_log_f0(&[0.0, 150.0, 0.0], &[false, true, false]).unwrap();
        assert!(single.iter().all(|v| (v - 150f64.ln()).abs() < 1e-15));

        assert!(matches!(
            interpolate_log_f0(&[0.0; 3], &[false; 3]),
            Err(Error::UnvoicedUtterance)
        ));
    }
}
