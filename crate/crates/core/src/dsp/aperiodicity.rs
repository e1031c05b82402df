//! Three-band coded aperiodicity from harmonic-peak vs. inter-harmonic
//! energy.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;

/// Band edges in Hz.
pub const AP_BANDS: [(f64, f64); 3] = [(0.0, 3000.0), (3000.0, 7500.0), (7500.0, 12000.0)];
/// A band whose harmonic energy is below this fraction of the frame energy
/// counts as degenerate.
const DEGENERATE_RATIO: f64 = 1e-8;

/// Per-frame coded aperiodicity for frames centered at `t * hop`.
///
/// For a frame with F0 `f`, a Hann window spanning four periods is applied;
/// its main lobe ends exactly halfway between harmonics. Per band, the
/// aperiodicity is the energy at the inter-harmonic midpoints `(k + 1/2) f`
/// over the energy at the harmonics `k f`, clamped to `[0, 1]`. Frames with
/// `f = 0` and degenerate bands yield `1.0`.
pub fn code_aperiodicity(wave: &Waveform, f0: &[f64], hop: usize) -> Vec<[f64; 3]> {
    let sr = wave.sample_rate() as f64;
    let x = wave.samples();
    let nyquist = sr / 2.0;
    let mut planner = FftPlanner::<f64>::new();
    let mut out = Vec::with_capacity(f0.len());
    for (t, &f) in f0.iter().enumerate() {
        if f <= 0.0 || !f.is_finite() {
            out.push([1.0; 3]);
            continue;
        }
        let win_len = ((4.0 * sr / f).round() as usize).max(8);
        let n_fft = (4 * win_len).next_power_of_two();
        let fft = planner.plan_fft_forward(n_fft);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let center = (t * hop) as isize;
        let half = (win_len / 2) as isize;
        for i in 0..win_len {
            let j = center - half + i as isize;
            if j >= 0 && (j as usize) < x.len() {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win_len as f64).cos();
                buf[i] = Complex::new(w * x[j as usize], 0.0);
            }
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        let bin_hz = sr / n_fft as f64;
        let at = |hz: f64| power[((hz / bin_hz).round() as usize).min(n_fft / 2)];
        let mut coded = [1.0; 3];
        for (b, &(lo, hi)) in AP_BANDS.iter().enumerate() {
            let hi = hi.min(nyquist);
            let (mut peak, mut valley) = (0.0, 0.0);
            let mut k = (lo / f).ceil().max(1.0);
            while k * f < hi && (k + 0.5) * f < nyquist {
                peak += at(k * f);
                valley += at((k + 0.5) * f);
                k += 1.0;
            }
            if total > 0.0 && peak > DEGENERATE_RATIO * total {
                coded[b] = (valley / peak).clamp(0.0, 1.0);
            }
        }
        out.push(coded);
    }
    out
}
