//! Mel-cepstral analysis by resampling the log magnitude spectrum on the
//! frequency axis of a first-order all-pass warp.
//!
//! With warping coefficient `alpha`, warped frequency `b` corresponds to
//! linear frequency `w(b) = b - 2 atan(alpha sin b / (1 + alpha cos b))`
//! (the all-pass phase with `-alpha`). The mel-cepstrum is the real
//! cepstrum of `ln|S(w(b))|` sampled uniformly in `b`:
//!
//! `c_m = (1/pi) * integral_0^pi ln|S(w(b))| cos(m b) db`
//!
//! so `c_0` is the mean log magnitude and `alpha = 0` gives the plain real
//! cepstrum.

use crate::error::{ensure, Error, Result};

/// Magnitudes below this are clamped before taking the log.
pub const MAGNITUDE_FLOOR: f64 = 1e-10;

/// All-pass warp with coefficient `alpha`: linear frequency -> warped frequency.
pub fn warp_frequency(omega: f64, alpha: f64) -> f64 {
    omega + 2.0 * (alpha * omega.sin() / (1.0 - alpha * omega.cos())).atan()
}

/// Inverse warp: warped frequency -> linear frequency.
pub fn unwarp_frequency(beta: f64, alpha: f64) -> f64 {
    warp_frequency(beta, -alpha)
}

/// Precomputed analysis for a fixed spectrum size, warp, and order.
#[derive(Debug, Clone)]
pub struct MelCepstrumAnalyzer {
    bins: usize,
    order: usize,
    alpha: f64,
    /// For each warped grid point: (lower bin, interpolation weight of upper bin).
    taps: Vec<(usize, f64)>,
    /// `(order + 1) x (grid points)` quadrature weights.
    basis: Vec<f64>,
}

impl MelCepstrumAnalyzer {
    /// `bins` is the one-sided spectrum length (`fft_size / 2 + 1`).
    pub fn new(bins: usize, alpha: f64, order: usize) -> Result<Self> {
        ensure!(bins >= 2, Error::InvalidArgument("spectrum needs at least 2 bins".into()));
        ensure!(
            alpha.is_finite() && alpha.abs() < 1.0,
            Error::InvalidArgument(format!("warping coefficient {alpha} outside (-1, 1)"))
        );
        let half = bins - 1;
        let step = std::f64::consts::PI / half as f64;
        let taps = (0..=half)
            .map(|j| {
                let omega = unwarp_frequency(j as f64 * step, alpha);
                let pos = (omega / step).clamp(0.0, half as f64);
                let lo = (pos.floor() as usize).min(half - 1);
                (lo, pos - lo as f64)
            })
            .collect();
        // trapezoid rule on [0, pi] == DFT of the even extension of length 2*half
        let mut basis = Vec::with_capacity((order + 1) * (half + 1));
        for m in 0..=order {
            for j in 0..=half {
                let w = if j == 0 || j == half { 0.5 } else { 1.0 };
                let angle = std::f64::consts::PI * ((m * j) % (2 * half)) as f64 / half as f64;
                basis.push(w * angle.cos() / half as f64);
            }
        }
        Ok(Self {
            bins,
            order,
            alpha,
            taps,
            basis,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn analyze(&self, mag: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            mag.len() == self.bins,
            Error::Shape(format!("expected {} magnitude bins, got {}", self.bins, mag.len()))
        );
        ensure!(
            mag.iter().all(|m| m.is_finite()),
            Error::NonFinite("magnitude spectrum".into())
        );
        let log: Vec<f64> = mag.iter().map(|&m| m.max(MAGNITUDE_FLOOR).ln()).collect();
        let warped: Vec<f64> = self
            .taps
            .iter()
            .map(|&(lo, frac)| log[lo] + frac * (log[lo + 1] - log[lo]))
            .collect();
        let n = warped.len();
        Ok((0..=self.order)
            .map(|m| {
                self.basis[m * n..(m + 1) * n]
                    .iter()
                    .zip(&warped)
                    .map(|(b, l)| b * l)
                    .sum()
            })
            .collect())
    }
}

/// Mel-cepstrum of one magnitude frame: `order + 1` coefficients.
pub fn mel_cepstrum_analysis(mag_frame: &[f64], alpha: f64, order: usize) -> Result<Vec<f64>> {
    MelCepstrumAnalyzer::new(mag_frame.len(), alpha, order)?.analyze(mag_frame)
}

/// Log magnitude envelope `ln|S(w)|` implied by a mel-cepstrum, evaluated at
/// linear frequency `omega`.
pub fn mel_cepstrum_log_envelope(mcep: &[f64], alpha: f64, omega: f64) -> f64 {
    let beta = warp_frequency(omega, alpha);
    mcep.iter()
        .enumerate()
        .map(|(m, c)| if m == 0 { *c } else { 2.0 * c * (m as f64 * beta).cos() })
        .sum()
}
