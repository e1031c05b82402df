//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use cyclevae_pwg::nn::StftSpec;

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `integral q log(q / p)` with q = Laplace(mu, s), p = Laplace(0, 1), split
/// at the two kinks and truncated 40 scales out.
pub fn kl_quadrature(mu: f64, s: f64) -> f64 {
    let integrand = |z: f64| {
        let log_q = -(z - mu).abs() / s - (2.0 * s).ln();
        let log_p = -z.abs() - 2f64.ln();
        log_q.exp() * (log_q - log_p)
    };
    let (lo, hi) = (mu.min(0.0), mu.max(0.0));
    let (a, b) = (mu - 40.0 * s, mu + 40.0 * s);
    let n = 20_000;
    simpson(integrand, a.min(lo), lo, n) + simpson(integrand, lo, hi, n) + simpson(integrand, hi, b.max(hi), n)
}

/// Log magnitude of a two-pole resonator plus a one-pole tilt.
pub fn lowpass_log_mag(omega: f64) -> f64 {
    let one_pole = |r: f64, theta: f64| {
        let re = 1.0 - r * (omega - theta).cos();
        let im = r * (omega - theta).sin();
        -0.5 * (re * re + im * im).ln()
    };
    one_pole(0.9, 0.0) + one_pole(0.8, 0.6) + one_pole(0.8, -0.6)
}

/// Mel-cepstrum by dense numerical integration in linear frequency:
/// `c_m = (1/pi) int_0^pi ln|S(w)| cos(m beta(w)) beta'(w) dw` with
/// `beta(w) = w + 2 atan(a sin w / (1 - a cos w))`.
pub fn dense_warp_oracle(log_mag: impl Fn(f64) -> f64, alpha: f64, order: usize) -> Vec<f64> {
    let n = 400_000;
    let h = PI / n as f64;
    let beta = |w: f64| w + 2.0 * (alpha * w.sin() / (1.0 - alpha * w.cos())).atan();
    let dbeta = |w: f64| (1.0 - alpha * alpha) / (1.0 - 2.0 * alpha * w.cos() + alpha * alpha);
    let mut c = vec![0.0; order + 1];
    for i in 0..=n {
        let w = i as f64 * h;
        let weight = if i == 0 || i == n { 0.5 } else { 1.0 } * h / PI;
        let (l, b, db) = (log_mag(w), beta(w), dbeta(w));
        for (m, cm) in c.iter_mut().enumerate() {
            *cm += weight * l * (m as f64 * b).cos() * db;
        }
    }
    c
}

/// Mel-cepstral distortion written out term by term.
pub fn direct_mcd(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 1..a.len() {
        acc += (a[d] - b[d]).powi(2);
    }
    10.0 / 10f64.ln() * (2.0 * acc).sqrt()
}

/// Straightforward magnitude STFT: explicit reflection padding and a
/// per-bin DFT sum.
pub fn naive_magnitudes(x: &[f64], fft: usize, hop: usize, win: usize) -> Vec<Vec<f64>> {
    let half = fft / 2;
    let n = x.len() as isize;
    let mut padded = Vec::with_capacity(x.len() + fft);
    for i in -(half as isize)..n + half as isize {
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        padded.push(x[j as usize]);
    }
    let mut window = vec![0.0; fft];
    for i in 0..win {
        window[(fft - win) / 2 + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos();
    }
    let frames = x.len().div_ceil(hop);
    (0..frames)
        .map(|f| {
            (0..=half)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for m in 0..fft {
                        let v = padded[f * hop + m] * window[m];
                        let ang = -2.0 * PI * (k * m) as f64 / fft as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    (re * re + im * im).max(1e-14).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Per resolution `(spectral convergence, mean |log difference|)`.
pub fn naive_terms(w: &[f64], w_hat: &[f64], res: &[StftSpec]) -> Vec<(f64, f64)> {
    res.iter()
        .map(|r| {
            let a: Vec<f64> = naive_magnitudes(w, r.fft_size, r.hop, r.win_length).concat();
            let b: Vec<f64> = naive_magnitudes(w_hat, r.fft_size, r.hop, r.win_length).concat();
            let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            let den: f64 = a.iter().map(|x| x * x).sum();
            let log: f64 = a.iter().zip(&b).map(|(x, y)| (x.ln() - y.ln()).abs()).sum::<f64>() / a.len() as f64;
            (num.sqrt() / den.sqrt(), log)
        })
        .collect()
}

pub fn naive_loss(w: &[f64], w_hat: &[f64], res: &[StftSpec]) -> f64 {
    naive_terms(w, w_hat, res).iter().map(|(a, b)| a + b).sum::<f64>() / res.len() as f64
}
