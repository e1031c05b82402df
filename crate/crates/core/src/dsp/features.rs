use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Source excitation for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationFrame {
    /// Natural log of F0 in Hz, interpolated through unvoiced frames.
    pub log_f0: f64,
    pub voiced: bool,
    pub coded_ap: [f64; 3],
}

/// Width of the excitation block appended to the spectral features.
pub const EXCITATION_DIM: usize = 5;

impl ExcitationFrame {
    pub fn to_array(&self) -> [f64; EXCITATION_DIM] {
        [
            self.log_f0,
            if self.voiced { 1.0 } else { 0.0 },
            self.coded_ap[0],
            self.coded_ap[1],
            self.coded_ap[2],
        ]
    }
}

/// Mel-cepstra plus excitation for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFrameSequence {
    pub mcep_dim: usize,
    /// Frame-major `frames x mcep_dim`.
    pub mcep: Vec<f64>,
    pub excitation: Vec<ExcitationFrame>,
    pub frame_shift_ms: f64,
}

impl AcousticFrameSequence {
    pub fn new(mcep_dim: usize, mcep: Vec<f64>, excitation: Vec<ExcitationFrame>, frame_shift_ms: f64) -> Result<Self> {
        ensure!(mcep_dim >= 2, Error::InvalidArgument("mel-cepstrum needs >= 2 coefficients".into()));
        ensure!(
            mcep.len() == mcep_dim * excitation.len(),
            Error::Shape(format!(
                "{} mel-cepstral values for {} frames of dimension {mcep_dim}",
                mcep.len(),
                excitation.len()
            ))
        );
        ensure!(mcep.iter().all(|v| v.is_finite()), Error::NonFinite("mel-cepstrum".into()));
        ensure!(
            excitation
                .iter()
                .all(|e| e.log_f0.is_finite() && e.coded_ap.iter().all(|a| (0.0..=1.0).contains(a))),
            Error::NonFinite("excitation".into())
        );
        Ok(Self {
            mcep_dim,
            mcep,
            excitation,
            frame_shift_ms,
        })
    }

    pub fn frames(&self) -> usize {
        self.excitation.len()
    }

    pub fn spectral(&self, t: usize) -> &[f64] {
        &self.mcep[t * self.mcep_dim..(t + 1) * self.mcep_dim]
    }

    /// Total feature width: mel-cepstrum plus excitation.
    pub fn feature_dim(&self) -> usize {
        self.mcep_dim + EXCITATION_DIM
    }

    /// Frame-major `frames x (mcep_dim + 5)` matrix `[mcep, log_f0, uv, ap0, ap1, ap2]`.
    pub fn to_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames() * self.feature_dim());
        for t in 0..self.frames() {
            out.extend_from_slice(self.spectral(t));
            out.extend_from_slice(&self.excitation[t].to_array());
        }
        out
    }

    pub fn excitation_matrix(&self) -> Vec<f64> {
        self.excitation.iter().flat_map(|e| e.to_array()).collect()
    }

    pub fn slice(&self, range: Range<usize>) -> AcousticFrameSequence {
        AcousticFrameSequence {
            mcep_dim: self.mcep_dim,
            mcep: self.mcep[range.start * self.mcep_dim..range.end * self.mcep_dim].to_vec(),
            excitation: self.excitation[range].to_vec(),
            frame_shift_ms: self.frame_shift_ms,
        }
    }

    /// Same excitation, different spectra.
    pub fn with_mcep(&self, mcep: Vec<f64>) -> Result<AcousticFrameSequence> {
        Self::new(self.mcep_dim, mcep, self.excitation.clone(), self.frame_shift_ms)
    }

    pub fn voiced_log_f0(&self) -> Vec<f64> {
        self.excitation.iter().filter(|e| e.voiced).map(|e| e.log_f0).collect()
    }
}

/// Converts a natural-log amplitude difference to decibels.
pub fn log_amplitude_to_db(x: f64) -> f64 {
    20.0 * x / std::f64::consts::LN_10
}

/// Coefficient-0 values at or below this are digital silence (the
/// magnitude floor everywhere), whatever the relative threshold says.
pub const SILENT_C0: f64 = -23.02585;

/// Frame mask: true where coefficient-0 power is within `threshold_db`
/// of the utterance's loudest frame and above digital silence.
pub fn power_mask(seq: &AcousticFrameSequence, threshold_db: f64) -> Vec<bool> {
    let c0: Vec<f64> = (0..seq.frames()).map(|t| seq.spectral(t)[0]).collect();
    let peak = c0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    c0.iter()
        .map(|&c| c > SILENT_C0 && log_amplitude_to_db(c - peak) >= threshold_db)
        .collect()
}

/// Range of frames kept after dropping leading and trailing low-power runs.
pub fn trim_range(seq: &AcousticFrameSequence, power_threshold_db: f64) -> Result<Range<usize>> {
    let mask = power_mask(seq, power_threshold_db);
    let start = mask.iter().position(|&m| m).ok_or(Error::EmptyUtterance)?;
    let end = mask.iter().rposition(|&m| m).ok_or(Error::EmptyUtterance)? + 1;
    Ok(start..end)
}

/// Removes leading and trailing frames whose coefficient-0 power lies more
/// than `power_threshold_db` below the utterance peak. Interior frames are
/// kept regardless of level.
pub fn trim_silence(seq: &AcousticFrameSequence, power_threshold_db: f64) -> Result<AcousticFrameSequence> {
    ensure!(seq.frames() > 0, Error::EmptyUtterance);
    Ok(seq.slice(trim_range(seq, power_threshold_db)?))
}

/// `10 / ln 10`, the decibel factor of mel-cepstral distortion.
pub const MCD_DB_FACTOR: f64 = 10.0 / std::f64::consts::LN_10;

/// Mel-cepstral distortion in dB over coefficients `1..D` (power excluded).
pub fn mcd(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(
        a.len() == b.len() && !a.is_empty(),
        Error::Shape(format!("mcd over {} vs {} coefficients", a.len(), b.len()))
    );
    let sq: f64 = a[1..].iter().zip(&b[1..]).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(MCD_DB_FACTOR * (2.0 * sq).sqrt())
}

/// Population statistics of voiced log-F0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogF0Stats {
    pub mean: f64,
    pub std: f64,
}

impl LogF0Stats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        ensure!(
            mean.is_finite() && std.is_finite() && std > 0.0,
            Error::InvalidArgument(format!("log-F0 stats need finite mean and std > 0, got ({mean}, {std})"))
        );
        Ok(Self { mean, std })
    }

    /// Mean and population standard deviation, with the standard deviation
    /// floored at `std_floor`. Needs at least one value.
    pub fn estimate(values: &[f64], std_floor: f64) -> Result<Self> {
        ensure!(!values.is_empty(), Error::UnvoicedUtterance);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self::new(mean, var.sqrt().max(std_floor))
    }
}

/// Affine log-F0 mapping matching source statistics to target statistics.
pub fn transform_log_f0(log_f0: f64, src: &LogF0Stats, tgt: &LogF0Stats) -> Result<f64> {
    ensure!(
        src.std > 0.0,
        Error::InvalidArgument(format!("source log-F0 std must be > 0, got {}", src.std))
    );
    if src == tgt {
        return Ok(log_f0);
    }
    Ok(tgt.mean + (tgt.std / src.std) * (log_f0 - src.mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq_from_c0(c0: &[f64]) -> AcousticFrameSequence {
        let mut mcep = Vec::new();
        for &c in c0 {
            mcep.extend_from_slice(&[c, 0.1, -0.2]);
        }
        let exc = vec![
            ExcitationFrame {
                log_f0: 5.0,
                voiced: true,
                coded_ap: [0.1, 0.2, 0.3],
            };
            c0.len()
        ];
        AcousticFrameSequence::new(3, mcep, exc, 5.0).unwrap()
    }

    // 0 dB for H, about -87 dB for L
    const H: f64 = 0.0;
    const L: f64 = -10.0;

    #[test]
    fn trim_cases() {
        let all = seq_from_c0(&[H, H, H]);
        assert_eq!(trim_silence(&all, -40.0).unwrap(), all);

        let t = trim_silence(&seq_from_c0(&[L, L, H, H, L, L]), -40.0).unwrap();
        assert_eq!(t.frames(), 2);
        assert_eq!(trim_range(&seq_from_c0(&[L, L, H, H, L, L]), -40.0).unwrap(), 2..4);

        let t = trim_silence(&seq_from_c0(&[L, H, L, H, L]), -40.0).unwrap();
        let c0: Vec<f64> = (0..t.frames()).map(|i| t.spectral(i)[0]).collect();
        assert_eq!(c0, vec![H, L, H]);
    }

    #[test]
    fn trim_everything_low_errors() {
        let empty = AcousticFrameSequence::new(3, vec![], vec![], 5.0).unwrap();
        assert!(matches!(trim_silence(&empty, -40.0), Err(Error::EmptyUtterance)));
        let floor = (crate::dsp::mcep::MAGNITUDE_FLOOR).ln();
        let silent = seq_from_c0(&[floor; 4]);
        assert!(matches!(trim_silence(&silent, -40.0), Err(Error::EmptyUtterance)));
    }

    #[test]
    fn mcd_values() {
        let a = [3.0, 1.0, 2.0, 3.0];
        assert_eq!(mcd(&a, &a).unwrap(), 0.0);
        let b = [3.0, 1.0, 3.0, 3.0];
        assert!((mcd(&a, &b).unwrap() - 6.141_851_463_713_754).abs() < 1e-9);
        // power coefficient is ignored
        let c = [9.0, 1.0, 2.0, 3.0];
        assert_eq!(mcd(&a, &c).unwrap(), 0.0);
        assert!(mcd(&a, &a[..3]).is_err());
    }

    #[test]
    fn log_f0_transform_cases() {
        let s = LogF0Stats::new(4.0, 0.2).unwrap();
        let t = LogF0Stats::new(5.0, 0.4).unwrap();
        assert!((transform_log_f0(4.2, &s, &t).unwrap() - 5.4).abs() < 1e-12);
        assert_eq!(transform_log_f0(4.0, &s, &t).unwrap(), 5.0);
        assert_eq!(transform_log_f0(4.37, &s, &s).unwrap(), 4.37);
        let bad = LogF0Stats { mean: 4.0, std: 0.0 };
        assert!(transform_log_f0(4.0, &bad, &t).is_err());
        assert!(LogF0Stats::new(1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn mcd_is_symmetric_and_nonnegative(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let ab = mcd(&a, &b).unwrap();
            let ba = mcd(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn transform_maps_empirical_stats(
            values in proptest::collection::vec(3.0f64..7.0, 3..40),
            tm in 3.0f64..7.0,
            ts in 0.01f64..1.0,
        ) {
            let src = LogF0Stats::estimate(&values, 0.0);
            prop_assume!(src.as_ref().map(|s| s.std > 1e-6).unwrap_or(false));
            let src = src.unwrap();
            let tgt = LogF0Stats::new(tm, ts).unwrap();
            let mapped: Vec<f64> = values.iter().map(|v| transform_log_f0(*v, &src, &tgt).unwrap()).collect();
            let got = LogF0Stats::estimate(&mapped, 0.0).unwrap();
            prop_assert!((got.mean - tm).abs() < 1e-9);
            prop_assert!((got.std - ts).abs() < 1e-9);
        }

        #[test]
        fn trim_is_idempotent(c0 in proptest::collection::vec(prop_oneof![Just(H), Just(L), -3.0f64..0.0], 1..30)) {
            let seq = seq_from_c0(&c0);
            let once = trim_silence(&seq, -40.0).unwrap();
            let twice = trim_silence(&once, -40.0).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
