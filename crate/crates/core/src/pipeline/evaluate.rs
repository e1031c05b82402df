//! Objective comparison of converted and reference utterances.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::csvlog::fmt_f64;
use super::manifest::CorpusManifest;
use crate::dsp::{analyze_trimmed, mcd, read_wav, AcousticFrameSequence, AnalysisConfig};
use crate::error::{ensure, Error, Result};

/// Symmetric (type 2) dynamic time warping over a precomputed local cost:
/// diagonal steps weigh the local cost twice, horizontal and vertical steps
/// once. Returns the optimal path from `(0, 0)` to `(n - 1, m - 1)`.
pub fn dtw_path(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Result<Vec<(usize, usize)>> {
    ensure!(n > 0 && m > 0, Error::EmptyUtterance);
    let mut acc = vec![f64::INFINITY; n * m];
    let at = |i: usize, j: usize| i * m + j;
    for i in 0..n {
        for j in 0..m {
            let d = cost(i, j);
            acc[at(i, j)] = if i == 0 && j == 0 {
                d
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(acc[at(i - 1, j - 1)] + 2.0 * d);
                }
                if i > 0 {
                    best = best.min(acc[at(i - 1, j)] + d);
                }
                if j > 0 {
                    best = best.min(acc[at(i, j - 1)] + d);
                }
                best
            };
        }
    }
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        let d = cost(i, j);
        let here = acc[at(i, j)];
        // prefer the diagonal on ties so identical inputs align one-to-one
        (i, j) = if i > 0 && j > 0 && here == acc[at(i - 1, j - 1)] + 2.0 * d {
            (i - 1, j - 1)
        } else if i > 0 && here == acc[at(i - 1, j)] + d {
            (i - 1, j)
        } else if j > 0 && here == acc[at(i, j - 1)] + d {
            (i, j - 1)
        } else if i > 0 && j > 0 {
            (i - 1, j - 1)
        } else if i > 0 {
            (i - 1, j)
        } else {
            (i, j - 1)
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    /// Mean mel-cepstral distortion along the alignment path.
    pub mcd_db: f64,
    /// RMS log-F0 difference over aligned frames voiced in both; 0 when
    /// there are none.
    pub f0_rmse: f64,
    /// Fraction of aligned frame pairs whose voicing decisions differ.
    pub uv_error: f64,
    pub path_len: usize,
    pub voiced_pairs: usize,
}

/// Aligns two sequences by DTW on squared Euclidean distance over
/// coefficients `1..D` and averages the metrics along the path.
pub fn compare_sequences(a: &AcousticFrameSequence, b: &AcousticFrameSequence) -> Result<PairMetrics> {
    ensure!(
        a.mcep_dim == b.mcep_dim,
        Error::Shape(format!("{} vs {} mel-cepstral dims", a.mcep_dim, b.mcep_dim))
    );
    let path = dtw_path(a.frames(), b.frames(), |i, j| {
        let (x, y) = (a.spectral(i), b.spectral(j));
        x[1..].iter().zip(&y[1..]).map(|(p, q)| (p - q) * (p - q)).sum()
    })?;
    let mut m = PairMetrics {
        path_len: path.len(),
        ..Default::default()
    };
    let mut f0_sq = 0.0;
    let mut uv_miss = 0usize;
    for &(i, j) in &path {
        m.mcd_db += mcd(a.spectral(i), b.spectral(j))?;
        let (ea, eb) = (&a.excitation[i], &b.excitation[j]);
        if ea.voiced != eb.voiced {
            uv_miss += 1;
        } else if ea.voiced {
            f0_sq += (ea.log_f0 - eb.log_f0).powi(2);
            m.voiced_pairs += 1;
        }
    }
    let n = path.len() as f64;
    m.mcd_db /= n;
    m.uv_error = uv_miss as f64 / n;
    if m.voiced_pairs > 0 {
        m.f0_rmse = (f0_sq / m.voiced_pairs as f64).sqrt();
    }
    Ok(m)
}

/// One row of a pairing list: a converted file, its reference rendition,
/// and the speaker whose annotation drives the analysis of both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub converted: PathBuf,
    pub reference: PathBuf,
    pub speaker: String,
}

pub fn load_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pairs: Vec<(EvalPair, PairMetrics)>,
    pub mean: PairMetrics,
}

/// Analyses each pair with the named speaker's annotation and compares it.
pub fn evaluate_pairs(pairs: &[EvalPair], manifest: &CorpusManifest, cfg: &AnalysisConfig) -> Result<EvalReport> {
    ensure!(!pairs.is_empty(), Error::InvalidArgument("empty pairing list".into()));
    let mut out = vec![];
    for p in pairs {
        let spk = &manifest.speakers[manifest.speaker_index(&p.speaker)?];
        let analyse = |path: &Path| -> Result<AcousticFrameSequence> {
            let w = read_wav(path)?;
            Ok(analyze_trimmed(&w, cfg, spk.f0_min, spk.f0_max, spk.power_threshold_db)?.0)
        };
        let m = compare_sequences(&analyse(&p.converted)?, &analyse(&p.reference)?)?;
        out.push((p.clone(), m));
    }
    let n = out.len() as f64;
    let mut mean = PairMetrics::default();
    for (_, m) in &out {
        mean.mcd_db += m.mcd_db / n;
        mean.f0_rmse += m.f0_rmse / n;
        mean.uv_error += m.uv_error / n;
        mean.path_len += m.path_len;
        mean.voiced_pairs += m.voiced_pairs;
    }
    Ok(EvalReport { pairs: out, mean })
}

pub const EVAL_COLUMNS: [&str; 7] = [
    "converted", "reference", "mcd_db", "f0_rmse", "uv_error", "path_len", "voiced_pairs",
];

/// Per-pair rows followed by a `mean` row (path counts there are totals).
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut text = format!("{}\n", EVAL_COLUMNS.join(","));
    let row = |a: &str, b: &str, m: &PairMetrics| {
        format!(
            "{a},{b},{},{},{},{},{}\n",
            fmt_f64(m.mcd_db),
            fmt_f64(m.f0_rmse),
            fmt_f64(m.uv_error),
            m.path_len,
            m.voiced_pairs
        )
    };
    for (p, m) in &report.pairs {
        text.push_str(&row(&p.converted.display().to_string(), &p.reference.display().to_string(), m));
    }
    text.push_str(&row("mean", "", &report.mean));
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
