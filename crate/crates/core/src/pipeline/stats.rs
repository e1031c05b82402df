//! Per-speaker statistics over the training split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::featfile::write_atomic;
use super::ingest::{Access, FeatureStore};
use super::manifest::{CorpusManifest, Split};
use crate::dsp::LogF0Stats;
use crate::error::{ensure, Error, Result};
use crate::nn::FeatureNorm;

pub const STATS_FILE: &str = "stats.json";

/// Floor on the log-F0 spread, so constant-pitch speakers stay invertible.
pub const LOG_F0_STD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStats {
    pub id: String,
    pub log_f0: LogF0Stats,
    /// Mean and spread of coefficient 0 (log power) over kept frames.
    pub c0_mean: f64,
    pub c0_std: f64,
    pub voiced_frames: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// In manifest speaker order.
    pub speakers: Vec<SpeakerStats>,
    /// Per-channel normalization of the full feature vector over all
    /// training frames.
    pub feature_norm: FeatureNorm,
}

impl CorpusStats {
    pub fn log_f0(&self) -> Vec<LogF0Stats> {
        self.speakers.iter().map(|s| s.log_f0).collect()
    }

    pub fn speaker(&self, id: &str) -> Result<&SpeakerStats> {
        self.speakers
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::MissingStats(id.into()))
    }

    /// Fails unless the speakers line up with the manifest.
    pub fn check_manifest(&self, manifest: &CorpusManifest) -> Result<()> {
        let ids: Vec<&str> = self.speakers.iter().map(|s| s.id.as_str()).collect();
        for (i, s) in manifest.speakers.iter().enumerate() {
            ensure!(ids.get(i) == Some(&s.id.as_str()), Error::MissingStats(s.id.clone()));
        }
        ensure!(
            ids.len() == manifest.speakers.len(),
            Error::Config("statistics cover speakers missing from the manifest".into())
        );
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Voiced log-F0 and power statistics of one speaker's training utterances.
pub fn compute_speaker_stats(store: &FeatureStore, speaker: &str) -> Result<SpeakerStats> {
    let mut log_f0 = vec![];
    let mut c0 = vec![];
    for rec in store.records(speaker, Split::Train) {
        let seq = store.load(rec, Access::Statistics)?;
        log_f0.extend(seq.voiced_log_f0());
        c0.extend((0..seq.frames()).map(|t| seq.spectral(t)[0]));
    }
    ensure!(!c0.is_empty(), Error::MissingStats(speaker.into()));
    let stats = LogF0Stats::estimate(&log_f0, LOG_F0_STD_FLOOR)?;
    let (c0_mean, c0_std) = mean_std(&c0);
    Ok(SpeakerStats {
        id: speaker.into(),
        log_f0: stats,
        c0_mean,
        c0_std,
        voiced_frames: log_f0.len(),
        frames: c0.len(),
    })
}

/// Statistics for every manifest speaker plus the feature normalization.
pub fn compute_stats(store: &FeatureStore, manifest: &CorpusManifest) -> Result<CorpusStats> {
    let mut speakers = vec![];
    let mut matrices = vec![];
    for s in &manifest.speakers {
        speakers.push(compute_speaker_stats(store, &s.id)?);
        for rec in store.records(&s.id, Split::Train) {
            matrices.push(store.load(rec, Access::Statistics)?.to_matrix());
        }
    }
    let dim = store.index.analysis.mcep_dim + crate::dsp::EXCITATION_DIM;
    let feature_norm = FeatureNorm::fit(matrices.iter().map(|m| m.as_slice()), dim)?;
    Ok(CorpusStats {
        speakers,
        feature_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_is_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
