//! Corpus ingestion into an on-disk feature store.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::featfile::{read_features, write_atomic, write_features};
use super::manifest::{CorpusManifest, Split};
use crate::dsp::{analyze_trimmed, read_wav, AcousticFrameSequence, AnalysisConfig};
use crate::error::{ensure, Error, Result};

pub const INDEX_FILE: &str = "index.json";

/// One successfully analysed utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub speaker: String,
    pub split: Split,
    /// Path as written in the manifest.
    pub rel: String,
    /// Audio file the features came from.
    pub wav: PathBuf,
    /// Feature file, relative to the store root.
    pub features: String,
    /// Frames kept after trimming.
    pub frames: usize,
    /// Kept frames within the full analysis, `trim_start..trim_end`.
    pub trim_start: usize,
    pub trim_end: usize,
    pub total_frames: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestFailure {
    pub speaker: String,
    pub rel: String,
    /// Machine-readable error tag, for example `empty_utterance`.
    pub kind: String,
    pub message: String,
}

/// Contents of `index.json` at the store root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub analysis: AnalysisConfig,
    pub records: Vec<FeatureRecord>,
    pub failures: Vec<IngestFailure>,
}

fn feature_name(rel: &str) -> String {
    let stem = rel.strip_suffix(".wav").unwrap_or(rel);
    format!("{}.vcft", stem.replace(['/', '\\'], "_"))
}

/// Analyses every manifest utterance, writes one feature file per success
/// under `out/features/{speaker}/` and the index to `out/index.json`.
/// Failing files are recorded and skipped.
pub fn ingest(manifest: &CorpusManifest, root: &Path, out: &Path, cfg: &AnalysisConfig) -> Result<FeatureIndex> {
    manifest.validate()?;
    cfg.validate()?;
    ensure!(
        manifest.sample_rate == cfg.sample_rate,
        Error::Config(format!(
            "manifest rate {} differs from analysis rate {}",
            manifest.sample_rate, cfg.sample_rate
        ))
    );
    let mut records = vec![];
    let mut failures = vec![];
    for utt in manifest.utterances(root) {
        let spk = &manifest.speakers[utt.speaker];
        let analysed = read_wav(&utt.path).and_then(|w| {
            let (seq, range) = analyze_trimmed(&w, cfg, spk.f0_min, spk.f0_max, spk.power_threshold_db)?;
            Ok((w.len(), seq, range))
        });
        match analysed {
            Ok((samples, seq, range)) => {
                let features = format!("features/{}/{}", spk.id, feature_name(&utt.rel));
                write_features(&out.join(&features), &seq)?;
                records.push(FeatureRecord {
                    speaker: spk.id.clone(),
                    split: utt.split,
                    rel: utt.rel,
                    wav: utt.path,
                    features,
                    frames: seq.frames(),
                    trim_start: range.start,
                    trim_end: range.end,
                    total_frames: samples.div_ceil(cfg.hop()),
                    samples,
                });
            }
            Err(e) => failures.push(IngestFailure {
                speaker: spk.id.clone(),
                rel: utt.rel,
                kind: e.kind().into(),
                message: e.to_string(),
            }),
        }
    }
    ensure!(
        !records.is_empty(),
        Error::InvalidArgument(format!("no utterance could be ingested ({} failures)", failures.len()))
    );
    let index = FeatureIndex {
        analysis: cfg.clone(),
        records,
        failures,
    };
    write_atomic(&out.join(INDEX_FILE), serde_json::to_string_pretty(&index)?.as_bytes())?;
    Ok(index)
}

/// Why features are being read; validation data may only be read for
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    Statistics,
    Training,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessEntry {
    pub rel: String,
    pub split: Split,
    pub access: Access,
}

/// Read side of an ingested corpus. Every load is logged.
#[derive(Debug)]
pub struct FeatureStore {
    root: PathBuf,
    pub index: FeatureIndex,
    log: RefCell<Vec<AccessEntry>>,
}

impl FeatureStore {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            index: serde_json::from_str(&text)?,
            log: RefCell::new(vec![]),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Records of one speaker and split in index order.
    pub fn records<'a>(&'a self, speaker: &'a str, split: Split) -> impl Iterator<Item = &'a FeatureRecord> + 'a {
        self.index
            .records
            .iter()
            .filter(move |r| r.speaker == speaker && r.split == split)
    }

    pub fn load(&self, record: &FeatureRecord, access: Access) -> Result<AcousticFrameSequence> {
        ensure!(
            record.split == Split::Train || access == Access::Evaluation,
            Error::InvalidArgument(format!("validation utterance '{}' requested for {access:?}", record.rel))
        );
        self.log.borrow_mut().push(AccessEntry {
            rel: record.rel.clone(),
            split: record.split,
            access,
        });
        let seq = read_features(&self.root.join(&record.features))?;
        ensure!(
            seq.frames() == record.frames,
            Error::Corrupt {
                path: self.root.join(&record.features),
                reason: format!("{} frames, index says {}", seq.frames(), record.frames),
            }
        );
        Ok(seq)
    }

    pub fn access_log(&self) -> Vec<AccessEntry> {
        self.log.borrow().clone()
    }
}
