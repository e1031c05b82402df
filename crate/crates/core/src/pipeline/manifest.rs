//! Corpus manifest: speakers, their analysis annotations, and file splits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    pub id: String,
    pub f0_min: f64,
    pub f0_max: f64,
    #[serde(default = "default_threshold")]
    pub power_threshold_db: f64,
    /// Paths relative to the manifest file.
    pub train: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
}

fn default_threshold() -> f64 {
    -40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    pub speakers: Vec<SpeakerEntry>,
}

fn default_rate() -> u32 {
    24000
}

/// Which split an utterance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// One manifest entry resolved to an absolute path.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: usize,
    pub split: Split,
    /// Path as written in the manifest.
    pub rel: String,
    pub path: PathBuf,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: CorpusManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.speakers.len() >= 2, Error::Config("manifest needs at least 2 speakers".into()));
        ensure!(self.sample_rate > 0, Error::Config("sample_rate must be > 0".into()));
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.speakers {
            ensure!(ids.insert(&s.id), Error::Config(format!("duplicate speaker id '{}'", s.id)));
            ensure!(
                s.f0_min > 0.0 && s.f0_min < s.f0_max,
                Error::Config(format!("speaker '{}': need 0 < f0_min < f0_max", s.id))
            );
            ensure!(!s.train.is_empty(), Error::Config(format!("speaker '{}' has no training files", s.id)));
            for v in &s.validation {
                ensure!(
                    !s.train.contains(v),
                    Error::Config(format!("speaker '{}': '{v}' is in both splits", s.id))
                );
            }
        }
        Ok(())
    }

    pub fn speaker_index(&self, id: &str) -> Result<usize> {
        self.speakers
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::UnknownSpeaker(id.to_string()))
    }

    /// Every utterance, sorted by relative path within (speaker, split).
    pub fn utterances(&self, root: &Path) -> Vec<Utterance> {
        let mut out = vec![];
        for (i, s) in self.speakers.iter().enumerate() {
            for (split, list) in [(Split::Train, &s.train), (Split::Validation, &s.validation)] {
                let mut list = list.clone();
                list.sort();
                for rel in list {
                    out.push(Utterance {
                        speaker: i,
                        split,
                        path: root.join(&rel),
                        rel,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> SpeakerEntry {
        SpeakerEntry {
            id: id.into(),
            f0_min: 60.0,
            f0_max: 300.0,
            power_threshold_db: -40.0,
            train: vec![format!("{id}/a.wav")],
            validation: vec![format!("{id}/b.wav")],
        }
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let m = CorpusManifest {
            sample_rate: 24000,
            speakers: vec![entry("x"), entry("y")],
        };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<CorpusManifest>(&text).unwrap(), m);
        let minimal = r#"{"speakers":[{"id":"a","f0_min":50,"f0_max":200,"train":["a.wav"]},
                                       {"id":"b","f0_min":50,"f0_max":200,"train":["b.wav"]}]}"#;
        let m: CorpusManifest = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.sample_rate, 24000);
        assert_eq!(m.speakers[0].power_threshold_db, -40.0);
        m.validate().unwrap();
    }

    #[test]
    fn validation_rules() {
        let one = CorpusManifest {
            sample_rate: 24000,
            speakers: vec![entry("x")],
        };
        assert!(one.validate().is_err());
        let dup = CorpusManifest {
            sample_rate: 24000,
            speakers: vec![entry("x"), entry("x")],
        };
        assert!(dup.validate().is_err());
        let mut overlap = entry("y");
        overlap.validation = overlap.train.clone();
        let m = CorpusManifest {
            sample_rate: 24000,
            speakers: vec![entry("x"), overlap],
        };
        assert!(m.validate().is_err());
        let good = CorpusManifest {
            sample_rate: 24000,
            speakers: vec![entry("x"), entry("y")],
        };
        assert!(matches!(good.speaker_index("z"), Err(Error::UnknownSpeaker(_))));
        assert_eq!(good.utterances(Path::new("/r")).len(), 4);
    }
}
