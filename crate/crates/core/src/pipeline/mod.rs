//! Dataset ingestion, statistics, training orchestration, conversion,
//! evaluation, and persistence.

pub mod checkpoint;
pub mod convert;
pub mod csvlog;
pub mod evaluate;
pub mod featfile;
pub mod ingest;
pub mod manifest;
pub mod stats;
pub mod synthetic;
pub mod train_vae;
pub mod train_vocoder;

pub use checkpoint::{Checkpoint, CheckpointKind, NamedArray, RngState};
pub use featfile::{read_features, write_features};
pub use ingest::{ingest, Access, FeatureIndex, FeatureRecord, FeatureStore};
pub use manifest::{CorpusManifest, SpeakerEntry, Split, Utterance};
pub use stats::{compute_speaker_stats, compute_stats, CorpusStats, SpeakerStats};
pub use train_vae::{load_vae, train_vae, LoadedVae, VaeRun, VaeTrainConfig};
pub use train_vocoder::{load_vocoder, train_vocoder, LoadedVocoder, VocoderRun, VocoderTrainConfig};
pub use convert::{convert_utterance, convert_waveform, Conversion, ConversionOutcome};
pub use evaluate::{compare_sequences, dtw_path, evaluate_pairs, EvalPair, EvalReport, PairMetrics};
