//! Spectral-model training over an ingested corpus.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointKind, RngState};
use super::csvlog::{fmt_f64, CsvLog};
use super::ingest::{Access, FeatureStore};
use super::manifest::{CorpusManifest, Split};
use super::stats::CorpusStats;
use crate::cyclevae::{evaluate, train_step, CycleVae, EpochMetrics, ModelConfig, SpeakerCode, TrainItem};
use crate::dsp::{AnalysisConfig, LogF0Stats};
use crate::error::{ensure, Error, Result};
use crate::nn::{Adam, ParameterStore, Rng, Tensor};

pub const VAE_METRIC_COLUMNS: [&str; 8] = [
    "epoch", "rec_mcd", "cyc_mcd", "kl_x", "kl_y", "spk_acc_x", "spk_acc_y", "total",
];
pub const TRAIN_METRICS_FILE: &str = "metrics_train.csv";
pub const VALIDATION_METRICS_FILE: &str = "metrics_validation.csv";
pub const VAE_LATEST: &str = "vae_latest.vcck";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub model: ModelConfig,
    pub epochs: u64,
    /// Stops early once this many optimizer steps have run.
    pub max_steps: Option<u64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Epochs between checkpoints; the final epoch is always saved.
    pub checkpoint_every: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 200,
            max_steps: Some(5000),
            batch_size: 1,
            learning_rate: 1e-3,
            clip_norm: Some(10.0),
            checkpoint_every: 10,
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        ensure!(self.batch_size >= 1, Error::Config("batch_size must be >= 1".into()));
        ensure!(self.checkpoint_every >= 1, Error::Config("checkpoint_every must be >= 1".into()));
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            Error::Config("learning_rate must be positive".into())
        );
        Ok(())
    }
}

/// Annotation and statistics of one speaker as carried by a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0_min: f64,
    pub f0_max: f64,
    pub power_threshold_db: f64,
    pub log_f0: LogF0Stats,
}

/// Configuration text embedded in a spectral-model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeCheckpointConfig {
    pub train: VaeTrainConfig,
    pub analysis: AnalysisConfig,
    /// In speaker-code order.
    pub speakers: Vec<SpeakerProfile>,
    pub seed: u64,
}

impl VaeCheckpointConfig {
    pub fn speaker_index(&self, id: &str) -> Result<usize> {
        self.speakers
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::UnknownSpeaker(id.into()))
    }

    pub fn log_f0(&self) -> Vec<LogF0Stats> {
        self.speakers.iter().map(|s| s.log_f0).collect()
    }
}

/// A loaded spectral model ready for inference.
#[derive(Debug, Clone)]
pub struct LoadedVae {
    pub model: CycleVae,
    pub store: ParameterStore,
    pub meta: VaeCheckpointConfig,
}

pub fn load_vae(path: &Path) -> Result<LoadedVae> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(CheckpointKind::CycleVae)?;
    let meta: VaeCheckpointConfig = serde_json::from_str(&ck.config)?;
    let (model, store) = restore_model(&ck, &meta.train.model)?;
    Ok(LoadedVae { model, store, meta })
}

fn restore_model(ck: &Checkpoint, config: &ModelConfig) -> Result<(CycleVae, ParameterStore)> {
    let mut store = ParameterStore::new();
    let mut scratch = Rng::seed_from_u64(0);
    let mut model = CycleVae::new(config.clone(), &mut store, &mut scratch)?;
    ck.restore_store("vae", &mut store)?;
    model.set_norm(ck.norm("norm")?)?;
    Ok((model, store))
}

/// Loads every record of `split` as training items in manifest speaker
/// order.
pub fn load_items(store: &FeatureStore, manifest: &CorpusManifest, split: Split, access: Access) -> Result<Vec<TrainItem>> {
    let count = manifest.speakers.len();
    let mut items = vec![];
    for (i, s) in manifest.speakers.iter().enumerate() {
        for rec in store.records(&s.id, split) {
            let seq = store.load(rec, access)?;
            items.push(TrainItem {
                features: Tensor::matrix(seq.frames(), seq.feature_dim(), seq.to_matrix())?,
                speaker: SpeakerCode::new(i, count)?,
                mask: vec![true; seq.frames()],
            });
        }
    }
    Ok(items)
}

fn metric_row(epoch: u64, m: &EpochMetrics) -> Vec<String> {
    let mut row = vec![epoch.to_string()];
    row.extend(
        [m.rec_mcd, m.cyc_mcd, m.kl_x, m.kl_y, m.spk_acc_x, m.spk_acc_y, m.total]
            .into_iter()
            .map(fmt_f64),
    );
    row
}

/// Options for [`train_vae`].
#[derive(Debug, Clone)]
pub struct VaeRun<'a> {
    pub manifest: &'a CorpusManifest,
    pub features: &'a Path,
    pub out_dir: &'a Path,
    pub config: VaeTrainConfig,
    pub seed: u64,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeOutcome {
    pub epochs: u64,
    pub steps: u64,
    pub last_train: EpochMetrics,
    pub last_validation: Option<EpochMetrics>,
    pub checkpoint: PathBuf,
}

/// Trains the spectral model, writing per-epoch metric logs and
/// checkpoints under `out_dir`.
pub fn train_vae(run: &VaeRun<'_>) -> Result<VaeOutcome> {
    let cfg = &run.config;
    cfg.validate()?;
    let manifest = run.manifest;
    ensure!(
        cfg.model.speakers == manifest.speakers.len(),
        Error::Config(format!(
            "model has {} speaker codes, manifest lists {} speakers",
            cfg.model.speakers,
            manifest.speakers.len()
        ))
    );
    let fstore = FeatureStore::open(run.features)?;
    ensure!(
        fstore.index.analysis.mcep_dim == cfg.model.mcep_dim,
        Error::Config(format!(
            "features have {} mel-cepstral dims, model expects {}",
            fstore.index.analysis.mcep_dim, cfg.model.mcep_dim
        ))
    );
    let stats = CorpusStats::load(&run.features.join(super::stats::STATS_FILE))?;
    stats.check_manifest(manifest)?;
    let train = load_items(&fstore, manifest, Split::Train, Access::Training)?;
    let validation = load_items(&fstore, manifest, Split::Validation, Access::Evaluation)?;
    ensure!(!train.is_empty(), Error::InvalidArgument("no training utterances".into()));
    let log_f0 = stats.log_f0();

    let meta = VaeCheckpointConfig {
        train: cfg.clone(),
        analysis: fstore.index.analysis.clone(),
        speakers: manifest
            .speakers
            .iter()
            .zip(&stats.speakers)
            .map(|(m, s)| SpeakerProfile {
                id: m.id.clone(),
                f0_min: m.f0_min,
                f0_max: m.f0_max,
                power_threshold_db: m.power_threshold_db,
                log_f0: s.log_f0,
            })
            .collect(),
        seed: run.seed,
    };

    std::fs::create_dir_all(run.out_dir).map_err(|e| Error::io(run.out_dir, e))?;
    let ck_dir = run.out_dir.join("checkpoints");
    let train_csv = run.out_dir.join(TRAIN_METRICS_FILE);
    let valid_csv = run.out_dir.join(VALIDATION_METRICS_FILE);

    let (model, mut store, mut opt, mut rng, mut epoch, mut step, train_log, valid_log) = match &run.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.expect_kind(CheckpointKind::CycleVae)?;
            let old: VaeCheckpointConfig = serde_json::from_str(&ck.config)?;
            ensure!(
                old.train.model == cfg.model && old.train.batch_size == cfg.batch_size,
                Error::CheckpointMismatch("model configuration differs from the checkpoint".into())
            );
            ensure!(
                old.speakers.iter().map(|s| &s.id).eq(manifest.speakers.iter().map(|s| &s.id)),
                Error::CheckpointMismatch("speaker list differs from the checkpoint".into())
            );
            let (model, store) = restore_model(&ck, &cfg.model)?;
            let mut opt = ck.optimizer("vae")?;
            opt.lr = cfg.learning_rate;
            opt.clip_norm = cfg.clip_norm;
            let rng = ck
                .rng
                .ok_or_else(|| Error::CheckpointMismatch("checkpoint carries no RNG state".into()))?
                .restore();
            let tl = CsvLog::resume(&train_csv, &VAE_METRIC_COLUMNS, ck.epoch)?;
            let vl = CsvLog::resume(&valid_csv, &VAE_METRIC_COLUMNS, ck.epoch)?;
            (model, store, opt, rng, ck.epoch, ck.step, tl, vl)
        }
        None => {
            let mut rng = Rng::seed_from_u64(run.seed);
            let mut store = ParameterStore::new();
            let mut model = CycleVae::new(cfg.model.clone(), &mut store, &mut rng)?;
            model.set_norm(stats.feature_norm.clone())?;
            let mut opt = Adam::with_lr(cfg.learning_rate);
            opt.clip_norm = cfg.clip_norm;
            let tl = CsvLog::create(&train_csv, &VAE_METRIC_COLUMNS)?;
            let vl = CsvLog::create(&valid_csv, &VAE_METRIC_COLUMNS)?;
            (model, store, opt, rng, 0, 0, tl, vl)
        }
    };

    let save = |store: &ParameterStore, opt: &Adam, rng: &Rng, epoch: u64, step: u64| -> Result<PathBuf> {
        let mut ck = Checkpoint::new(CheckpointKind::CycleVae, serde_json::to_string(&meta)?);
        ck.epoch = epoch;
        ck.step = step;
        ck.rng = Some(RngState::capture(rng));
        ck.optimizers.push(("vae".into(), opt.clone()));
        ck.push_store("vae", store);
        ck.push_norm("norm", &model.norm);
        let path = ck_dir.join(format!("vae_epoch_{epoch:04}.vcck"));
        ck.save(&path)?;
        ck.save(&run.out_dir.join(VAE_LATEST))?;
        Ok(path)
    };

    let done = |step: u64| cfg.max_steps.is_some_and(|m| step >= m);
    let mut last_train = EpochMetrics::default();
    let mut last_validation = None;
    let mut checkpoint = run.out_dir.join(VAE_LATEST);
    while epoch < cfg.epochs && !done(step) {
        // a fresh permutation per epoch keeps resumed runs on the same path
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainItem> = chunk.iter().map(|&i| train[i].clone()).collect();
            train_step(&model, &mut store, &mut opt, &batch, &log_f0, &mut rng)?;
            step += 1;
            if done(step) {
                break;
            }
        }
        epoch += 1;
        // evaluation draws its pivots from its own stream so it never
        // perturbs training
        let mut eval_rng = Rng::seed_from_u64(run.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        last_train = evaluate(&model, &store, &train, &log_f0, &mut eval_rng)?;
        train_log.append(&metric_row(epoch, &last_train))?;
        if !validation.is_empty() {
            let m = evaluate(&model, &store, &validation, &log_f0, &mut eval_rng)?;
            valid_log.append(&metric_row(epoch, &m))?;
            last_validation = Some(m);
        }
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs || done(step) {
            checkpoint = save(&store, &opt, &rng, epoch, step)?;
        }
    }
    Ok(VaeOutcome {
        epochs: epoch,
        steps: step,
        last_train,
        last_validation,
        checkpoint,
    })
}
