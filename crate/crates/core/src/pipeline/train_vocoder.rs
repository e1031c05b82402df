//! Vocoder training on natural and spectral-model-derived conditioning.

use std::path::{Path, PathBuf};

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointKind, RngState};
use super::csvlog::{fmt_f64, fmt_opt, CsvLog};
use super::ingest::{Access, FeatureStore};
use super::manifest::{CorpusManifest, Split};
use super::stats::{CorpusStats, STATS_FILE};
use super::train_vae::{load_vae, LoadedVae};
use crate::cyclevae::{augmentation_features, SpeakerCode};
use crate::dsp::{read_wav, AnalysisConfig, EXCITATION_DIM};
use crate::error::{ensure, Error, Result};
use crate::nn::{Adam, ParameterStore, Rng, Tensor};
use crate::pwg::{vocoder_train_step, AugmentedBatch, Discriminator, Generator, Stage, VocoderConfig, VocoderState};

pub const VOCODER_METRIC_COLUMNS: [&str; 6] = ["step", "stage", "stft", "gen_adv", "disc", "gen_total"];
pub const VOCODER_METRICS_FILE: &str = "metrics_vocoder.csv";
pub const VOCODER_LATEST: &str = "vocoder_latest.vcck";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderTrainConfig {
    pub vocoder: VocoderConfig,
    /// Cyclic variants per utterance; `None` uses every other speaker.
    pub pivots: Option<usize>,
    /// Train on natural features only.
    pub natural_only: bool,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for VocoderTrainConfig {
    fn default() -> Self {
        Self {
            vocoder: VocoderConfig::default(),
            pivots: None,
            natural_only: false,
            log_every: 10,
            checkpoint_every: 1000,
        }
    }
}

/// Configuration text embedded in a vocoder checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderCheckpointConfig {
    pub train: VocoderTrainConfig,
    pub analysis: AnalysisConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LoadedVocoder {
    pub generator: Generator,
    pub store: ParameterStore,
    pub meta: VocoderCheckpointConfig,
}

fn build_state(cfg: &VocoderConfig, rng: &mut Rng) -> Result<VocoderState> {
    let mut gen_store = ParameterStore::new();
    let generator = Generator::new(cfg.clone(), &mut gen_store, rng)?;
    let mut disc_store = ParameterStore::new();
    let discriminator = Discriminator::new(cfg.discriminator.clone(), &mut disc_store, rng)?;
    Ok(VocoderState {
        generator,
        gen_store,
        gen_opt: Adam::with_lr(cfg.generator_lr),
        discriminator,
        disc_store,
        disc_opt: Adam::with_lr(cfg.discriminator_lr),
    })
}

fn restore_state(ck: &Checkpoint, cfg: &VocoderConfig) -> Result<VocoderState> {
    let mut state = build_state(cfg, &mut Rng::seed_from_u64(0))?;
    ck.restore_store("gen", &mut state.gen_store)?;
    ck.restore_store("disc", &mut state.disc_store)?;
    state.generator.set_norm(ck.norm("norm")?)?;
    state.gen_opt = ck.optimizer("gen")?;
    state.disc_opt = ck.optimizer("disc")?;
    Ok(state)
}

pub fn vocoder_checkpoint(state: &VocoderState, meta: &VocoderCheckpointConfig, step: u64, rng: &Rng) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(CheckpointKind::Vocoder, serde_json::to_string(meta)?);
    ck.step = step;
    ck.rng = Some(RngState::capture(rng));
    ck.optimizers.push(("gen".into(), state.gen_opt.clone()));
    ck.optimizers.push(("disc".into(), state.disc_opt.clone()));
    ck.push_store("gen", &state.gen_store);
    ck.push_store("disc", &state.disc_store);
    ck.push_norm("norm", &state.generator.norm);
    Ok(ck)
}

/// Rebuilds a full training state (with optimizer moments and RNG) from a
/// vocoder checkpoint.
pub fn resume_vocoder(ck: &Checkpoint) -> Result<(VocoderState, VocoderCheckpointConfig, Rng)> {
    ck.expect_kind(CheckpointKind::Vocoder)?;
    let meta: VocoderCheckpointConfig = serde_json::from_str(&ck.config)?;
    let state = restore_state(ck, &meta.train.vocoder)?;
    let rng = ck
        .rng
        .ok_or_else(|| Error::CheckpointMismatch("checkpoint carries no RNG state".into()))?
        .restore();
    Ok((state, meta, rng))
}

pub fn load_vocoder(path: &Path) -> Result<LoadedVocoder> {
    let ck = Checkpoint::load(path)?;
    let (state, meta, _) = resume_vocoder(&ck)?;
    Ok(LoadedVocoder {
        generator: state.generator,
        store: state.gen_store,
        meta,
    })
}

/// One training utterance with its waveform and every conditioning variant.
#[derive(Debug, Clone)]
pub struct VocoderItem {
    pub wave: Vec<f64>,
    pub natural: Tensor,
    pub reconstructed: Option<Tensor>,
    pub cyclic: Vec<(usize, Tensor)>,
}

impl VocoderItem {
    pub fn frames(&self) -> usize {
        self.natural.rows()
    }

    /// Frames `start..start + len` of every variant with matching samples.
    pub fn crop(&self, start: usize, len: usize, hop: usize) -> Result<AugmentedBatch> {
        let end = start + len;
        Ok(AugmentedBatch {
            wave: self.wave[start * hop..end * hop].to_vec(),
            natural: self.natural.slice_rows(start, end)?,
            reconstructed: match &self.reconstructed {
                Some(r) => Some(r.slice_rows(start, end)?),
                None => None,
            },
            cyclic: self
                .cyclic
                .iter()
                .map(|(p, t)| Ok((*p, t.slice_rows(start, end)?)))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

/// Pivot speakers for `source`: the first `count` other speakers in code
/// order.
pub fn pivot_speakers(source: SpeakerCode, count: Option<usize>) -> Result<Vec<SpeakerCode>> {
    let others: Vec<usize> = (0..source.count()).filter(|&k| k != source.index()).collect();
    let n = count.unwrap_or(others.len());
    ensure!(
        n >= 1 && n <= others.len(),
        Error::Config(format!("{n} pivots requested, {} other speakers available", others.len()))
    );
    others[..n].iter().map(|&k| SpeakerCode::new(k, source.count())).collect()
}

/// Loads the training split as vocoder items, deriving reconstructed and
/// cyclic conditioning through the frozen spectral model.
pub fn load_vocoder_items(
    store: &FeatureStore,
    manifest: &CorpusManifest,
    vae: Option<&LoadedVae>,
    cfg: &VocoderTrainConfig,
) -> Result<Vec<VocoderItem>> {
    let hop = store.index.analysis.hop();
    let mut items = vec![];
    for (i, s) in manifest.speakers.iter().enumerate() {
        let code = SpeakerCode::new(i, manifest.speakers.len())?;
        for rec in store.records(&s.id, Split::Train) {
            let seq = store.load(rec, Access::Training)?;
            let natural = Tensor::matrix(seq.frames(), seq.feature_dim(), seq.to_matrix())?;
            let audio = read_wav(&rec.wav)?;
            let mut wave: Vec<f64> = audio
                .samples()
                .iter()
                .skip(rec.trim_start * hop)
                .take(rec.frames * hop)
                .copied()
                .collect();
            wave.resize(rec.frames * hop, 0.0);
            let (reconstructed, cyclic) = match vae {
                Some(v) if !cfg.natural_only => {
                    let pivots = pivot_speakers(code, cfg.pivots)?;
                    let (r, c) = augmentation_features(&v.model, &v.store, &natural, code, &pivots, &v.meta.log_f0())?;
                    (Some(r), c)
                }
                _ => (None, vec![]),
            };
            items.push(VocoderItem {
                wave,
                natural,
                reconstructed,
                cyclic,
            });
        }
    }
    ensure!(!items.is_empty(), Error::InvalidArgument("no training utterances".into()));
    Ok(items)
}

/// Options for [`train_vocoder`].
#[derive(Debug, Clone)]
pub struct VocoderRun<'a> {
    pub manifest: &'a CorpusManifest,
    pub features: &'a Path,
    pub out_dir: &'a Path,
    /// Frozen spectral model; required unless `natural_only` is set.
    pub vae_checkpoint: Option<PathBuf>,
    pub config: VocoderTrainConfig,
    pub seed: u64,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderOutcome {
    pub steps: u64,
    pub checkpoint: PathBuf,
}

/// Runs the two-stage schedule over random crops of the training split.
pub fn train_vocoder(run: &VocoderRun<'_>) -> Result<VocoderOutcome> {
    let cfg = &run.config;
    let vcfg = &cfg.vocoder;
    vcfg.validate()?;
    let fstore = FeatureStore::open(run.features)?;
    let analysis = fstore.index.analysis.clone();
    ensure!(
        analysis.hop() == vcfg.hop && analysis.mcep_dim + EXCITATION_DIM == vcfg.cond_dim,
        Error::Config(format!(
            "vocoder expects hop {} and {} channels, features have hop {} and {}",
            vcfg.hop,
            vcfg.cond_dim,
            analysis.hop(),
            analysis.mcep_dim + EXCITATION_DIM
        ))
    );
    let vae = match (&run.vae_checkpoint, cfg.natural_only) {
        (Some(p), _) => Some(load_vae(p)?),
        (None, true) => None,
        (None, false) => {
            return Err(Error::InvalidArgument(
                "a spectral-model checkpoint is required for augmented training".into(),
            ))
        }
    };
    if let Some(v) = &vae {
        ensure!(
            v.meta.speakers.iter().map(|s| &s.id).eq(run.manifest.speakers.iter().map(|s| &s.id)),
            Error::CheckpointMismatch("spectral model was trained on a different speaker list".into())
        );
    }
    let stats = CorpusStats::load(&run.features.join(STATS_FILE))?;
    let items = load_vocoder_items(&fstore, run.manifest, vae.as_ref(), cfg)?;
    let seg = vcfg.segment_frames;
    ensure!(
        items.iter().all(|it| it.frames() >= seg),
        Error::Config(format!("every training utterance must have at least {seg} frames"))
    );

    let meta = VocoderCheckpointConfig {
        train: cfg.clone(),
        analysis,
        seed: run.seed,
    };
    std::fs::create_dir_all(run.out_dir).map_err(|e| Error::io(run.out_dir, e))?;
    let csv = run.out_dir.join(VOCODER_METRICS_FILE);
    let (mut state, mut rng, mut step, log) = match &run.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let (_, old, rng) = resume_vocoder(&ck)?;
            ensure!(
                old.train.vocoder.generator == vcfg.generator
                    && old.train.vocoder.discriminator == vcfg.discriminator
                    && old.train.vocoder.cond_dim == vcfg.cond_dim,
                Error::CheckpointMismatch("vocoder configuration differs from the checkpoint".into())
            );
            // the schedule and learning rates come from the current config
            let mut state = restore_state(&ck, vcfg)?;
            state.gen_opt.lr = vcfg.generator_lr;
            state.disc_opt.lr = vcfg.discriminator_lr;
            let log = CsvLog::resume(&csv, &VOCODER_METRIC_COLUMNS, ck.step)?;
            (state, rng, ck.step, log)
        }
        None => {
            let mut rng = Rng::seed_from_u64(run.seed);
            let mut state = build_state(vcfg, &mut rng)?;
            state.generator.set_norm(stats.feature_norm.clone())?;
            (state, rng, 0, CsvLog::create(&csv, &VOCODER_METRIC_COLUMNS)?)
        }
    };
    let ck_dir = run.out_dir.join("checkpoints");
    let total = vcfg.total_steps();
    let mut checkpoint = run.out_dir.join(VOCODER_LATEST);
    while step < total {
        let batch = (0..vcfg.batch_size)
            .map(|_| {
                let item = &items[rng.random_range(0..items.len())];
                let start = rng.random_range(0..=item.frames() - seg);
                item.crop(start, seg, vcfg.hop)
            })
            .collect::<Result<Vec<_>>>()?;
        let report = vocoder_train_step(&mut state, &batch, step, &mut rng)?;
        step += 1;
        if step % cfg.log_every.max(1) == 0 || step == total {
            let stage = match vcfg.stage(step - 1) {
                Stage::Pretrain => "pretrain",
                Stage::Adversarial => "adversarial",
            };
            log.append(&[
                step.to_string(),
                stage.into(),
                fmt_f64(report.stft),
                fmt_opt(report.gen_adv),
                fmt_opt(report.disc),
                fmt_f64(report.gen_total),
            ])?;
        }
        if step % cfg.checkpoint_every.max(1) == 0 || step == total {
            let ck = vocoder_checkpoint(&state, &meta, step, &rng)?;
            let path = ck_dir.join(format!("vocoder_step_{step:06}.vcck"));
            ck.save(&path)?;
            ck.save(&run.out_dir.join(VOCODER_LATEST))?;
            checkpoint = path;
        }
    }
    Ok(VocoderOutcome { steps: step, checkpoint })
}
