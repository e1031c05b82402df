use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use cyclevae_pwg::dsp::AnalysisConfig;
use cyclevae_pwg::pipeline::checkpoint::Checkpoint;
use cyclevae_pwg::pipeline::evaluate::{load_pairs, write_eval_csv};
use cyclevae_pwg::pipeline::stats::STATS_FILE;
use cyclevae_pwg::pipeline::synthetic::{write_corpus, SyntheticSpec};
use cyclevae_pwg::pipeline::{
    compute_stats, convert_utterance, evaluate_pairs, ingest, train_vae, train_vocoder, CorpusManifest, FeatureStore,
    VaeRun, VaeTrainConfig, VocoderRun, VocoderTrainConfig,
};

/// Nonparallel voice conversion: feature extraction, spectral-model and
/// vocoder training, conversion and objective evaluation.
#[derive(Debug, Parser)]
#[command(name = "vcc", version)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// JSON file with `analysis`, `vae`, `vocoder` and `synthetic` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic two-speaker vowel corpus and its manifest.
    SynthCorpus,
    /// Analyse every manifest utterance into the feature store at OUT_DIR.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory manifest paths are relative to (default: the manifest's).
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Compute per-speaker statistics over the training split.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Feature store (default: OUT_DIR).
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Train the spectral conversion model.
    TrainVae {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the vocoder on natural and model-derived features.
    TrainVocoder {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Frozen spectral-model checkpoint.
        #[arg(long)]
        vae: Option<PathBuf>,
        /// Skip reconstructed and cyclic variants.
        #[arg(long)]
        natural_only: bool,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Convert one utterance to a target speaker.
    Convert {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        vocoder: PathBuf,
        /// Output file (default: OUT_DIR/<input stem>_to_<target>.wav).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare converted and reference utterances listed in a pairing file.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON list of {"converted", "reference", "speaker"} objects.
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Print a checkpoint's header and array summary as JSON.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PipelineConfig {
    analysis: AnalysisConfig,
    vae: VaeTrainConfig,
    vocoder: VocoderTrainConfig,
    synthetic: SyntheticSpec,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn manifest_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let config = load_config(cli.config.as_deref())?;
    let out = cli.out_dir.as_path();
    let summary = match cli.command {
        Command::SynthCorpus => {
            let mut spec = config.synthetic;
            spec.seed = cli.seed;
            let m = write_corpus(&spec, out)?;
            serde_json::json!({ "manifest": out.join("manifest.json"), "speakers": m.speakers.len() })
        }
        Command::Ingest { manifest, root } => {
            let m = CorpusManifest::load(&manifest)?;
            let root = root.unwrap_or_else(|| manifest_root(&manifest));
            let index = ingest(&m, &root, out, &config.analysis)?;
            serde_json::json!({
                "ingested": index.records.len(),
                "failures": index.failures,
            })
        }
        Command::Stats { manifest, features } => {
            let m = CorpusManifest::load(&manifest)?;
            let dir = features.unwrap_or_else(|| out.to_path_buf());
            let store = FeatureStore::open(&dir)?;
            let stats = compute_stats(&store, &m)?;
            stats.save(&dir.join(STATS_FILE))?;
            serde_json::to_value(&stats.speakers)?
        }
        Command::TrainVae { manifest, features, resume } => {
            let m = CorpusManifest::load(&manifest)?;
            let mut vae = config.vae;
            vae.model.speakers = m.speakers.len();
            vae.model.mcep_dim = config.analysis.mcep_dim;
            let o = train_vae(&VaeRun {
                manifest: &m,
                features: &features,
                out_dir: out,
                config: vae,
                seed: cli.seed,
                resume,
            })?;
            serde_json::json!({
                "epochs": o.epochs,
                "steps": o.steps,
                "checkpoint": o.checkpoint,
                "train": o.last_train,
                "validation": o.last_validation,
            })
        }
        Command::TrainVocoder { manifest, features, vae, natural_only, resume } => {
            let m = CorpusManifest::load(&manifest)?;
            let mut voc = config.vocoder;
            voc.natural_only |= natural_only;
            let o = train_vocoder(&VocoderRun {
                manifest: &m,
                features: &features,
                out_dir: out,
                vae_checkpoint: vae,
                config: voc,
                seed: cli.seed,
                resume,
            })?;
            serde_json::json!({ "steps": o.steps, "checkpoint": o.checkpoint })
        }
        Command::Convert { wav, source, target, vae, vocoder, output } => {
            let output = output.unwrap_or_else(|| {
                let stem = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                out.join(format!("{stem}_to_{target}.wav"))
            });
            let o = convert_utterance(&wav, &source, &target, &vae, &vocoder, &output, cli.seed)?;
            serde_json::json!({
                "output": output,
                "frames": o.frames,
                "samples": o.samples,
                "clipped": o.clipped,
            })
        }
        Command::Evaluate { manifest, pairs } => {
            let m = CorpusManifest::load(&manifest)?;
            let pairs = load_pairs(&pairs)?;
            let report = evaluate_pairs(&pairs, &m, &config.analysis)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let csv = out.join("metrics_eval.csv");
            write_eval_csv(&csv, &report)?;
            serde_json::json!({ "metrics": csv, "pairs": report.pairs.len(), "mean": report.mean })
        }
        Command::InspectCheckpoint { path } => {
            let ck = Checkpoint::load(&path)?;
            let config: serde_json::Value = serde_json::from_str(&ck.config)?;
            let arrays: Vec<_> = ck
                .arrays
                .iter()
                .map(|a| serde_json::json!({ "name": a.name, "shape": a.shape }))
                .collect();
            serde_json::json!({
                "kind": ck.kind.tag(),
                "step": ck.step,
                "epoch": ck.epoch,
                "has_rng": ck.rng.is_some(),
                "optimizers": ck.optimizers.iter().map(|(n, a)| serde_json::json!({ "name": n, "step": a.step, "lr": a.lr })).collect::<Vec<_>>(),
                "parameters": ck.arrays.iter().map(|a| a.data.len()).sum::<usize>(),
                "arrays": arrays,
                "config": config,
            })
        }
    };
    Ok(summary)
}

/// Machine-readable tag for an error chain, taken from the library error
/// when there is one.
fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<cyclevae_pwg::Error>())
        .map(|e| e.kind())
        .unwrap_or("error")
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version requests
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(error_kind(&e), &format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
