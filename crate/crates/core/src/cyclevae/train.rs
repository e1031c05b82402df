use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cycle::{cycle_forward, sample_pivot, CycleNoise};
use super::loss::{elbo_loss, LossTerms};
use super::model::{CycleVae, SpeakerCode};
use crate::dsp::LogF0Stats;
use crate::error::{ensure, Error, Result};
use crate::nn::{sample_laplace, Adam, ParameterStore, Tape, Tensor};

/// One trimmed training utterance.
#[derive(Debug, Clone)]
pub struct TrainItem {
    /// `T x (mcep_dim + 5)` natural features.
    pub features: Tensor,
    pub speaker: SpeakerCode,
    /// Frames that count in the loss averages.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch means of the loss terms.
    pub terms: LossTerms,
    pub grad_norm: f64,
}

/// Fresh Laplace noise for every cycle of a `frames`-long utterance.
pub fn sample_noise<R: Rng + ?Sized>(frames: usize, latent_dim: usize, n_cycles: usize, rng: &mut R) -> Vec<CycleNoise> {
    (0..n_cycles)
        .map(|_| CycleNoise {
            eps_x: sample_laplace(&[frames, latent_dim], rng),
            eps_y: sample_laplace(&[frames, latent_dim], rng),
        })
        .collect()
}

fn mean_terms(sum: &mut LossTerms, t: &LossTerms, n: f64) {
    sum.rec += t.rec / n;
    sum.cyc += t.cyc / n;
    sum.kl_x += t.kl_x / n;
    sum.kl_y += t.kl_y / n;
    sum.ce_x += t.ce_x / n;
    sum.ce_y += t.ce_y / n;
    sum.total += t.total / n;
    sum.rec_mcd += t.rec_mcd / n;
    sum.cyc_mcd += t.cyc_mcd / n;
    sum.acc_x += t.acc_x / n;
    sum.acc_y += t.acc_y / n;
}

/// One optimizer step on the batch-mean negative lower bound. Pivots and
/// Laplace noise are drawn per utterance and per cycle.
pub fn train_step<R: Rng + ?Sized>(
    model: &CycleVae,
    store: &mut ParameterStore,
    optimizer: &mut Adam,
    batch: &[TrainItem],
    stats: &[LogF0Stats],
    rng: &mut R,
) -> Result<TrainReport> {
    ensure!(!batch.is_empty(), Error::InvalidArgument("empty batch".into()));
    let cfg = &model.config;
    let n = batch.len() as f64;
    let mut report = TrainReport::default();
    store.zero_grad();
    for item in batch {
        let pivots = (0..cfg.n_cycles)
            .map(|_| sample_pivot(item.speaker, rng))
            .collect::<Result<Vec<_>>>()?;
        let noise = sample_noise(item.features.rows(), cfg.latent_dim, cfg.n_cycles, rng);
        let mut tape = Tape::new();
        let out = cycle_forward(model, &mut tape, store, &item.features, item.speaker, &pivots, &noise, stats)?;
        let (loss, terms) = elbo_loss(&mut tape, &out, out.natural, item.speaker, &item.mask, &cfg.weights)?;
        ensure!(terms.total.is_finite(), Error::NonFinite("training loss".into()));
        let scaled = tape.scale(loss, 1.0 / n);
        tape.backward(scaled, store)?;
        mean_terms(&mut report.terms, &terms, n);
    }
    report.grad_norm = optimizer.step(store);
    Ok(report)
}

/// Evaluation-pass metrics with `z = mu` (no sampling noise).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub rec_mcd: f64,
    pub cyc_mcd: f64,
    pub kl_x: f64,
    pub kl_y: f64,
    pub spk_acc_x: f64,
    pub spk_acc_y: f64,
    pub total: f64,
}

/// Mean metrics over `items` using zero noise; pivots come from `rng`.
pub fn evaluate<R: Rng + ?Sized>(
    model: &CycleVae,
    store: &ParameterStore,
    items: &[TrainItem],
    stats: &[LogF0Stats],
    rng: &mut R,
) -> Result<EpochMetrics> {
    ensure!(!items.is_empty(), Error::InvalidArgument("nothing to evaluate".into()));
    let cfg = &model.config;
    let n = items.len() as f64;
    let mut m = EpochMetrics::default();
    for item in items {
        let pivots = (0..cfg.n_cycles)
            .map(|_| sample_pivot(item.speaker, rng))
            .collect::<Result<Vec<_>>>()?;
        let noise = vec![CycleNoise::zeros(item.features.rows(), cfg.latent_dim); cfg.n_cycles];
        let mut tape = Tape::new();
        let out = cycle_forward(model, &mut tape, store, &item.features, item.speaker, &pivots, &noise, stats)?;
        let (_, t) = elbo_loss(&mut tape, &out, out.natural, item.speaker, &item.mask, &cfg.weights)?;
        m.rec_mcd += t.rec_mcd / n;
        m.cyc_mcd += t.cyc_mcd / n;
        m.kl_x += t.kl_x / n;
        m.kl_y += t.kl_y / n;
        m.spk_acc_x += t.acc_x / n;
        m.spk_acc_y += t.acc_y / n;
        m.total += t.total / n;
    }
    Ok(m)
}
