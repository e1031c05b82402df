use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::config::{Stage, VocoderConfig};
use super::discriminator::Discriminator;
use super::generator::Generator;
use crate::dsp::stft::stft_samples;
use crate::error::{ensure, Error, Result};
use crate::nn::{sample_gaussian, ParameterStore, StftSpec, Tape, Tensor, Var};

/// Matches the power floor of the differentiable STFT magnitude.
const POWER_FLOOR: f64 = 1e-14;

/// Which features a conditioning sequence was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Natural,
    /// Spectra reconstructed through the spectral model with the source code.
    Reconstructed,
    /// Spectra cyclically reconstructed through the given pivot speaker.
    Cyclic(usize),
}

/// One waveform segment and every conditioning variant derived from it.
#[derive(Debug, Clone)]
pub struct AugmentedBatch {
    /// `frames * hop` target samples.
    pub wave: Vec<f64>,
    /// `frames x cond_dim` natural features.
    pub natural: Tensor,
    pub reconstructed: Option<Tensor>,
    pub cyclic: Vec<(usize, Tensor)>,
}

impl AugmentedBatch {
    pub fn variants(&self) -> Vec<(Provenance, &Tensor)> {
        let mut v = vec![(Provenance::Natural, &self.natural)];
        if let Some(r) = &self.reconstructed {
            v.push((Provenance::Reconstructed, r));
        }
        v.extend(self.cyclic.iter().map(|(p, t)| (Provenance::Cyclic(*p), t)));
        v
    }

    fn validate(&self, hop: usize) -> Result<()> {
        let frames = self.natural.rows();
        ensure!(
            self.wave.len() == frames * hop,
            Error::Shape(format!(
                "waveform of {} samples for {frames} frames at hop {hop}",
                self.wave.len()
            ))
        );
        for (p, t) in self.variants() {
            ensure!(
                t.rows() == frames && t.cols() == self.natural.cols(),
                Error::Shape(format!("{p:?} features {:?} vs natural {:?}", t.shape(), self.natural.shape()))
            );
        }
        Ok(())
    }
}

fn magnitudes(planner: &mut FftPlanner<f64>, x: &[f64], spec: StftSpec) -> Result<Vec<f64>> {
    let s = stft_samples(planner, x, spec)?;
    Ok(s.data.iter().map(|c| c.norm_sqr().max(POWER_FLOOR).sqrt()).collect())
}

/// Multi-resolution STFT loss: per resolution, spectral convergence
/// `||S - S_hat||_F / ||S||_F` plus mean `|ln S - ln S_hat|`; averaged
/// over resolutions.
pub fn mr_stft_loss(w: &[f64], w_hat: &[f64], resolutions: &[StftSpec]) -> Result<f64> {
    ensure!(
        w.len() == w_hat.len(),
        Error::Shape(format!("waveforms of {} and {} samples", w.len(), w_hat.len()))
    );
    ensure!(!resolutions.is_empty(), Error::InvalidArgument("no STFT resolutions".into()));
    let mut planner = FftPlanner::new();
    let mut total = 0.0;
    for &spec in resolutions {
        let a = magnitudes(&mut planner, w, spec)?;
        let b = magnitudes(&mut planner, w_hat, spec)?;
        let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = a.iter().map(|x| x * x).sum();
        let log_l1: f64 = a.iter().zip(&b).map(|(x, y)| (x.ln() - y.ln()).abs()).sum::<f64>() / a.len() as f64;
        total += num.sqrt() / den.sqrt() + log_l1;
    }
    Ok(total / resolutions.len() as f64)
}

/// Differentiable multi-resolution STFT loss of `w_hat` (`T x 1` on the
/// tape) against the fixed target `w`.
pub fn mr_stft_loss_tape(tape: &mut Tape, w: &[f64], w_hat: Var, resolutions: &[StftSpec]) -> Result<Var> {
    ensure!(
        tape.value(w_hat).len() == w.len(),
        Error::Shape(format!("waveforms of {} and {} samples", w.len(), tape.value(w_hat).len()))
    );
    ensure!(!resolutions.is_empty(), Error::InvalidArgument("no STFT resolutions".into()));
    let target = tape.constant(Tensor::matrix(w.len(), 1, w.to_vec())?);
    let mut parts = Vec::with_capacity(resolutions.len());
    for &spec in resolutions {
        let s = tape.stft_mag(target, spec)?;
        let s_hat = tape.stft_mag(w_hat, spec)?;
        let diff = tape.sub(s, s_hat)?;
        let sq = tape.square(diff);
        let num = tape.sum(sq);
        let num = tape.sqrt(num)?;
        let den = tape.value(s).sq_norm().sqrt();
        let sc = tape.scale(num, 1.0 / den);
        let ls = tape.log(s)?;
        let ls_hat = tape.log(s_hat)?;
        let d = tape.sub(ls, ls_hat)?;
        let d = tape.abs(d);
        let mag = tape.mean(d);
        parts.push(tape.add(sc, mag)?);
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p)?;
    }
    Ok(tape.scale(total, 1.0 / resolutions.len() as f64))
}

/// Per-variant loss values of one generator objective.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTerms {
    pub stft: Vec<(Provenance, f64)>,
    /// Empty in the pretraining stage.
    pub adversarial: Vec<(Provenance, f64)>,
    pub stft_mean: f64,
    pub adversarial_mean: Option<f64>,
    pub total: f64,
}

fn mean_of(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(tape.scale(acc, 1.0 / vars.len() as f64))
}

fn noise_for<R: Rng + ?Sized>(tape: &mut Tape, len: usize, rng: &mut R) -> Var {
    tape.constant(sample_gaussian(&[len, 1], rng))
}

/// Generator objective for one batch element: for every conditioning
/// variant (natural, reconstructed, each cyclic pivot) a waveform is
/// generated from fresh noise and scored by the STFT loss against the
/// natural waveform, and in the adversarial stage by `(1 - D(w_hat))^2`.
/// STFT terms and adversarial terms are each averaged over variants; the
/// adversarial mean is weighted by `lambda_adv`.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    batch: &AugmentedBatch,
    generator: &Generator,
    gen_store: &ParameterStore,
    discriminator: &Discriminator,
    disc_store: &ParameterStore,
    stage: Stage,
    rng: &mut R,
) -> Result<(Var, GeneratorTerms)> {
    let cfg: &VocoderConfig = &generator.config;
    batch.validate(cfg.hop)?;
    let mut terms = GeneratorTerms::default();
    let mut stft_vars = vec![];
    let mut adv_vars = vec![];
    for (prov, cond) in batch.variants() {
        let noise = noise_for(tape, batch.wave.len(), rng);
        let c = tape.constant(cond.clone());
        let w_hat = generator.forward(tape, gen_store, noise, c)?;
        let l = mr_stft_loss_tape(tape, &batch.wave, w_hat, &cfg.resolutions)?;
        terms.stft.push((prov, tape.scalar_value(l)));
        stft_vars.push(l);
        if stage == Stage::Adversarial {
            let score = discriminator.forward(tape, disc_store, w_hat)?;
            let miss = tape.scale(score, -1.0);
            let miss = tape.add_scalar(miss, 1.0);
            let sq = tape.square(miss);
            let a = tape.mean(sq);
            terms.adversarial.push((prov, tape.scalar_value(a)));
            adv_vars.push(a);
        }
    }
    let stft = mean_of(tape, &stft_vars)?;
    terms.stft_mean = tape.scalar_value(stft);
    let total = if adv_vars.is_empty() {
        stft
    } else {
        let adv = mean_of(tape, &adv_vars)?;
        terms.adversarial_mean = Some(tape.scalar_value(adv));
        let weighted = tape.scale(adv, cfg.lambda_adv);
        tape.add(stft, weighted)?
    };
    terms.total = tape.scalar_value(total);
    Ok((total, terms))
}

/// Least-squares discriminator objective: `mean (1 - D(w))^2` on the real
/// waveform plus the variant mean of `mean D(w_hat)^2`, where each `w_hat`
/// is generated from fresh noise and enters as a constant.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    batch: &AugmentedBatch,
    generator: &Generator,
    gen_store: &ParameterStore,
    discriminator: &Discriminator,
    disc_store: &ParameterStore,
    stage: Stage,
    rng: &mut R,
) -> Result<Var> {
    ensure!(
        stage == Stage::Adversarial,
        Error::InvalidArgument("discriminator loss is undefined during pretraining".into())
    );
    let cfg = &generator.config;
    batch.validate(cfg.hop)?;
    let real = tape.constant(Tensor::matrix(batch.wave.len(), 1, batch.wave.clone())?);
    let score = discriminator.forward(tape, disc_store, real)?;
    let miss = tape.scale(score, -1.0);
    let miss = tape.add_scalar(miss, 1.0);
    let sq = tape.square(miss);
    let real_loss = tape.mean(sq);
    let mut fakes = vec![];
    for (_, cond) in batch.variants() {
        let noise = sample_gaussian(&[batch.wave.len(), 1], rng).into_data();
        let w_hat = generator.generate(gen_store, &noise, cond)?;
        let fake = tape.constant(Tensor::matrix(w_hat.len(), 1, w_hat)?);
        let score = discriminator.forward(tape, disc_store, fake)?;
        let sq = tape.square(score);
        fakes.push(tape.mean(sq));
    }
    let fake_loss = mean_of(tape, &fakes)?;
    tape.add(real_loss, fake_loss)
}
