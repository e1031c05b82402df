use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Stage;
use super::discriminator::Discriminator;
use super::generator::Generator;
use super::loss::{discriminator_loss, generator_loss, AugmentedBatch};
use crate::error::{ensure, Error, Result};
use crate::nn::{Adam, ParameterStore, Tape};

/// Generator and discriminator with their parameters and optimizers.
#[derive(Debug, Clone)]
pub struct VocoderState {
    pub generator: Generator,
    pub gen_store: ParameterStore,
    pub gen_opt: Adam,
    pub discriminator: Discriminator,
    pub disc_store: ParameterStore,
    pub disc_opt: Adam,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VocoderReport {
    pub step: u64,
    /// Batch mean of the variant-averaged STFT loss.
    pub stft: f64,
    /// Batch mean of the variant-averaged adversarial generator loss.
    pub gen_adv: Option<f64>,
    pub disc: Option<f64>,
    pub gen_total: f64,
}

/// One training step at `step_index`. Pretraining updates only the
/// generator on STFT terms; the adversarial stage first updates the
/// discriminator, then the generator.
pub fn vocoder_train_step<R: Rng + ?Sized>(
    state: &mut VocoderState,
    batch: &[AugmentedBatch],
    step_index: u64,
    rng: &mut R,
) -> Result<VocoderReport> {
    ensure!(!batch.is_empty(), Error::InvalidArgument("empty batch".into()));
    let stage = state.generator.config.stage(step_index);
    let n = batch.len() as f64;
    let mut report = VocoderReport {
        step: step_index,
        ..Default::default()
    };

    if stage == Stage::Adversarial {
        state.disc_store.zero_grad();
        let mut d_total = 0.0;
        for item in batch {
            let mut tape = Tape::new();
            let l = discriminator_loss(
                &mut tape,
                item,
                &state.generator,
                &state.gen_store,
                &state.discriminator,
                &state.disc_store,
                stage,
                rng,
            )?;
            let l = tape.scale(l, 1.0 / n);
            d_total += tape.backward(l, &mut state.disc_store)?;
        }
        ensure!(d_total.is_finite(), Error::NonFinite("discriminator loss".into()));
        state.disc_opt.step(&mut state.disc_store);
        report.disc = Some(d_total);
    }

    state.gen_store.zero_grad();
    let mut adv = 0.0;
    for item in batch {
        let mut tape = Tape::new();
        let (l, terms) = generator_loss(
            &mut tape,
            item,
            &state.generator,
            &state.gen_store,
            &state.discriminator,
            &state.disc_store,
            stage,
            rng,
        )?;
        let l = tape.scale(l, 1.0 / n);
        report.gen_total += tape.backward(l, &mut state.gen_store)?;
        report.stft += terms.stft_mean / n;
        adv += terms.adversarial_mean.unwrap_or(0.0) / n;
    }
    ensure!(report.gen_total.is_finite(), Error::NonFinite("generator loss".into()));
    state.gen_opt.step(&mut state.gen_store);
    if stage == Stage::Adversarial {
        report.gen_adv = Some(adv);
    }
    Ok(report)
}
