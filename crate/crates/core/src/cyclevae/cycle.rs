use rand::Rng;

use super::model::{CycleVae, Posterior, SpeakerCode};
use crate::dsp::{transform_log_f0, AcousticFrameSequence, ExcitationFrame, LogF0Stats, EXCITATION_DIM};
use crate::error::{ensure, Error, Result};
use crate::nn::{ParameterStore, Tape, Tensor, Var};

/// `z = mu - exp(log_scale) * eps`, elementwise.
pub fn reparameterize(tape: &mut Tape, post: &Posterior, eps: Var) -> Result<Var> {
    ensure!(
        tape.value(eps).shape() == tape.value(post.mu).shape(),
        Error::Shape(format!(
            "noise {:?} vs location {:?}",
            tape.value(eps).shape(),
            tape.value(post.mu).shape()
        ))
    );
    let scale = tape.exp(post.log_scale);
    let spread = tape.mul(scale, eps)?;
    tape.sub(post.mu, spread)
}

/// Uniform draw over every speaker except `source`.
pub fn sample_pivot<R: Rng + ?Sized>(source: SpeakerCode, rng: &mut R) -> Result<SpeakerCode> {
    let s = source.count();
    ensure!(s >= 2, Error::InvalidArgument("pivot sampling needs at least 2 speakers".into()));
    let k = rng.random_range(0..s - 1);
    SpeakerCode::new(if k >= source.index() { k + 1 } else { k }, s)
}

/// Laplace noise for one cycle: one draw for each of the two encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleNoise {
    pub eps_x: Tensor,
    pub eps_y: Tensor,
}

impl CycleNoise {
    pub fn zeros(frames: usize, latent_dim: usize) -> Self {
        Self {
            eps_x: Tensor::zeros(&[frames, latent_dim]),
            eps_y: Tensor::zeros(&[frames, latent_dim]),
        }
    }
}

/// Everything one cycle produces (all `T x dim` tape nodes).
#[derive(Debug, Clone)]
pub struct CycleStep {
    /// Encoder input `x_n = [s^(x|y)_{n-1}, e^(x)]`.
    pub encoder_input: Var,
    pub posterior_x: Posterior,
    pub z: Var,
    /// `s^(x)_n`, decoded with the source code.
    pub reconstructed: Var,
    /// `s^(y)_n`, decoded with the pivot code.
    pub converted: Var,
    /// `y_n = [s^(y)_n, e^(y)]`.
    pub y_input: Var,
    pub posterior_y: Posterior,
    pub z_y: Var,
    /// `s^(x|y)_n`, the re-encoded conversion decoded with the source code.
    pub cyclic: Var,
    pub pivot: SpeakerCode,
}

#[derive(Debug, Clone)]
pub struct CycleOutputs {
    /// Natural spectra `s^(x)` (constant).
    pub natural: Var,
    /// Natural excitation `e^(x)` (constant).
    pub excitation: Var,
    pub cycles: Vec<CycleStep>,
}

impl CycleOutputs {
    /// `s^(x|y)_n`, with `s^(x|y)_0` the natural spectra.
    pub fn cyclic_spectra(&self, n: usize) -> Var {
        if n == 0 {
            self.natural
        } else {
            self.cycles[n - 1].cyclic
        }
    }
}

fn stats_for(stats: &[LogF0Stats], code: SpeakerCode) -> Result<LogF0Stats> {
    stats
        .get(code.index())
        .copied()
        .ok_or_else(|| Error::MissingStats(format!("speaker index {}", code.index())))
}

/// Excitation with log-F0 mapped from `src` to `tgt` statistics; U/V and
/// aperiodicity channels are copied unchanged.
fn transformed_excitation(exc: &Tensor, src: &LogF0Stats, tgt: &LogF0Stats) -> Result<Tensor> {
    let mut out = exc.clone();
    for row in out.data_mut().chunks_mut(EXCITATION_DIM) {
        row[0] = transform_log_f0(row[0], src, tgt)?;
    }
    Ok(out)
}

/// Runs `pivots.len()` conversion / cyclic-reconstruction cycles.
///
/// `features` is the `T x (mcep_dim + 5)` natural acoustic matrix, `stats`
/// holds voiced log-F0 statistics indexed by speaker, and `noise[n]` the
/// Laplace draws for cycle `n`.
#[allow(clippy::too_many_arguments)]
pub fn cycle_forward(
    model: &CycleVae,
    tape: &mut Tape,
    store: &ParameterStore,
    features: &Tensor,
    source: SpeakerCode,
    pivots: &[SpeakerCode],
    noise: &[CycleNoise],
    stats: &[LogF0Stats],
) -> Result<CycleOutputs> {
    let cfg = &model.config;
    let (frames, d) = (features.rows(), cfg.mcep_dim);
    ensure!(
        features.cols() == cfg.feature_dim(),
        Error::Shape(format!(
            "features have {} channels, model expects {}",
            features.cols(),
            cfg.feature_dim()
        ))
    );
    ensure!(frames > 0, Error::EmptyUtterance);
    ensure!(
        !pivots.is_empty() && pivots.len() == noise.len(),
        Error::InvalidArgument(format!("{} pivots for {} noise draws", pivots.len(), noise.len()))
    );
    let src_stats = stats_for(stats, source)?;
    let x = tape.constant(features.clone());
    let natural = tape.slice_cols(x, 0, d)?;
    let excitation = tape.slice_cols(x, d, d + EXCITATION_DIM)?;
    let exc_values = tape.value(excitation).clone();

    let mut out = CycleOutputs {
        natural,
        excitation,
        cycles: Vec::with_capacity(pivots.len()),
    };
    for (n, (&pivot, eps)) in pivots.iter().zip(noise).enumerate() {
        ensure!(
            pivot.count() == source.count() && pivot != source,
            Error::InvalidArgument(format!("pivot {} must differ from source", pivot.index()))
        );
        let prev = out.cyclic_spectra(n);
        let encoder_input = tape.concat_cols(&[prev, excitation])?;
        let posterior_x = model.encode(tape, store, encoder_input)?;
        let ex = tape.constant(eps.eps_x.clone());
        let z = reparameterize(tape, &posterior_x, ex)?;
        let reconstructed = model.decode(tape, store, z, source)?;
        let converted = model.decode(tape, store, z, pivot)?;

        let exc_y = transformed_excitation(&exc_values, &src_stats, &stats_for(stats, pivot)?)?;
        let exc_y = tape.constant(exc_y);
        let y_input = tape.concat_cols(&[converted, exc_y])?;
        let posterior_y = model.encode(tape, store, y_input)?;
        let ey = tape.constant(eps.eps_y.clone());
        let z_y = reparameterize(tape, &posterior_y, ey)?;
        let cyclic = model.decode(tape, store, z_y, source)?;
        out.cycles.push(CycleStep {
            encoder_input,
            posterior_x,
            z,
            reconstructed,
            converted,
            y_input,
            posterior_y,
            z_y,
            cyclic,
            pivot,
        });
    }
    Ok(out)
}

/// Deterministic conversion: spectra decoded from `z = mu` under the target
/// code; log-F0 mapped to the target statistics; U/V and aperiodicity kept.
pub fn convert(
    model: &CycleVae,
    store: &ParameterStore,
    seq: &AcousticFrameSequence,
    target: SpeakerCode,
    src_stats: &LogF0Stats,
    tgt_stats: &LogF0Stats,
) -> Result<AcousticFrameSequence> {
    ensure!(
        seq.mcep_dim == model.config.mcep_dim,
        Error::Shape(format!(
            "sequence has {} mel-cepstral dims, model expects {}",
            seq.mcep_dim, model.config.mcep_dim
        ))
    );
    ensure!(seq.frames() > 0, Error::EmptyUtterance);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(seq.frames(), seq.feature_dim(), seq.to_matrix())?);
    let post = model.encode(&mut tape, store, x)?;
    let spectra = model.decode(&mut tape, store, post.mu, target)?;
    let excitation = seq
        .excitation
        .iter()
        .map(|e| {
            Ok(ExcitationFrame {
                log_f0: transform_log_f0(e.log_f0, src_stats, tgt_stats)?,
                ..*e
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AcousticFrameSequence::new(
        seq.mcep_dim,
        tape.value(spectra).data().to_vec(),
        excitation,
        seq.frame_shift_ms,
    )
}

/// Vocoder conditioning derived from one utterance with `z = mu`:
/// reconstructed spectra and, per pivot, one-cycle cyclic spectra, each
/// joined with the natural excitation into `T x (mcep_dim + 5)` matrices.
pub fn augmentation_features(
    model: &CycleVae,
    store: &ParameterStore,
    features: &Tensor,
    source: SpeakerCode,
    pivots: &[SpeakerCode],
    stats: &[LogF0Stats],
) -> Result<(Tensor, Vec<(usize, Tensor)>)> {
    ensure!(!pivots.is_empty(), Error::InvalidArgument("no pivot speakers".into()));
    let zeros = [CycleNoise::zeros(features.rows(), model.config.latent_dim)];
    let mut reconstructed = None;
    let mut cyclic = Vec::with_capacity(pivots.len());
    for &pivot in pivots {
        let mut tape = Tape::new();
        let out = cycle_forward(model, &mut tape, store, features, source, &[pivot], &zeros, stats)?;
        let step = &out.cycles[0];
        if reconstructed.is_none() {
            let r = tape.concat_cols(&[step.reconstructed, out.excitation])?;
            reconstructed = Some(tape.value(r).clone());
        }
        let c = tape.concat_cols(&[step.cyclic, out.excitation])?;
        cyclic.push((pivot.index(), tape.value(c).clone()));
    }
    Ok((reconstructed.expect("at least one pivot"), cyclic))
}
