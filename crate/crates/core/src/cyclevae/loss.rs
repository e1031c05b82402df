use serde::{Deserialize, Serialize};

use super::cycle::CycleOutputs;
use super::model::SpeakerCode;
use crate::dsp::features::MCD_DB_FACTOR;
use crate::error::{ensure, Error, Result};
use crate::nn::{Tape, Tensor, Var};

/// Weights of the per-cycle loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rec: f64,
    pub cyc: f64,
    pub kl_x: f64,
    pub kl_y: f64,
    pub ce_x: f64,
    pub ce_y: f64,
    /// Weight of `|delta c0|` inside both spectral terms.
    pub power: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            cyc: 1.0,
            kl_x: 1.0,
            kl_y: 1.0,
            ce_x: 1.0,
            ce_y: 1.0,
            power: 1.0,
        }
    }
}

/// `KL(Laplace(mu, scale) || Laplace(0, 1))`.
pub fn kl_laplace(mu: f64, scale: f64) -> Result<f64> {
    ensure!(
        scale > 0.0 && scale.is_finite() && mu.is_finite(),
        Error::InvalidArgument(format!("Laplace scale must be positive and finite, got {scale}"))
    );
    let a = mu.abs();
    Ok(a + scale * (-a / scale).exp() - 1.0 - scale.ln())
}

/// Loss values (summed over cycles unless noted) read back from the tape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: f64,
    pub cyc: f64,
    pub kl_x: f64,
    pub kl_y: f64,
    pub ce_x: f64,
    pub ce_y: f64,
    pub total: f64,
    /// First-cycle mel-cepstral distortion (dB) of the reconstruction.
    pub rec_mcd: f64,
    /// First-cycle mel-cepstral distortion (dB) of the cyclic reconstruction.
    pub cyc_mcd: f64,
    /// First-cycle speaker accuracy of the encoder on x and on y.
    pub acc_x: f64,
    pub acc_y: f64,
}

/// `T x 1` column holding `mask / count`.
fn frame_weights(tape: &mut Tape, mask: &[bool]) -> Result<Var> {
    let n = mask.iter().filter(|m| **m).count();
    ensure!(n > 0, Error::EmptyUtterance);
    let w = mask.iter().map(|&m| if m { 1.0 / n as f64 } else { 0.0 }).collect();
    Ok(tape.constant(Tensor::matrix(mask.len(), 1, w)?))
}

fn masked_mean(tape: &mut Tape, per_frame: Var, weights: Var) -> Result<Var> {
    let w = tape.mul(per_frame, weights)?;
    Ok(tape.sum(w))
}

/// Per-frame MCD over coefficients `1..D` and `|delta c0|`, both `T x 1`.
fn spectral_distance(tape: &mut Tape, pred: Var, target: Var) -> Result<(Var, Var)> {
    let d = tape.value(pred).cols();
    let diff = tape.sub(pred, target)?;
    let rest = tape.slice_cols(diff, 1, d)?;
    let sq = tape.square(rest);
    let ss = tape.row_sum(sq);
    let ss = tape.scale(ss, 2.0);
    let root = tape.sqrt(ss)?;
    let mcd = tape.scale(root, MCD_DB_FACTOR);
    let c0 = tape.slice_cols(diff, 0, 1)?;
    Ok((mcd, tape.abs(c0)))
}

/// Per-frame KL of the posterior to the standard Laplace prior, summed
/// over latent dimensions (`T x 1`).
pub(crate) fn kl_frames(tape: &mut Tape, mu: Var, log_scale: Var) -> Result<Var> {
    // |mu| + s exp(-|mu|/s) - 1 - ln s, with s = exp(log_scale)
    let a = tape.abs(mu);
    let neg_ls = tape.scale(log_scale, -1.0);
    let inv_s = tape.exp(neg_ls);
    let ratio = tape.mul(a, inv_s)?;
    let expo = tape.sub(log_scale, ratio)?;
    let term = tape.exp(expo);
    let kl = tape.add(a, term)?;
    let kl = tape.sub(kl, log_scale)?;
    let kl = tape.add_scalar(kl, -1.0);
    Ok(tape.row_sum(kl))
}

/// Per-frame negative log-probability of `code` (`T x 1`).
fn cross_entropy_frames(tape: &mut Tape, logits: Var, code: SpeakerCode) -> Result<Var> {
    let ls = tape.log_softmax(logits);
    let pick = tape.constant(Tensor::row(code.one_hot()));
    let picked = tape.mul_row(ls, pick)?;
    let lp = tape.row_sum(picked);
    Ok(tape.scale(lp, -1.0))
}

fn accuracy(logits: &Tensor, code: SpeakerCode, mask: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut n = 0usize;
    for (t, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        n += 1;
        let row = logits.row_slice(t);
        let best = (0..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        if best == code.index() {
            hits += 1;
        }
    }
    hits as f64 / n.max(1) as f64
}

/// Negative variational lower bound summed over cycles.
///
/// Per cycle: reconstruction and cyclic-reconstruction spectral losses
/// against `target` (natural mel-cepstra), KL of both posteriors to the
/// prior, and speaker cross-entropy of the encoder on `x_n` (source code)
/// and on `y_n` (pivot code). Every term is a mean over frames where
/// `mask` is set.
pub fn elbo_loss(
    tape: &mut Tape,
    outputs: &CycleOutputs,
    target: Var,
    source: SpeakerCode,
    mask: &[bool],
    weights: &LossWeights,
) -> Result<(Var, LossTerms)> {
    let frames = tape.value(target).rows();
    ensure!(
        mask.len() == frames,
        Error::Shape(format!("mask of {} frames for {frames} target frames", mask.len()))
    );
    ensure!(!outputs.cycles.is_empty(), Error::InvalidArgument("no cycles to score".into()));
    let fw = frame_weights(tape, mask)?;
    let mut total: Option<Var> = None;
    let mut terms = LossTerms::default();
    for (n, c) in outputs.cycles.iter().enumerate() {
        for v in [c.reconstructed, c.converted, c.cyclic] {
            ensure!(
                tape.value(v).shape() == tape.value(target).shape(),
                Error::Shape(format!(
                    "cycle output {:?} vs target {:?}",
                    tape.value(v).shape(),
                    tape.value(target).shape()
                ))
            );
        }
        let mut parts = Vec::with_capacity(6);
        for (pred, w, slot, mcd_slot) in [
            (c.reconstructed, weights.rec, 0, 0),
            (c.cyclic, weights.cyc, 1, 1),
        ] {
            let (mcd, c0) = spectral_distance(tape, pred, target)?;
            let mcd_mean = masked_mean(tape, mcd, fw)?;
            let c0_mean = masked_mean(tape, c0, fw)?;
            let c0_w = tape.scale(c0_mean, weights.power);
            let l = tape.add(mcd_mean, c0_w)?;
            let v = tape.scalar_value(l);
            if slot == 0 {
                terms.rec += v;
            } else {
                terms.cyc += v;
            }
            if n == 0 {
                let m = tape.scalar_value(mcd_mean);
                if mcd_slot == 0 {
                    terms.rec_mcd = m;
                } else {
                    terms.cyc_mcd = m;
                }
            }
            parts.push(tape.scale(l, w));
        }
        for (post, w, is_x) in [(&c.posterior_x, weights.kl_x, true), (&c.posterior_y, weights.kl_y, false)] {
            let kl = kl_frames(tape, post.mu, post.log_scale)?;
            let l = masked_mean(tape, kl, fw)?;
            if is_x {
                terms.kl_x += tape.scalar_value(l);
            } else {
                terms.kl_y += tape.scalar_value(l);
            }
            parts.push(tape.scale(l, w));
        }
        for (post, code, w, is_x) in [
            (&c.posterior_x, source, weights.ce_x, true),
            (&c.posterior_y, c.pivot, weights.ce_y, false),
        ] {
            let ce = cross_entropy_frames(tape, post.logits, code)?;
            let l = masked_mean(tape, ce, fw)?;
            let acc = accuracy(tape.value(post.logits), code, mask);
            if is_x {
                terms.ce_x += tape.scalar_value(l);
                if n == 0 {
                    terms.acc_x = acc;
                }
            } else {
                terms.ce_y += tape.scalar_value(l);
                if n == 0 {
                    terms.acc_y = acc;
                }
            }
            parts.push(tape.scale(l, w));
        }
        for p in parts {
            total = Some(match total {
                Some(t) => tape.add(t, p)?,
                None => p,
            });
        }
    }
    let total = total.expect("at least one cycle");
    terms.total = tape.scalar_value(total);
    Ok((total, terms))
}
