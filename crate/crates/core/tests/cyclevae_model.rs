//! Spectral model: zero-parameter contracts, scalar reference forwards,
//! the Laplace KL against quadrature, pivot sampling, cycle structure,
//! the lower-bound loss by hand, and conversion properties.

use cyclevae_pwg::cyclevae::{
    augmentation_features, convert, cycle_forward, elbo_loss, kl_laplace, reparameterize, sample_pivot, train_step,
    CycleNoise, CycleOutputs, CycleStep, CycleVae, FeatureNorm, LossWeights, ModelConfig, NetConfig, Posterior,
    SpeakerCode, TrainItem,
};
use cyclevae_pwg::dsp::{AcousticFrameSequence, ExcitationFrame, LogF0Stats};
use cyclevae_pwg::nn::{check_gradients, sample_laplace, Adam, ParameterStore, RecurrentBlock, Rng, Tape, Tensor};
use cyclevae_pwg::Error;
use proptest::prelude::*;

mod common;
use common::kl_quadrature;
use rand::{Rng as _, SeedableRng};

const D: usize = 3;
const DZ: usize = 2;
const S: usize = 2;

fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn tiny_config(speakers: usize) -> ModelConfig {
    let net = NetConfig {
        conv_channels: 3,
        conv_width: 3,
        hidden: 4,
        feedback: true,
    };
    ModelConfig {
        mcep_dim: D,
        latent_dim: DZ,
        speakers,
        n_cycles: 2,
        encoder: net,
        decoder: net,
        truncate: None,
        weights: LossWeights::default(),
    }
}

fn tiny_model(speakers: usize, seed: u64) -> (CycleVae, ParameterStore) {
    let mut store = ParameterStore::new();
    let model = CycleVae::new(tiny_config(speakers), &mut store, &mut rng(seed)).unwrap();
    (model, store)
}

fn code(i: usize, n: usize) -> SpeakerCode {
    SpeakerCode::new(i, n).unwrap()
}

/// `frames x (D + 5)` features: random spectra, plausible excitation with
/// alternating voicing.
fn features(frames: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let mut data = Vec::new();
    for t in 0..frames {
        for _ in 0..D {
            data.push(r.random_range(-1.0..1.0));
        }
        data.push(r.random_range(4.5..5.5));
        data.push(if t % 3 == 1 { 0.0 } else { 1.0 });
        for _ in 0..3 {
            data.push(r.random_range(0.0..1.0));
        }
    }
    Tensor::matrix(frames, D + 5, data).unwrap()
}

fn stats(n: usize) -> Vec<LogF0Stats> {
    (0..n).map(|i| LogF0Stats::new(4.8 + 0.3 * i as f64, 0.1 + 0.05 * i as f64).unwrap()).collect()
}

fn col(t: &Tensor, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|r| t.row_slice(r)[c]).collect()
}

fn cols(t: &Tensor, a: usize, b: usize) -> Vec<f64> {
    (0..t.rows()).flat_map(|r| t.row_slice(r)[a..b].to_vec()).collect()
}

// ---------- scalar reference forwards ----------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unvectorized conv -> GRU (with output feedback) -> dense.
fn block_reference(block: &RecurrentBlock, store: &ParameterStore, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cfg = block.config;
    let k = store.value(block.conv.kernel).data();
    let kb = store.value(block.conv.bias).data();
    let (cin, cout, w) = (cfg.in_dim, cfg.conv_channels, cfg.conv_width);
    let pad = (w - 1) / 2;
    let frames = x.len();
    let hs = cfg.hidden;
    let w_ih = store.value(block.gru.w_ih).data();
    let w_hh = store.value(block.gru.w_hh).data();
    let b_ih = store.value(block.gru.b_ih).data();
    let b_hh = store.value(block.gru.b_hh).data();
    let w_fb = block.feedback.map(|id| store.value(id).data().to_vec());
    let wo = store.value(block.out.weight).data();
    let bo = store.value(block.out.bias).data();

    let mut h = vec![0.0; hs];
    let mut y_prev: Option<Vec<f64>> = None;
    let mut out = Vec::new();
    for t in 0..frames {
        let mut c = vec![0.0; cout];
        for (o, v) in c.iter_mut().enumerate() {
            *v = kb[o];
            for kk in 0..w {
                let src = t as isize + kk as isize - pad as isize;
                if src < 0 || src >= frames as isize {
                    continue;
                }
                for i in 0..cin {
                    *v += x[src as usize][i] * k[(kk * cin + i) * cout + o];
                }
            }
        }
        let gate = |col: usize, h: &[f64], y_prev: &Option<Vec<f64>>| -> (f64, f64) {
            let mut gi = b_ih[col];
            for (i, ci) in c.iter().enumerate() {
                gi += ci * w_ih[i * 3 * hs + col];
            }
            if let (Some(wf), Some(y)) = (&w_fb, y_prev) {
                for (i, yi) in y.iter().enumerate() {
                    gi += yi * wf[i * 3 * hs + col];
                }
            }
            let mut gh = b_hh[col];
            for (i, hi) in h.iter().enumerate() {
                gh += hi * w_hh[i * 3 * hs + col];
            }
            (gi, gh)
        };
        let next: Vec<f64> = (0..hs)
            .map(|j| {
                let (ri, rh) = gate(j, &h, &y_prev);
                let (zi, zh) = gate(hs + j, &h, &y_prev);
                let (ni, nh) = gate(2 * hs + j, &h, &y_prev);
                let r = sigmoid(ri + rh);
                let z = sigmoid(zi + zh);
                (1.0 - z) * (ni + r * nh).tanh() + z * h[j]
            })
            .collect();
        h = next;
        let y: Vec<f64> = (0..cfg.out_dim)
            .map(|o| bo[o] + (0..hs).map(|i| h[i] * wo[i * cfg.out_dim + o]).sum::<f64>())
            .collect();
        out.push(y.clone());
        y_prev = Some(y);
    }
    out
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn skewed_norm(dim: usize) -> FeatureNorm {
    FeatureNorm {
        mean: (0..dim).map(|i| 0.1 * i as f64 - 0.2).collect(),
        std: (0..dim).map(|i| 0.5 + 0.25 * i as f64).collect(),
    }
}

#[test]
fn encoder_matches_scalar_reference() {
    let (mut model, store) = tiny_model(S, 1);
    model.set_norm(skewed_norm(D + 5)).unwrap();
    let x = features(3, 2);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let post = model.encode(&mut tape, &store, xv).unwrap();

    let xn: Vec<Vec<f64>> = rows(&x)
        .into_iter()
        .map(|r| r.iter().enumerate().map(|(i, v)| (v - model.norm.mean[i]) / model.norm.std[i]).collect())
        .collect();
    let expect = block_reference(&model.encoder, &store, &xn);
    for (t, e) in expect.iter().enumerate() {
        let got = [
            tape.value(post.mu).row_slice(t),
            tape.value(post.log_scale).row_slice(t),
            tape.value(post.logits).row_slice(t),
        ]
        .concat();
        assert_eq!(got.len(), 2 * DZ + S);
        for (a, b) in got.iter().zip(e) {
            assert!((a - b).abs() < 1e-12, "frame {t}: {a} vs {b}");
        }
    }
}

#[test]
fn decoder_matches_scalar_reference() {
    let (mut model, store) = tiny_model(S, 3);
    model.set_norm(skewed_norm(D + 5)).unwrap();
    let mut r = rng(4);
    let z = Tensor::matrix(3, DZ, (0..3 * DZ).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap();
    for spk in 0..S {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let y = model.decode(&mut tape, &store, zv, code(spk, S)).unwrap();
        let input: Vec<Vec<f64>> = rows(&z)
            .into_iter()
            .map(|mut row| {
                row.extend(code(spk, S).one_hot());
                row
            })
            .collect();
        let expect = block_reference(&model.decoder, &store, &input);
        for (t, e) in expect.iter().enumerate() {
            for (j, (a, b)) in tape.value(y).row_slice(t).iter().zip(e).enumerate() {
                let b = b * model.norm.std[j] + model.norm.mean[j];
                assert!((a - b).abs() < 1e-12, "speaker {spk} frame {t}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn zero_parameters_give_the_standard_posterior() {
    let (model, mut store) = tiny_model(3, 5);
    store.zero_values();
    let mut tape = Tape::new();
    let x = tape.constant(features(4, 6));
    let post = model.encode(&mut tape, &store, x).unwrap();
    assert!(tape.value(post.mu).data().iter().all(|v| *v == 0.0));
    assert!(tape.value(post.log_scale).data().iter().all(|v| *v == 0.0));
    let logits = tape.value(post.logits);
    for t in 0..logits.rows() {
        let row = logits.row_slice(t);
        assert!(row.iter().all(|v| *v == row[0]), "logits not uniform: {row:?}");
    }
}

#[test]
fn zero_parameters_decode_to_the_output_bias() {
    let (model, mut store) = tiny_model(S, 7);
    store.zero_values();
    let bias = vec![0.25, -1.5, 3.0];
    store.value_mut(model.decoder.out.bias).data_mut().copy_from_slice(&bias);
    let mut tape = Tape::new();
    let z = tape.constant(sample_laplace(&[5, DZ], &mut rng(8)));
    let y = model.decode(&mut tape, &store, z, code(1, S)).unwrap();
    for t in 0..5 {
        assert_eq!(tape.value(y).row_slice(t), &bias[..]);
    }
}

#[test]
fn the_code_pathway_moves_the_output() {
    // Only the code channels of the decoder input convolution and the output
    // bias are nonzero; everything else is zero. The GRU sees a constant input
    // of `k` for speaker 1 and 0 for speaker 0, so the difference is analytic.
    let (model, mut store) = tiny_model(S, 9);
    store.zero_values();
    let cfg = model.decoder.config;
    let (cin, cout) = (cfg.in_dim, cfg.conv_channels);
    let width = cfg.conv_width;
    // center tap only, channel 0 of the conv output, from speaker-1 input channel
    let center = (width - 1) / 2;
    let k = 0.8;
    store.value_mut(model.decoder.conv.kernel).data_mut()[(center * cin + DZ + 1) * cout] = k;
    // candidate gate of hidden unit 0 reads conv channel 0 with weight 1
    let hs = cfg.hidden;
    store.value_mut(model.decoder.gru.w_ih).data_mut()[2 * hs] = 1.0;
    // output channel 2 reads hidden unit 0
    store.value_mut(model.decoder.out.weight).data_mut()[2] = 1.0;

    let z = sample_laplace(&[3, DZ], &mut rng(10));
    let run = |spk: usize| {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let y = model.decode(&mut tape, &store, zv, code(spk, S)).unwrap();
        tape.value(y).clone()
    };
    let (y0, y1) = (run(0), run(1));
    assert!(y0.data().iter().all(|v| *v == 0.0));
    // update gate sigma(0) = 1/2: h_t = (1 - 1/2) tanh(k) + h_{t-1} / 2
    let n = k.tanh();
    let mut h = 0.0;
    for t in 0..3 {
        h = 0.5 * n + 0.5 * h;
        assert!((y1.row_slice(t)[2] - h).abs() < 1e-15);
        assert_eq!(y1.row_slice(t)[0], 0.0);
    }
}

#[test]
fn encoder_is_deterministic_and_checks_width() {
    let (model, store) = tiny_model(S, 11);
    let x = features(5, 12);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = model.encode(&mut tape, &store, xv).unwrap();
        (tape.value(p.mu).clone(), tape.value(p.log_scale).clone(), tape.value(p.logits).clone())
    };
    assert_eq!(run(), run());
    let mut tape = Tape::new();
    let bad = tape.constant(Tensor::zeros(&[5, D + 4]));
    assert!(matches!(model.encode(&mut tape, &store, bad), Err(Error::Shape(_))));
}

#[test]
fn decode_rejects_foreign_codes_and_widths() {
    let (model, store) = tiny_model(S, 13);
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[2, DZ]));
    assert!(model.decode(&mut tape, &store, z, code(0, 3)).is_err());
    let z3 = tape.constant(Tensor::zeros(&[2, DZ + 1]));
    assert!(model.decode(&mut tape, &store, z3, code(0, S)).is_err());
    assert!(SpeakerCode::new(2, 2).is_err());
    assert_eq!(code(1, 3).one_hot(), vec![0.0, 1.0, 0.0]);
}

#[test]
fn decoding_ignores_what_else_is_on_the_tape() {
    let (model, store) = tiny_model(S, 14);
    let z = sample_laplace(&[6, DZ], &mut rng(15));
    let mut alone = Tape::new();
    let zv = alone.constant(z.clone());
    let a = model.decode(&mut alone, &store, zv, code(0, S)).unwrap();

    let mut shared = Tape::new();
    let other = shared.constant(sample_laplace(&[9, DZ], &mut rng(16)));
    model.decode(&mut shared, &store, other, code(1, S)).unwrap();
    let zv = shared.constant(z);
    let b = model.decode(&mut shared, &store, zv, code(0, S)).unwrap();
    assert_eq!(alone.value(a), shared.value(b));
}

// ---------- reparameterization ----------

fn posterior(tape: &mut Tape, mu: Vec<f64>, log_scale: Vec<f64>) -> Posterior {
    let n = mu.len();
    Posterior {
        mu: tape.constant(Tensor::matrix(1, n, mu).unwrap()),
        log_scale: tape.constant(Tensor::matrix(1, n, log_scale).unwrap()),
        logits: tape.constant(Tensor::zeros(&[1, S])),
    }
}

#[test]
fn reparameterization_examples() {
    let mut tape = Tape::new();
    let p = posterior(&mut tape, vec![1.0, 2.0], vec![0.5f64.ln(), 2f64.ln()]);
    let eps = tape.constant(Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap());
    let z = reparameterize(&mut tape, &p, eps).unwrap();
    let zv = tape.value(z).data();
    assert!((zv[0] - 0.5).abs() < 1e-15 && (zv[1] - 4.0).abs() < 1e-15, "{zv:?}");

    let zero = tape.constant(Tensor::zeros(&[1, 2]));
    let z = reparameterize(&mut tape, &p, zero).unwrap();
    assert_eq!(tape.value(z).data(), &[1.0, 2.0]);

    let std = posterior(&mut tape, vec![0.0, 0.0], vec![0.0, 0.0]);
    let e = tape.constant(Tensor::matrix(1, 2, vec![0.3, -2.0]).unwrap());
    let z = reparameterize(&mut tape, &std, e).unwrap();
    assert_eq!(tape.value(z).data(), &[-0.3, 2.0]);

    let wrong = tape.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(reparameterize(&mut tape, &p, wrong), Err(Error::Shape(_))));
}

#[test]
fn vanishing_scale_matches_the_deterministic_path() {
    let (model, store) = tiny_model(S, 17);
    let mut tape = Tape::new();
    let x = tape.constant(features(4, 18));
    let post = model.encode(&mut tape, &store, x).unwrap();
    let tiny = tape.constant(Tensor::filled(&[4, DZ], -30.0));
    let squeezed = Posterior { log_scale: tiny, ..post };
    let eps = tape.constant(sample_laplace(&[4, DZ], &mut rng(19)));
    let z = reparameterize(&mut tape, &squeezed, eps).unwrap();
    let stochastic = model.decode(&mut tape, &store, z, code(1, S)).unwrap();
    let deterministic = model.decode(&mut tape, &store, post.mu, code(1, S)).unwrap();
    for (a, b) in tape.value(stochastic).data().iter().zip(tape.value(deterministic).data()) {
        assert!((a - b).abs() < 1e-8);
    }
}

// ---------- KL against quadrature ----------

#[test]
fn laplace_kl_matches_numerical_integration() {
    assert_eq!(kl_laplace(0.0, 1.0).unwrap(), 0.0);
    assert!((kl_laplace(1.0, 1.0).unwrap() - 0.36788).abs() < 1e-5);
    assert!((kl_laplace(0.0, 2.0).unwrap() - 0.30685).abs() < 1e-5);
    let mut worst = 0.0f64;
    for i in 0..=12 {
        let mu = -3.0 + 0.5 * i as f64;
        for s in [0.1, 0.2, 0.5, 1.0, 1.7, 3.0, 5.0] {
            let err = (kl_laplace(mu, s).unwrap() - kl_quadrature(mu, s)).abs();
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-6, "worst |closed form - quadrature| = {worst:e}");
    assert!(kl_laplace(0.0, 0.0).is_err());
    assert!(kl_laplace(0.0, -2.0).is_err());
}

// ---------- pivot sampling ----------

#[test]
fn pivot_sampling_is_uniform_over_the_other_speakers() {
    let mut r = rng(20);
    for _ in 0..100 {
        assert_eq!(sample_pivot(code(0, 2), &mut r).unwrap(), code(1, 2));
    }
    let mut counts = [0usize; 4];
    let n = 10_000;
    for _ in 0..n {
        counts[sample_pivot(code(2, 4), &mut r).unwrap().index()] += 1;
    }
    assert_eq!(counts[2], 0);
    for k in [0, 1, 3] {
        let f = counts[k] as f64 / n as f64;
        assert!((f - 1.0 / 3.0).abs() < 0.02, "speaker {k}: {f}");
    }
    let draw = |seed| (0..20).map(|_| sample_pivot(code(1, 5), &mut rng(seed)).unwrap()).collect::<Vec<_>>();
    assert_eq!(draw(3), draw(3));
}

proptest! {
    #[test]
    fn pivot_never_equals_source(count in 2usize..9, src in 0usize..9, seed in any::<u64>()) {
        let src = src % count;
        let mut r = rng(seed);
        for _ in 0..20 {
            let p = sample_pivot(code(src, count), &mut r).unwrap();
            prop_assert_ne!(p.index(), src);
            prop_assert_eq!(p.count(), count);
        }
    }
}

// ---------- cycle structure ----------

fn run_cycles(model: &CycleVae, store: &ParameterStore, x: &Tensor, pivots: &[SpeakerCode], seed: u64) -> (Tape, CycleOutputs) {
    let mut r = rng(seed);
    let noise: Vec<_> = pivots
        .iter()
        .map(|_| CycleNoise {
            eps_x: sample_laplace(&[x.rows(), DZ], &mut r),
            eps_y: sample_laplace(&[x.rows(), DZ], &mut r),
        })
        .collect();
    let mut tape = Tape::new();
    let out = cycle_forward(model, &mut tape, store, x, code(0, model.config.speakers), pivots, &noise, &stats(model.config.speakers))
        .unwrap();
    (tape, out)
}

#[test]
fn cycles_recycle_spectra_and_keep_the_natural_excitation() {
    let (model, store) = tiny_model(3, 21);
    let x = features(7, 22);
    let pivots = [code(1, 3), code(2, 3), code(1, 3)];
    let (tape, out) = run_cycles(&model, &store, &x, &pivots, 23);
    assert_eq!(out.cycles.len(), 3);
    assert_eq!(tape.value(out.cyclic_spectra(0)), tape.value(out.natural));
    assert_eq!(cols(tape.value(out.natural), 0, D), cols(&x, 0, D));
    for (n, step) in out.cycles.iter().enumerate() {
        let input = tape.value(step.encoder_input);
        assert_eq!(cols(input, 0, D), cols(tape.value(out.cyclic_spectra(n)), 0, D), "cycle {n} spectra");
        assert_eq!(cols(input, D, D + 5), cols(&x, D, D + 5), "cycle {n} excitation");
        assert_ne!(step.pivot, code(0, 3));
        assert_eq!(step.pivot, pivots[n]);
        for v in [step.reconstructed, step.converted, step.cyclic] {
            assert_eq!(tape.value(v).shape(), &[7, D]);
        }
        let y = tape.value(step.y_input);
        assert_eq!(cols(y, 0, D), cols(tape.value(step.converted), 0, D));
        // U/V and aperiodicity copied bit for bit; log-F0 mapped to the pivot
        assert_eq!(cols(y, D + 1, D + 5), cols(&x, D + 1, D + 5));
        let st = stats(3);
        let (src, tgt) = (st[0], st[step.pivot.index()]);
        for (a, b) in col(y, D).iter().zip(col(&x, D)) {
            let want = tgt.mean + tgt.std / src.std * (b - src.mean);
            assert!((a - want).abs() < 1e-12);
            assert_ne!(*a, b);
        }
    }
}

#[test]
fn cycle_forward_rejects_bad_pivots_and_missing_stats() {
    let (model, store) = tiny_model(S, 24);
    let x = features(4, 25);
    let noise = vec![CycleNoise::zeros(4, DZ)];
    let mut tape = Tape::new();
    let same = cycle_forward(&model, &mut tape, &store, &x, code(0, S), &[code(0, S)], &noise, &stats(S));
    assert!(matches!(same, Err(Error::InvalidArgument(_))));
    let short = cycle_forward(&model, &mut tape, &store, &x, code(0, S), &[code(1, S)], &noise, &stats(1));
    assert!(matches!(short, Err(Error::MissingStats(_))));
    let none = cycle_forward(&model, &mut tape, &store, &x, code(0, S), &[], &[], &stats(S));
    assert!(none.is_err());
}

// ---------- lower-bound loss ----------

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn mcd_frame(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a[1..].iter().zip(&b[1..]).map(|(x, y)| (x - y).powi(2)).sum();
    10.0 / 10f64.ln() * (2.0 * ss).sqrt()
}

struct HandCycle {
    rec: [[f64; 3]; 2],
    conv: [[f64; 3]; 2],
    cyc: [[f64; 3]; 2],
    mu_x: [[f64; 2]; 2],
    ls_x: [[f64; 2]; 2],
    lg_x: [[f64; 2]; 2],
    mu_y: [[f64; 2]; 2],
    ls_y: [[f64; 2]; 2],
    lg_y: [[f64; 2]; 2],
}

fn hand_cycle() -> HandCycle {
    HandCycle {
        rec: [[0.5, -0.2, 0.1], [1.0, 0.3, -0.4]],
        conv: [[0.0; 3]; 2],
        cyc: [[0.2, 0.1, 0.0], [0.7, 0.0, -0.1]],
        mu_x: [[0.3, -0.5], [0.0, 1.2]],
        ls_x: [[0.1, -0.3], [0.0, 0.4]],
        lg_x: [[2.0, -1.0], [0.5, 0.5]],
        mu_y: [[-0.2, 0.0], [0.9, -0.1]],
        ls_y: [[0.0, 0.2], [-0.6, 0.1]],
        lg_y: [[0.3, 0.1], [-2.0, 1.0]],
    }
}

#[test]
fn lower_bound_equals_hand_summed_terms() {
    let target = [[0.4, 0.0, 0.2], [0.9, 0.1, -0.3]];
    let h = hand_cycle();
    let m = |rows: &[[f64; 3]; 2]| Tensor::matrix(2, 3, rows.concat()).unwrap();
    let l = |rows: &[[f64; 2]; 2]| Tensor::matrix(2, 2, rows.concat()).unwrap();
    let weights = LossWeights {
        rec: 1.0,
        cyc: 0.5,
        kl_x: 2.0,
        kl_y: 1.0,
        ce_x: 0.25,
        ce_y: 1.0,
        power: 1.0,
    };
    let source = code(0, 2);
    let pivot = code(1, 2);

    for mask in [vec![true, true], vec![false, true]] {
        let mut tape = Tape::new();
        let tv = tape.constant(m(&target));
        let post = |tape: &mut Tape, mu, ls, lg| Posterior {
            mu: tape.constant(l(mu)),
            log_scale: tape.constant(l(ls)),
            logits: tape.constant(l(lg)),
        };
        let px = post(&mut tape, &h.mu_x, &h.ls_x, &h.lg_x);
        let py = post(&mut tape, &h.mu_y, &h.ls_y, &h.lg_y);
        let dummy = tape.constant(Tensor::zeros(&[2, D + 5]));
        let step = CycleStep {
            encoder_input: dummy,
            posterior_x: px,
            z: px.mu,
            reconstructed: tape.constant(m(&h.rec)),
            converted: tape.constant(m(&h.conv)),
            y_input: dummy,
            posterior_y: py,
            z_y: py.mu,
            cyclic: tape.constant(m(&h.cyc)),
            pivot,
        };
        let exc = tape.constant(Tensor::zeros(&[2, 5]));
        let outputs = CycleOutputs {
            natural: tv,
            excitation: exc,
            cycles: vec![step.clone(), step],
        };
        let (total, terms) = elbo_loss(&mut tape, &outputs, tv, source, &mask, &weights).unwrap();

        let frames: Vec<usize> = (0..2).filter(|&t| mask[t]).collect();
        let avg = |f: &dyn Fn(usize) -> f64| frames.iter().map(|&t| f(t)).sum::<f64>() / frames.len() as f64;
        let spectral = |pred: &[[f64; 3]; 2]| {
            avg(&|t| mcd_frame(&pred[t], &target[t]) + (pred[t][0] - target[t][0]).abs())
        };
        let kl = |mu: &[[f64; 2]; 2], ls: &[[f64; 2]; 2]| {
            avg(&|t| (0..2).map(|j| kl_laplace(mu[t][j], ls[t][j].exp()).unwrap()).sum())
        };
        let ce = |lg: &[[f64; 2]; 2], c: usize| avg(&|t| -log_softmax(&lg[t])[c]);
        let per_cycle = weights.rec * spectral(&h.rec)
            + weights.cyc * spectral(&h.cyc)
            + weights.kl_x * kl(&h.mu_x, &h.ls_x)
            + weights.kl_y * kl(&h.mu_y, &h.ls_y)
            + weights.ce_x * ce(&h.lg_x, 0)
            + weights.ce_y * ce(&h.lg_y, 1);
        let want = 2.0 * per_cycle;
        assert!((tape.scalar_value(total) - want).abs() < 1e-12, "{} vs {want}", tape.scalar_value(total));
        assert!((terms.total - want).abs() < 1e-12);
        assert!((terms.rec - 2.0 * spectral(&h.rec)).abs() < 1e-12);
        assert!((terms.kl_y - 2.0 * kl(&h.mu_y, &h.ls_y)).abs() < 1e-12);
        assert!((terms.ce_x - 2.0 * ce(&h.lg_x, 0)).abs() < 1e-12);
        // ties go to the lower index
        let acc_x = avg(&|t| if h.lg_x[t][0] >= h.lg_x[t][1] { 1.0 } else { 0.0 });
        assert_eq!(terms.acc_x, acc_x);
    }
}

#[test]
fn lower_bound_vanishes_at_its_minimum() {
    let target = Tensor::matrix(2, 3, vec![0.4, 0.0, 0.2, 0.9, 0.1, -0.3]).unwrap();
    let mut tape = Tape::new();
    let tv = tape.constant(target);
    let big = 60.0;
    let post = |tape: &mut Tape, c: usize| Posterior {
        mu: tape.constant(Tensor::zeros(&[2, 2])),
        log_scale: tape.constant(Tensor::zeros(&[2, 2])),
        logits: tape.constant(Tensor::matrix(2, 2, if c == 0 { vec![big, 0.0, big, 0.0] } else { vec![0.0, big, 0.0, big] }).unwrap()),
    };
    let (px, py) = (post(&mut tape, 0), post(&mut tape, 1));
    let step = CycleStep {
        encoder_input: tv,
        posterior_x: px,
        z: px.mu,
        reconstructed: tv,
        converted: tv,
        y_input: tv,
        posterior_y: py,
        z_y: py.mu,
        cyclic: tv,
        pivot: code(1, 2),
    };
    let outputs = CycleOutputs {
        natural: tv,
        excitation: tv,
        cycles: vec![step],
    };
    let (_, terms) = elbo_loss(&mut tape, &outputs, tv, code(0, 2), &[true, true], &LossWeights::default()).unwrap();
    assert_eq!(terms.kl_x, 0.0);
    assert_eq!(terms.kl_y, 0.0);
    assert_eq!(terms.rec, 0.0);
    assert!(terms.total < 1e-20, "{}", terms.total);
    assert!(elbo_loss(&mut tape, &outputs, tv, code(0, 2), &[true], &LossWeights::default()).is_err());
}

#[test]
fn lower_bound_gradients_match_finite_differences() {
    let (model, mut store) = tiny_model(S, 26);
    let x = features(3, 27);
    let pivots = [code(1, S), code(1, S)];
    let mut r = rng(28);
    let noise: Vec<_> = (0..2)
        .map(|_| CycleNoise {
            eps_x: sample_laplace(&[3, DZ], &mut r),
            eps_y: sample_laplace(&[3, DZ], &mut r),
        })
        .collect();
    let st = stats(S);
    let report = check_gradients(&mut store, 1e-5, usize::MAX, |tape, s| {
        let out = cycle_forward(&model, tape, s, &x, code(0, S), &pivots, &noise, &st)?;
        let (loss, _) = elbo_loss(tape, &out, out.natural, code(0, S), &[true, true, true], &model.config.weights)?;
        Ok(loss)
    })
    .unwrap();
    assert_eq!(report.checked, store.num_values());
    assert!(report.max_rel_error < 1e-4, "{} at {:?}", report.max_rel_error, report.worst);
}

// ---------- conversion ----------

fn sequence(frames: usize, seed: u64) -> AcousticFrameSequence {
    let x = features(frames, seed);
    let mut mcep = Vec::new();
    let mut exc = Vec::new();
    for t in 0..frames {
        let row = x.row_slice(t);
        mcep.extend_from_slice(&row[..D]);
        exc.push(ExcitationFrame {
            log_f0: row[D],
            voiced: row[D + 1] > 0.5,
            coded_ap: [row[D + 2], row[D + 3], row[D + 4]],
        });
    }
    AcousticFrameSequence::new(D, mcep, exc, 5.0).unwrap()
}

#[test]
fn conversion_keeps_duration_and_excitation_channels() {
    let (model, store) = tiny_model(S, 29);
    let seq = sequence(11, 30);
    let src = LogF0Stats::estimate(&seq.voiced_log_f0(), 1e-3).unwrap();
    let tgt = LogF0Stats::new(5.3, 0.07).unwrap();
    let out = convert(&model, &store, &seq, code(1, S), &src, &tgt).unwrap();
    assert_eq!(out.frames(), seq.frames());
    assert_eq!(out.frame_shift_ms, seq.frame_shift_ms);
    for (a, b) in out.excitation.iter().zip(&seq.excitation) {
        assert_eq!(a.voiced, b.voiced);
        assert_eq!(a.coded_ap, b.coded_ap);
    }
    let voiced = out.voiced_log_f0();
    let n = voiced.len() as f64;
    let mean = voiced.iter().sum::<f64>() / n;
    let std = (voiced.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((mean - tgt.mean).abs() < 1e-12 && (std - tgt.std).abs() < 1e-12, "{mean} {std}");

    // spectra come from z = mu under the target code
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(11, D + 5, seq.to_matrix()).unwrap());
    let post = model.encode(&mut tape, &store, x).unwrap();
    let y = model.decode(&mut tape, &store, post.mu, code(1, S)).unwrap();
    assert_eq!(tape.value(y).data(), &out.mcep[..]);

    let same = convert(&model, &store, &seq, code(0, S), &src, &src).unwrap();
    assert_eq!(same.excitation, seq.excitation);
}

#[test]
fn augmentation_features_reuse_the_natural_excitation() {
    let (model, store) = tiny_model(3, 31);
    let x = features(6, 32);
    let pivots = [code(1, 3), code(2, 3)];
    let (rec, cyclic) = augmentation_features(&model, &store, &x, code(0, 3), &pivots, &stats(3)).unwrap();
    assert_eq!(rec.shape(), &[6, D + 5]);
    assert_eq!(cols(&rec, D, D + 5), cols(&x, D, D + 5));
    assert_eq!(cyclic.iter().map(|(p, _)| *p).collect::<Vec<_>>(), vec![1, 2]);
    for (p, c) in &cyclic {
        assert_eq!(cols(c, D, D + 5), cols(&x, D, D + 5));
        let mut tape = Tape::new();
        let out = cycle_forward(&model, &mut tape, &store, &x, code(0, 3), &[code(*p, 3)], &[CycleNoise::zeros(6, DZ)], &stats(3)).unwrap();
        assert_eq!(cols(c, 0, D), tape.value(out.cycles[0].cyclic).data());
        assert_eq!(cols(&rec, 0, D), tape.value(out.cycles[0].reconstructed).data());
    }
    assert!(augmentation_features(&model, &store, &x, code(0, 3), &[], &stats(3)).is_err());
}

// ---------- training step ----------

fn items() -> Vec<TrainItem> {
    (0..S)
        .map(|s| TrainItem {
            features: features(5, 40 + s as u64),
            speaker: code(s, S),
            mask: vec![true, true, false, true, true],
        })
        .collect()
}

#[test]
fn training_steps_are_finite_and_reproducible() {
    let run = || {
        let (model, mut store) = tiny_model(S, 33);
        let mut adam = Adam::with_lr(1e-2);
        let mut r = rng(34);
        (0..5)
            .map(|_| train_step(&model, &mut store, &mut adam, &items(), &stats(S), &mut r).unwrap())
            .collect::<Vec<_>>()
    };
    let a = run();
    assert!(a.iter().all(|rep| rep.terms.total.is_finite() && rep.grad_norm.is_finite()));
    let b = run();
    assert_eq!(a, b);

    let (model, mut store) = tiny_model(S, 33);
    let err = train_step(&model, &mut store, &mut Adam::default(), &[], &stats(S), &mut rng(1));
    assert!(matches!(err, Err(Error::InvalidArgument(_))));
}
