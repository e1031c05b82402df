use rand::Rng;

use super::config::VocoderConfig;
use crate::dsp::Waveform;
use crate::error::{ensure, Error, Result};
use crate::nn::{sample_gaussian, Conv1d, Dense, FeatureNorm, ParamId, ParameterStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
struct ResidualLayer {
    conv: Conv1d,
    /// Frame-rate conditioning projection `cond_dim x gate_channels`.
    cond: ParamId,
    res: Dense,
    skip: Dense,
}

/// WaveNet-like stack of gated, dilated, non-causal convolutions mapping
/// Gaussian noise to a waveform under frame-level conditioning.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: VocoderConfig,
    input: Dense,
    layers: Vec<ResidualLayer>,
    post1: Dense,
    post2: Dense,
    /// Normalization applied to conditioning frames before projection.
    pub norm: FeatureNorm,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: VocoderConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let g = &config.generator;
        let half = g.gate_channels / 2;
        let input = Dense::new(store, "generator.input", 1, g.residual_channels, rng)?;
        let mut layers = Vec::with_capacity(g.layers);
        for (l, d) in g.dilations().into_iter().enumerate() {
            let name = format!("generator.layer{l}");
            let conv = Conv1d::new(
                store,
                &format!("{name}.conv"),
                g.residual_channels,
                g.gate_channels,
                g.kernel_width,
                d,
                false,
                rng,
            )?;
            let s = 1.0 / (config.cond_dim as f64).sqrt();
            let cond = store.add_uniform(format!("{name}.cond"), &[config.cond_dim, g.gate_channels], s, rng)?;
            let res = Dense::new(store, &format!("{name}.res"), half, g.residual_channels, rng)?;
            let skip = Dense::new(store, &format!("{name}.skip"), half, g.skip_channels, rng)?;
            layers.push(ResidualLayer { conv, cond, res, skip });
        }
        let post1 = Dense::new(store, "generator.post1", g.skip_channels, g.skip_channels, rng)?;
        let post2 = Dense::new(store, "generator.post2", g.skip_channels, 1, rng)?;
        let norm = FeatureNorm::identity(config.cond_dim);
        Ok(Self {
            config,
            input,
            layers,
            post1,
            post2,
            norm,
        })
    }

    pub fn set_norm(&mut self, norm: FeatureNorm) -> Result<()> {
        ensure!(
            norm.dim() == self.config.cond_dim,
            Error::Shape(format!("normalization has {} channels, expected {}", norm.dim(), self.config.cond_dim))
        );
        self.norm = norm;
        Ok(())
    }

    /// `noise` is `T x 1` with `T = frames * hop`; `cond` is `frames x cond_dim`
    /// (un-normalized). Returns `T x 1` samples in `(-1, 1)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, noise: Var, cond: Var) -> Result<Var> {
        let cfg = &self.config;
        let (t, frames) = (tape.value(noise).rows(), tape.value(cond).rows());
        ensure!(
            tape.value(noise).cols() == 1 && t == frames * cfg.hop,
            Error::Shape(format!(
                "noise of {:?} for {frames} frames at hop {}",
                tape.value(noise).shape(),
                cfg.hop
            ))
        );
        ensure!(
            tape.value(cond).cols() == cfg.cond_dim,
            Error::Shape(format!(
                "conditioning has {} channels, expected {}",
                tape.value(cond).cols(),
                cfg.cond_dim
            ))
        );
        let half = cfg.generator.gate_channels / 2;
        let c = self.norm.normalize(tape, cond)?;
        let mut x = self.input.forward(tape, store, noise)?;
        let mut skip: Option<Var> = None;
        for layer in &self.layers {
            let h = layer.conv.forward(tape, store, x)?;
            let w = tape.param(store, layer.cond);
            let cp = tape.matmul(c, w)?;
            let cp = tape.repeat_rows(cp, cfg.hop)?;
            let h = tape.add(h, cp)?;
            let a = tape.slice_cols(h, 0, half)?;
            let b = tape.slice_cols(h, half, 2 * half)?;
            let a = tape.tanh(a);
            let b = tape.sigmoid(b);
            let gated = tape.mul(a, b)?;
            let s = layer.skip.forward(tape, store, gated)?;
            skip = Some(match skip {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
            let r = layer.res.forward(tape, store, gated)?;
            let sum = tape.add(x, r)?;
            x = tape.scale(sum, std::f64::consts::FRAC_1_SQRT_2);
        }
        let s = skip.expect("at least one layer");
        let s = tape.relu(s);
        let s = self.post1.forward(tape, store, s)?;
        let s = tape.relu(s);
        let s = self.post2.forward(tape, store, s)?;
        Ok(tape.tanh(s))
    }

    /// Plain forward pass without gradient bookkeeping beyond one tape.
    pub fn generate(&self, store: &ParameterStore, noise: &[f64], cond: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let n = tape.constant(Tensor::matrix(noise.len(), 1, noise.to_vec())?);
        let c = tape.constant(cond.clone());
        let y = self.forward(&mut tape, store, n, c)?;
        Ok(tape.value(y).data().to_vec())
    }
}

/// Frames per synthesis chunk; longer inputs are processed in overlapping
/// chunks so memory stays bounded.
const CHUNK_FRAMES: usize = 200;

/// Draws `frames * hop` Gaussian samples and runs the generator once over
/// them. The output equals a single full-length pass: chunks carry enough
/// context frames on both sides to cover the receptive field.
pub fn synthesize<R: Rng + ?Sized>(
    generator: &Generator,
    store: &ParameterStore,
    cond: &Tensor,
    sample_rate: u32,
    rng: &mut R,
) -> Result<Waveform> {
    let cfg = &generator.config;
    let frames = cond.rows();
    ensure!(frames > 0, Error::EmptyUtterance);
    ensure!(
        cond.cols() == cfg.cond_dim,
        Error::Shape(format!("conditioning has {} channels, expected {}", cond.cols(), cfg.cond_dim))
    );
    let hop = cfg.hop;
    let noise = sample_gaussian(&[frames * hop, 1], rng).into_data();
    let ctx = cfg.generator.half_receptive_field().div_ceil(hop);
    let mut out = Vec::with_capacity(frames * hop);
    let mut start = 0;
    while start < frames {
        let end = (start + CHUNK_FRAMES).min(frames);
        let (lo, hi) = (start.saturating_sub(ctx), (end + ctx).min(frames));
        let chunk_cond = Tensor::matrix(
            hi - lo,
            cfg.cond_dim,
            cond.data()[lo * cfg.cond_dim..hi * cfg.cond_dim].to_vec(),
        )?;
        let y = generator.generate(store, &noise[lo * hop..hi * hop], &chunk_cond)?;
        out.extend_from_slice(&y[(start - lo) * hop..(end - lo) * hop]);
        start = end;
    }
    Waveform::new(out, sample_rate)
}
