use rand::Rng;

use super::params::{ParamId, ParameterStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

fn init_scale(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Fully connected layer: `x W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let s = init_scale(in_dim);
        Ok(Self {
            weight: store.add_uniform(format!("{name}.weight"), &[in_dim, out_dim], s, rng)?,
            bias: store.add_uniform(format!("{name}.bias"), &[1, out_dim], s, rng)?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Dilated 1-D convolution over time with `same` output length.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub dilation: usize,
    pub causal: bool,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        width: usize,
        dilation: usize,
        causal: bool,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(width >= 1, Error::InvalidArgument("kernel width must be >= 1".into()));
        let s = init_scale(in_ch * width);
        Ok(Self {
            kernel: store.add_uniform(format!("{name}.kernel"), &[width, in_ch, out_ch], s, rng)?,
            bias: store.add_uniform(format!("{name}.bias"), &[1, out_ch], s, rng)?,
            width,
            dilation,
            causal,
            in_ch,
            out_ch,
        })
    }

    /// Number of input samples that influence one output sample.
    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.width - 1) + 1
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let k = tape.param(store, self.kernel);
        let b = tape.param(store, self.bias);
        tape.conv1d(x, k, Some(b), self.dilation, self.causal)
    }
}

/// Gated recurrent unit (reset / update / candidate gate ordering).
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let s = init_scale(hidden);
        Ok(Self {
            w_ih: store.add_uniform(format!("{name}.w_ih"), &[in_dim, 3 * hidden], s, rng)?,
            w_hh: store.add_uniform(format!("{name}.w_hh"), &[hidden, 3 * hidden], s, rng)?,
            b_ih: store.add_uniform(format!("{name}.b_ih"), &[1, 3 * hidden], s, rng)?,
            b_hh: store.add_uniform(format!("{name}.b_hh"), &[1, 3 * hidden], s, rng)?,
            in_dim,
            hidden,
        })
    }

    /// Input-side gate pre-activations `x W_ih + b_ih` for every row of `x`.
    pub fn input_gates(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w_ih);
        let b = tape.param(store, self.b_ih);
        let g = tape.matmul(x, w)?;
        tape.add_row(g, b)
    }

    /// Update from precomputed input gates `gi` (`1 x 3H`).
    pub fn step_with_gates(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        gi: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.w_hh);
        let b = tape.param(store, self.b_hh);
        let gh = tape.matmul(h_prev, w)?;
        let gh = tape.add_row(gh, b)?;
        tape.gru_update(gi, gh, h_prev)
    }

    /// One recurrent step: `x_t` is `1 x in`, `h_prev` is `1 x H`.
    pub fn step(&self, tape: &mut Tape, store: &ParameterStore, x_t: Var, h_prev: Var) -> Result<Var> {
        ensure!(
            tape.value(x_t).cols() == self.in_dim && tape.value(h_prev).cols() == self.hidden,
            Error::Shape(format!(
                "gru step expects x of {} and h of {}, got {:?} and {:?}",
                self.in_dim,
                self.hidden,
                tape.value(x_t).shape(),
                tape.value(h_prev).shape()
            ))
        );
        let gi = self.input_gates(tape, store, x_t)?;
        self.step_with_gates(tape, store, gi, h_prev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecurrentConfig {
    pub in_dim: usize,
    pub conv_channels: usize,
    pub conv_width: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Feed the previous frame's output-layer result back into the GRU input.
    pub feedback: bool,
    /// Detach the recurrent state every this many frames (`None`: full BPTT).
    pub truncate: Option<usize>,
}

/// Convolutional input layer, one GRU layer, and one dense output layer
/// whose output is fed back to the recurrent input at the next frame.
#[derive(Debug, Clone)]
pub struct RecurrentBlock {
    pub config: RecurrentConfig,
    pub conv: Conv1d,
    pub gru: GruCell,
    pub feedback: Option<ParamId>,
    pub out: Dense,
}

impl RecurrentBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        config: RecurrentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = Conv1d::new(
            store,
            &format!("{name}.conv"),
            config.in_dim,
            config.conv_channels,
            config.conv_width,
            1,
            false,
            rng,
        )?;
        let gru = GruCell::new(store, &format!("{name}.gru"), config.conv_channels, config.hidden, rng)?;
        let feedback = if config.feedback {
            let s = init_scale(config.hidden);
            Some(store.add_uniform(
                format!("{name}.gru.w_fb"),
                &[config.out_dim, 3 * config.hidden],
                s,
                rng,
            )?)
        } else {
            None
        };
        let out = Dense::new(store, &format!("{name}.out"), config.hidden, config.out_dim, rng)?;
        Ok(Self {
            config,
            conv,
            gru,
            feedback,
            out,
        })
    }

    /// Runs the block over a `T x in_dim` sequence, returning `T x out_dim`.
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let cfg = &self.config;
        ensure!(
            tape.value(x).cols() == cfg.in_dim,
            Error::Shape(format!(
                "recurrent block expects {} input channels, got {}",
                cfg.in_dim,
                tape.value(x).cols()
            ))
        );
        let frames = tape.value(x).rows();
        let c = self.conv.forward(tape, store, x)?;
        let gi_all = self.gru.input_gates(tape, store, c)?;
        let w_fb = self.feedback.map(|id| tape.param(store, id));
        let mut h = tape.constant(Tensor::zeros(&[1, cfg.hidden]));
        let mut y_prev: Option<Var> = None;
        let mut outs = Vec::with_capacity(frames);
        for t in 0..frames {
            if let Some(k) = cfg.truncate {
                if k > 0 && t > 0 && t % k == 0 {
                    h = tape.constant(tape.value(h).clone());
                    y_prev = y_prev.map(|y| tape.constant(tape.value(y).clone()));
                }
            }
            let mut gi = tape.slice_rows(gi_all, t, t + 1)?;
            if let (Some(w), Some(y)) = (w_fb, y_prev) {
                let fb = tape.matmul(y, w)?;
                gi = tape.add(gi, fb)?;
            }
            h = self.gru.step_with_gates(tape, store, gi, h)?;
            let y = self.out.forward(tape, store, h)?;
            outs.push(y);
            y_prev = Some(y);
        }
        tape.concat_rows(&outs)
    }
}
