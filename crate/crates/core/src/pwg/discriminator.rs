use rand::Rng;

use super::config::DiscriminatorConfig;
use crate::error::{ensure, Error, Result};
use crate::nn::{Conv1d, ParameterStore, Tape, Var};

/// Stack of dilated non-causal convolutions with leaky-ReLU activations,
/// producing one unbounded realness score per sample.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    convs: Vec<Conv1d>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        ensure!(config.layers >= 2, Error::Config("discriminator needs >= 2 layers".into()));
        let dilations = config.dilations();
        let mut convs = Vec::with_capacity(config.layers);
        for (l, d) in dilations.into_iter().enumerate() {
            let cin = if l == 0 { 1 } else { config.channels };
            let cout = if l + 1 == config.layers { 1 } else { config.channels };
            convs.push(Conv1d::new(
                store,
                &format!("discriminator.conv{l}"),
                cin,
                cout,
                config.kernel_width,
                d,
                false,
                rng,
            )?);
        }
        Ok(Self { config, convs })
    }

    /// Scores a `T x 1` waveform; `T` must cover the receptive field.
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, wave: Var) -> Result<Var> {
        let t = tape.value(wave).rows();
        ensure!(
            tape.value(wave).cols() == 1 && t >= self.config.receptive_field(),
            Error::InvalidArgument(format!(
                "discriminator input of {t} samples is shorter than its receptive field {}",
                self.config.receptive_field()
            ))
        );
        let mut x = wave;
        let last = self.convs.len() - 1;
        for (l, conv) in self.convs.iter().enumerate() {
            x = conv.forward(tape, store, x)?;
            if l < last {
                x = tape.leaky_relu(x, self.config.leaky_slope);
            }
        }
        Ok(x)
    }
}
