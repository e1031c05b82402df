use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Channels whose spread is below this are only centered, not scaled.
const DEGENERATE_STD: f64 = 1e-6;

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation of each column over all rows
    /// of the given frame-major matrices.
    pub fn fit<'a>(matrices: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for m in matrices {
            ensure!(m.len() % dim == 0, Error::Shape(format!("matrix of {} values is not {dim} wide", m.len())));
            for row in m.chunks(dim) {
                n += 1;
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
        }
        ensure!(n > 0, Error::InvalidArgument("no frames to fit normalization".into()));
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n as f64 - m * m).max(0.0).sqrt();
                if s < DEGENERATE_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn head(&self, dim: usize) -> Self {
        Self {
            mean: self.mean[..dim].to_vec(),
            std: self.std[..dim].to_vec(),
        }
    }

    pub fn normalize(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let neg_mean = tape.constant(Tensor::row(self.mean.iter().map(|m| -m).collect()));
        let inv_std = tape.constant(Tensor::row(self.std.iter().map(|s| 1.0 / s).collect()));
        let centered = tape.add_row(x, neg_mean)?;
        tape.mul_row(centered, inv_std)
    }

    pub fn denormalize(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let mean = tape.constant(Tensor::row(self.mean.clone()));
        let std = tape.constant(Tensor::row(self.std.clone()));
        let scaled = tape.mul_row(y, std)?;
        tape.add_row(scaled, mean)
    }
}

