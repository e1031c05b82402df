//! Minimal reverse-mode automatic differentiation with the layers the
//! spectral model and the vocoder need.

pub mod gradcheck;
pub mod layers;
pub mod norm;
pub mod params;
pub mod sampling;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use layers::{Conv1d, Dense, GruCell, RecurrentBlock, RecurrentConfig};
pub use norm::FeatureNorm;
pub use params::{adam_update, Adam, ParamEntry, ParamId, ParameterStore};
pub use sampling::{laplace_from_uniform, sample_gaussian, sample_laplace};
pub use tape::{StftSpec, Tape, Var};
pub use tensor::Tensor;

/// Deterministic generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;
