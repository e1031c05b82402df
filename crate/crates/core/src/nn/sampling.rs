use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;

/// Lower bound on `1 - 2|U|` so that `|U| = 1/2` stays finite.
pub const LAPLACE_LOG_FLOOR: f64 = 1e-12;

/// Maps `u` in `(-1/2, 1/2]` to `sign(u) * ln(1 - 2|u|)`, a standard
/// Laplace variate.
pub fn laplace_from_uniform(u: f64) -> f64 {
    let mag = (1.0 - 2.0 * u.abs()).max(LAPLACE_LOG_FLOOR).ln();
    if u > 0.0 {
        mag
    } else if u < 0.0 {
        -mag
    } else {
        0.0
    }
}

/// Draws standard Laplace noise of the given shape.
pub fn sample_laplace<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    // random::<f64>() is in [0, 1), so 0.5 - it lies in (-1/2, 1/2]
    let data = (0..n)
        .map(|_| laplace_from_uniform(0.5 - rng.random::<f64>()))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// Draws i.i.d. standard normal noise of the given shape.
pub fn sample_gaussian<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}
