use rand::Rng;

use crate::autodiff::Tensor;

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn uniform(rng: &mut impl Rng, dims: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(dims.to_vec(), data).expect("finite init")
}
