use rand::Rng;

use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Uniform limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot<T: Float>(
    dims: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    Tensor::uniform(dims, glorot_limit(fan_in, fan_out), rng)
}
