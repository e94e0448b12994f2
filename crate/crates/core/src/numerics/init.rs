use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bound of the Xavier (Glorot) uniform distribution.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `[fan_in × fan_out]` matrix with i.i.d. entries uniform on `[-b, b]`,
/// `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Validation(format!(
            "xavier fans must be positive, got ({fan_in}, {fan_out})"
        )));
    }
    let b = xavier_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-b, b))
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
}
