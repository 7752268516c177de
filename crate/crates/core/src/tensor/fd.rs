use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `g[i] = (f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)`.
///
/// This is the reference every analytic backward pass is checked against,
/// so it deliberately does nothing clever.
pub fn finite_difference_gradient<T, F>(mut f: F, x: &Tensor<T>, eps: T) -> Result<Tensor<T>>
where
    T: Float,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if !(eps > T::zero()) {
        return Err(Error::Oracle(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    let two_eps = eps + eps;
    for i in 0..x.len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = original - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite function value while probing coordinate {i}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / two_eps;
    }
    Ok(grad)
}
