use std::any::Any;

use rand::Rng;

use super::{Cache, ForwardCtx, Grads, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Inverted dropout: in train mode keep each element with probability
/// `1 - rate` and scale survivors by `1 / (1 - rate)`; eval mode is the
/// identity.
pub struct Dropout {
    name: String,
    rate: f64,
    fixed_mask: Option<Vec<bool>>,
}

impl Dropout {
    pub fn new(name: impl Into<String>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { name: name.into(), rate, fixed_mask: None })
    }

    /// Always apply `mask` in train mode instead of sampling one.
    pub fn with_fixed_mask(name: impl Into<String>, rate: f64, mask: Vec<bool>) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { name: name.into(), rate, fixed_mask: Some(mask) })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

fn sample_mask(rate: f64, n: usize, rng: &mut impl Rng) -> Vec<bool> {
    (0..n).map(|_| rng.gen::<f64>() >= rate).collect()
}

/// Multiply by the kept/dropped mask and rescale.
pub fn dropout_with_mask<T: Float>(x: &Tensor<T>, mask: &[bool], rate: f64) -> Result<Tensor<T>> {
    check_rate(rate)?;
    if mask.len() != x.len() {
        return Err(Error::shape(format!(
            "dropout mask has {} entries for input {}",
            mask.len(),
            x.shape()
        )));
    }
    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
    let data = x
        .data()
        .iter()
        .zip(mask)
        .map(|(&v, &keep)| if keep { v * scale } else { T::zero() })
        .collect();
    Tensor::new(x.dims().to_vec(), data)
}

pub fn dropout_forward<T: Float>(
    rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_rate(rate)?;
    match mode {
        Mode::Eval => Ok(x.clone()),
        Mode::Train if rate == 0.0 => Ok(x.clone()),
        Mode::Train => dropout_with_mask(x, &sample_mask(rate, x.len(), rng), rate),
    }
}

impl<T: Float> Layer<T> for Dropout {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }

    fn describe(&self) -> String {
        format!("dropout({})", self.rate)
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        let mask = match (ctx.mode, &self.fixed_mask) {
            (Mode::Eval, _) => None,
            (Mode::Train, Some(m)) => Some(m.clone()),
            (Mode::Train, None) if self.rate == 0.0 => None,
            (Mode::Train, None) => Some(sample_mask(self.rate, x.len(), ctx.rng())),
        };
        let y = match &mask {
            Some(m) => dropout_with_mask(x, m, self.rate)?,
            None => x.clone(),
        };
        Ok((y, Cache::store(ctx, mask)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let mask: &Option<Vec<bool>> = cache.get(&self.name)?;
        let input = match mask {
            Some(m) => dropout_with_mask(grad_out, m, self.rate)?,
            None => grad_out.clone(),
        };
        Ok(Grads { input, params: Vec::new() })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
