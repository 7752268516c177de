use std::any::Any;

use super::{Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub fn flatten<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.flatten()
}

/// Row-major linearization to a vector.
pub struct Flatten {
    name: String,
}

impl Flatten {
    pub fn new(name: impl Into<String>) -> Self {
        Flatten { name: name.into() }
    }
}

impl<T: Float> Layer<T> for Flatten {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Flatten
    }

    fn describe(&self) -> String {
        "flatten".into()
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(vec![input.iter().product()])
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        Ok((x.flatten(), Cache::store(ctx, x.dims().to_vec())))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let dims: &Vec<usize> = cache.get(&self.name)?;
        Ok(Grads { input: grad_out.reshape(dims.clone())?, params: Vec::new() })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Average a `[T, D]` sequence over time into `[D]`.
pub struct MeanOverTime {
    name: String,
}

impl MeanOverTime {
    pub fn new(name: impl Into<String>) -> Self {
        MeanOverTime { name: name.into() }
    }
}

impl<T: Float> Layer<T> for MeanOverTime {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::MeanOverTime
    }

    fn describe(&self) -> String {
        "mean_over_time".into()
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [_, d] => Ok(vec![*d]),
            _ => Err(Error::shape(format!("{}: expected [T, D], got {input:?}", self.name))),
        }
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        x.expect_rank(2, &self.name)?;
        let (t, d) = (x.dims()[0], x.dims()[1]);
        let mut out = vec![T::zero(); d];
        for row in x.data().chunks(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::from_usize(t).expect("usize converts");
        out.iter_mut().for_each(|v| *v *= inv);
        Ok((Tensor::new(vec![d], out)?, Cache::store(ctx, t)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let t: &usize = cache.get(&self.name)?;
        grad_out.expect_rank(1, &self.name)?;
        let inv = T::one() / T::from_usize(*t).expect("usize converts");
        let row = grad_out.scale(inv);
        let data = row.data().repeat(*t);
        Ok(Grads { input: Tensor::new(vec![*t, grad_out.len()], data)?, params: Vec::new() })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
