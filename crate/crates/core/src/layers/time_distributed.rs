use std::any::Any;

use super::{Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Apply one layer, with shared parameters, to every slice of a `[T, ...]`
/// sequence.
pub struct TimeDistributed<T> {
    name: String,
    inner: Box<dyn Layer<T>>,
}

impl<T: Float> TimeDistributed<T> {
    pub fn new(name: impl Into<String>, inner: Box<dyn Layer<T>>) -> Self {
        TimeDistributed { name: name.into(), inner }
    }

    pub fn inner(&self) -> &dyn Layer<T> {
        self.inner.as_ref()
    }
}

pub fn time_distributed<T: Float>(layer: &dyn Layer<T>, xs: &Tensor<T>) -> Result<Tensor<T>> {
    let mut ctx = ForwardCtx::inference();
    let mut outs = Vec::with_capacity(xs.dims()[0]);
    for t in 0..xs.dims()[0] {
        let slice = xs.index_axis0(t)?;
        let (y, _) = layer.forward(&slice, &mut ctx).map_err(|e| e.context(format!("time step {t}")))?;
        outs.push(y);
    }
    Tensor::stack(&outs)
}

impl<T: Float> Layer<T> for TimeDistributed<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::TimeDistributed
    }

    fn describe(&self) -> String {
        format!("time_distributed({})", self.inner.describe())
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let inner_in = if input.len() == 1 { vec![1] } else { input[1..].to_vec() };
        let mut out = vec![input[0]];
        out.extend(self.inner.output_dims(&inner_in)?);
        Ok(out)
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        let steps = x.dims()[0];
        let mut outs = Vec::with_capacity(steps);
        let mut caches = Vec::with_capacity(steps);
        for t in 0..steps {
            let slice = x.index_axis0(t)?;
            let (y, c) = self
                .inner
                .forward(&slice, ctx)
                .map_err(|e| e.context(format!("{} time step {t}", self.name)))?;
            outs.push(y);
            caches.push(c);
        }
        let y = Tensor::stack(&outs)?;
        let cache = Cache::store(ctx, (caches, x.dims().to_vec()));
        Ok((y, cache))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let (caches, in_dims): &(Vec<Cache>, Vec<usize>) = cache.get(&self.name)?;
        let mut input_slices = Vec::with_capacity(caches.len());
        let mut params: Vec<Tensor<T>> = Vec::new();
        for (t, c) in caches.iter().enumerate() {
            let g = grad_out.index_axis0(t)?;
            let grads = self
                .inner
                .backward(c, &g)
                .map_err(|e| e.context(format!("{} time step {t}", self.name)))?;
            input_slices.push(grads.input);
            if params.is_empty() {
                params = grads.params;
            } else {
                for (acc, p) in params.iter_mut().zip(&grads.params) {
                    acc.add_assign(p)?;
                }
            }
        }
        let input = Tensor::stack(&input_slices)?.into_reshaped(in_dims.clone())?;
        Ok(Grads { input, params })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.inner.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.inner.params_mut()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Activation, Conv, Padding};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv() -> Conv<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        Conv::new_2d("c", 3, 2, 3, Padding::Same, Activation::Relu, &mut rng).unwrap()
    }

    #[test]
    fn single_step_equals_single_application() {
        let c = conv();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = Tensor::<f64>::uniform(vec![4, 4, 2], 1.0, &mut rng).unwrap();
        let seq = Tensor::stack(&[frame.clone()]).unwrap();
        let once = crate::layers::conv2d_forward(&c, &frame).unwrap();
        assert_eq!(time_distributed(&c, &seq).unwrap().index_axis0(0).unwrap(), once);
    }

    #[test]
    fn constant_sequence_gives_constant_outputs() {
        let c = conv();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = Tensor::<f64>::uniform(vec![4, 4, 2], 1.0, &mut rng).unwrap();
        let seq = Tensor::stack(&vec![frame; 4]).unwrap();
        let y = time_distributed(&c, &seq).unwrap();
        let first = y.index_axis0(0).unwrap();
        for t in 1..4 {
            assert_eq!(y.index_axis0(t).unwrap(), first);
        }
    }

    #[test]
    fn matches_explicit_loop_bit_exactly() {
        let td = TimeDistributed::new("td", Box::new(conv()));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = Tensor::<f64>::uniform(vec![5, 4, 4, 2], 1.0, &mut rng).unwrap();
        let (y, _) = td.forward(&xs, &mut ForwardCtx::inference()).unwrap();
        for t in 0..5 {
            let slice = xs.index_axis0(t).unwrap();
            let want = crate::layers::conv2d_forward(&conv(), &slice).unwrap();
            assert_eq!(y.index_axis0(t).unwrap().data(), want.data());
        }
    }

    #[test]
    fn slice_errors_name_the_time_index() {
        let td = TimeDistributed::new("td", Box::new(conv()));
        let xs = Tensor::<f64>::zeros(vec![2, 4, 4, 5]).unwrap();
        let err = td.forward(&xs, &mut ForwardCtx::inference()).err().unwrap().to_string();
        assert!(err.contains("time step 0"), "{err}");
    }
}
