use std::any::Any;

use super::{Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Non-overlapping max pooling over the leading (spatial or spatiotemporal)
/// axes of a channels-last tensor. Stride equals the window; trailing cells
/// that do not fill a whole window are dropped.
pub struct MaxPool {
    name: String,
    window: Vec<usize>,
}

struct PoolCache {
    argmax: Vec<usize>,
    input_dims: Vec<usize>,
}

impl MaxPool {
    /// `window` has one entry per pooled axis: two for `[H, W, C]` inputs,
    /// three for `[T, H, W, C]`.
    pub fn new(name: impl Into<String>, window: Vec<usize>) -> Result<Self> {
        if window.is_empty() || window.iter().any(|&w| w == 0) {
            return Err(Error::config(format!("invalid pooling window {window:?}")));
        }
        Ok(MaxPool { name: name.into(), window })
    }

    pub fn window(&self) -> &[usize] {
        &self.window
    }

    fn out_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.window.len() + 1 {
            return Err(Error::shape(format!(
                "{}: window {:?} does not fit input shape {input:?}",
                self.name, self.window
            )));
        }
        let mut out = Vec::with_capacity(input.len());
        for (&n, &w) in input.iter().zip(&self.window) {
            if w > n {
                return Err(Error::shape(format!(
                    "{}: window {:?} larger than input {input:?}",
                    self.name, self.window
                )));
            }
            out.push(n / w);
        }
        out.push(input[input.len() - 1]);
        Ok(out)
    }

    /// Forward returning the pooled tensor and the flat input index of each
    /// output's maximum (first maximum in scan order on ties).
    fn pool<T: Float>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let in_dims = x.dims();
        let out_dims = self.out_dims(in_dims)?;
        let c = in_dims[in_dims.len() - 1];
        // Promote to three pooled axes so one loop nest serves both ranks.
        let (mut id, mut od, mut win) = ([1usize; 3], [1usize; 3], [1usize; 3]);
        let lead = 3 - self.window.len();
        for i in 0..self.window.len() {
            id[lead + i] = in_dims[i];
            od[lead + i] = out_dims[i];
            win[lead + i] = self.window[i];
        }
        let n_out: usize = od.iter().product::<usize>() * c;
        let mut out = Vec::with_capacity(n_out);
        let mut argmax = Vec::with_capacity(n_out);
        let data = x.data();
        for t in 0..od[0] {
            for h in 0..od[1] {
                for w in 0..od[2] {
                    for ch in 0..c {
                        let mut best = T::neg_infinity();
                        let mut best_idx = usize::MAX;
                        for dt in 0..win[0] {
                            for dh in 0..win[1] {
                                for dw in 0..win[2] {
                                    let (st, sh, sw) =
                                        (t * win[0] + dt, h * win[1] + dh, w * win[2] + dw);
                                    let idx = ((st * id[1] + sh) * id[2] + sw) * c + ch;
                                    if best_idx == usize::MAX || data[idx] > best {
                                        best = data[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
        }
        Ok((Tensor::new(out_dims, out)?, argmax))
    }
}

pub fn maxpool_forward<T: Float>(x: &Tensor<T>, window: &[usize]) -> Result<Tensor<T>> {
    Ok(MaxPool::new("maxpool", window.to_vec())?.pool(x)?.0)
}

impl<T: Float> Layer<T> for MaxPool {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool
    }

    fn describe(&self) -> String {
        let w: Vec<String> = self.window.iter().map(|w| w.to_string()).collect();
        format!("maxpool{}d({})", self.window.len(), w.join("x"))
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.out_dims(input)
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        let (y, argmax) = self.pool(x)?;
        let cache = Cache::store(ctx, PoolCache { argmax, input_dims: x.dims().to_vec() });
        Ok((y, cache))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let c: &PoolCache = cache.get(&self.name)?;
        if grad_out.len() != c.argmax.len() {
            return Err(Error::shape(format!(
                "{}: upstream gradient {} does not match pooled output",
                self.name,
                grad_out.shape()
            )));
        }
        let mut grad_in = Tensor::zeros(c.input_dims.clone())?;
        let gi = grad_in.data_mut();
        for (&idx, &g) in c.argmax.iter().zip(grad_out.data()) {
            gi[idx] += g;
        }
        Ok(Grads { input: grad_in, params: Vec::new() })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn max_of_four() {
        let x = Tensor::<f64>::new(vec![2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(maxpool_forward(&x, &[2, 2]).unwrap().data(), &[4.0]);
    }

    #[test]
    fn constant_field() {
        let x = Tensor::<f64>::full(vec![6, 4, 3], 2.5).unwrap();
        let y = maxpool_forward(&x, &[2, 2]).unwrap();
        assert_eq!(y.dims(), &[3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn distinct_values_match_exhaustive_scan() {
        let mut values: Vec<f64> = (0..16).map(f64::from).collect();
        values.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let x = Tensor::new(vec![4, 4, 1], values.clone()).unwrap();
        let y = maxpool_forward(&x, &[2, 2]).unwrap();
        let mut expected = Vec::new();
        for pr in 0..2 {
            for pc in 0..2 {
                let mut m = f64::MIN;
                for r in 0..4 {
                    for c in 0..4 {
                        if r / 2 == pr && c / 2 == pc {
                            m = m.max(values[r * 4 + c]);
                        }
                    }
                }
                expected.push(m);
            }
        }
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn remainder_rows_are_truncated() {
        let x = Tensor::<f64>::new(vec![5, 3, 1], (0..15).map(f64::from).collect()).unwrap();
        let y = maxpool_forward(&x, &[2, 2]).unwrap();
        assert_eq!(y.dims(), &[2, 1, 1]);
        assert_eq!(y.data(), &[4.0, 10.0]);
    }

    #[test]
    fn window_larger_than_input_is_shape_error() {
        let x = Tensor::<f64>::zeros(vec![1, 4, 2]).unwrap();
        assert!(matches!(maxpool_forward(&x, &[2, 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_routes_to_argmax_and_preserves_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::uniform(vec![4, 6, 6, 2], 1.0, &mut rng).unwrap();
        let pool = MaxPool::new("p", vec![2, 2, 2]).unwrap();
        let mut ctx = ForwardCtx::eval_with_cache();
        let (y, cache) = pool.forward(&x, &mut ctx).unwrap();
        let g: Tensor<f64> = Tensor::uniform(y.dims().to_vec(), 1.0, &mut rng).unwrap();
        let gi = pool.backward(&cache, &g).unwrap().input;
        assert!((gi.sum() - g.sum()).abs() < 1e-12);
        let nonzero = gi.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, y.len());
    }
}
