use std::any::Any;

use super::{Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Normalization over the last axis with learned gain and offset.
pub struct LayerNorm<T> {
    name: String,
    gain: Tensor<T>,
    offset: Tensor<T>,
    eps: f64,
}

struct NormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Float> LayerNorm<T> {
    pub fn new(name: impl Into<String>, width: usize) -> Result<Self> {
        Ok(LayerNorm {
            name: name.into(),
            gain: Tensor::ones(vec![width])?,
            offset: Tensor::zeros(vec![width])?,
            eps: 1e-5,
        })
    }

    pub fn width(&self) -> usize {
        self.gain.len()
    }

    pub fn gain_mut(&mut self) -> &mut Tensor<T> {
        &mut self.gain
    }

    pub fn offset_mut(&mut self) -> &mut Tensor<T> {
        &mut self.offset
    }
}

impl<T: Float> Layer<T> for LayerNorm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::LayerNorm
    }

    fn describe(&self) -> String {
        "layer_norm".into()
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.last() != Some(&self.width()) {
            return Err(Error::shape(format!(
                "{}: last axis must be {}, got {input:?}",
                self.name,
                self.width()
            )));
        }
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        self.output_dims(x.dims())?;
        let d = self.width();
        let n = T::from_usize(d).expect("usize converts");
        let eps = T::from_f64_lossy(self.eps);
        let mut normalized = x.clone();
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(x.len() / d);
        for (xr, yr) in normalized.data_mut().chunks_mut(d).zip(y.data_mut().chunks_mut(d)) {
            let mean = xr.iter().copied().sum::<T>() / n;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + eps).sqrt();
            inv_std.push(s);
            for (i, (xv, yv)) in xr.iter_mut().zip(yr.iter_mut()).enumerate() {
                *xv = (*xv - mean) * s;
                *yv = *xv * self.gain.data()[i] + self.offset.data()[i];
            }
        }
        let cache = Cache::store(ctx, NormCache { normalized, inv_std });
        Ok((y, cache))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let c: &NormCache<T> = cache.get(&self.name)?;
        grad_out.expect_same_shape(&c.normalized, "layer norm backward")?;
        let d = self.width();
        let n = T::from_usize(d).expect("usize converts");
        let mut d_gain = Tensor::zeros(vec![d])?;
        let mut d_offset = Tensor::zeros(vec![d])?;
        let mut d_x = grad_out.clone();
        let rows = c.normalized.data().chunks(d).zip(grad_out.data().chunks(d));
        for (r, (xh, g)) in rows.enumerate() {
            let mut mean_dxh = T::zero();
            let mut mean_dxh_xh = T::zero();
            for i in 0..d {
                d_gain.data_mut()[i] += g[i] * xh[i];
                d_offset.data_mut()[i] += g[i];
                let dxh = g[i] * self.gain.data()[i];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[i];
            }
            mean_dxh /= n;
            mean_dxh_xh /= n;
            let s = c.inv_std[r];
            for i in 0..d {
                let dxh = g[i] * self.gain.data()[i];
                d_x.data_mut()[r * d + i] = s * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
            }
        }
        Ok(Grads { input: d_x, params: vec![d_gain, d_offset] })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("gain".into(), &self.gain), ("offset".into(), &self.offset)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.gain, &mut self.offset]
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_have_zero_mean_unit_variance() {
        let ln = LayerNorm::<f64>::new("ln", 4).unwrap();
        let x = Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap();
        let (y, _) = ln.forward(&x, &mut ForwardCtx::inference()).unwrap();
        for row in y.data().chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_row_maps_to_offset() {
        let mut ln = LayerNorm::<f64>::new("ln", 3).unwrap();
        ln.offset_mut().data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let x = Tensor::full(vec![3], 7.0).unwrap();
        let (y, _) = ln.forward(&x, &mut ForwardCtx::inference()).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let ln = LayerNorm::<f32>::new("ln", 3).unwrap();
        let x = Tensor::zeros(vec![2, 4]).unwrap();
        assert!(matches!(ln.forward(&x, &mut ForwardCtx::inference()), Err(Error::Shape(_))));
    }
}
