use std::any::Any;

use rand::Rng;

use super::init::glorot;
use super::{Activation, Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Fully connected layer `y_i = Σ_j A_ij x_j + b_i` with a fused
/// element-wise activation.
///
/// Accepts a vector `[in]` or a matrix `[N, in]`, in which case the same map
/// is applied to every row (position-wise).
pub struct Dense<T> {
    name: String,
    weight: Tensor<T>,
    bias: Tensor<T>,
    activation: Activation,
}

struct DenseCache<T> {
    input: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Float> Dense<T> {
    pub fn new(
        name: impl Into<String>,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = glorot(vec![outputs, inputs], inputs, outputs, rng)?;
        Dense::from_params(name, weight, Tensor::zeros(vec![outputs])?, activation)
    }

    /// `weight` is `[out, in]`, `bias` is `[out]`.
    pub fn from_params(
        name: impl Into<String>,
        weight: Tensor<T>,
        bias: Tensor<T>,
        activation: Activation,
    ) -> Result<Self> {
        weight.expect_rank(2, "dense weight")?;
        bias.expect_dims(&[weight.dims()[0]], "dense bias")?;
        if activation == Activation::Softmax {
            return Err(Error::config("dense activation must be element-wise"));
        }
        Ok(Dense { name: name.into(), weight, bias, activation })
    }

    pub fn inputs(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    fn as_rows(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match x.dims() {
            [n] if *n == self.inputs() => x.reshape(vec![1, *n]),
            [_, n] if *n == self.inputs() => Ok(x.clone()),
            _ => Err(Error::shape(format!(
                "{}: expected [{}] or [N, {}] input, got {}",
                self.name,
                self.inputs(),
                self.inputs(),
                x.shape()
            ))),
        }
    }

    fn affine(&self, rows: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = rows.matmul_nt(&self.weight)?;
        let n = self.outputs();
        for row in y.data_mut().chunks_mut(n) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }
}

pub fn dense_forward<T: Float>(p: &Dense<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(p.forward(x, &mut ForwardCtx::inference())?.0)
}

impl<T: Float> Layer<T> for Dense<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn describe(&self) -> String {
        format!("dense({}){}", self.outputs(), self.activation.suffix())
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [n] if *n == self.inputs() => Ok(vec![self.outputs()]),
            [r, n] if *n == self.inputs() => Ok(vec![*r, self.outputs()]),
            _ => Err(Error::shape(format!(
                "{}: input shape {input:?} incompatible with {} inputs",
                self.name,
                self.inputs()
            ))),
        }
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        let rows = self.as_rows(x)?;
        let pre = self.affine(&rows)?;
        let y = self.activation.apply(&pre)?;
        let out_dims = self.output_dims(x.dims())?;
        let y = y.into_reshaped(out_dims)?;
        let cache = if ctx.caching {
            Cache::store(ctx, DenseCache { input: x.clone(), output: y.clone() })
        } else {
            Cache::empty()
        };
        Ok((y, cache))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let c: &DenseCache<T> = cache.get(&self.name)?;
        let g = self.activation.backward(&c.output, grad_out)?;
        let rows = self.as_rows(&c.input)?;
        let g_rows = g.reshape(vec![rows.dims()[0], self.outputs()])?;
        let d_weight = g_rows.matmul_tn(&rows)?;
        let mut d_bias = Tensor::zeros(vec![self.outputs()])?;
        for row in g_rows.data().chunks(self.outputs()) {
            for (b, &v) in d_bias.data_mut().iter_mut().zip(row) {
                *b += v;
            }
        }
        let d_input = g_rows.matmul(&self.weight)?.into_reshaped(c.input.dims().to_vec())?;
        Ok(Grads { input: d_input, params: vec![d_weight, d_bias] })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
