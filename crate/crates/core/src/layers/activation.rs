use std::any::Any;

use serde::{Deserialize, Serialize};

use super::{Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::Result;
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    /// Along the last axis.
    Softmax,
}

impl Activation {
    pub fn label(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        }
    }

    /// Suffix used in blueprint labels: `+relu`, or nothing for identity.
    pub(crate) fn suffix(self) -> String {
        match self {
            Activation::Identity => String::new(),
            other => format!("+{}", other.label()),
        }
    }

    pub fn apply<T: Float>(self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Identity => Ok(x.clone()),
            Activation::Relu => Ok(x.map(relu)),
            Activation::Sigmoid => Ok(x.map(sigmoid)),
            Activation::Tanh => Ok(x.map(T::tanh)),
            Activation::Softmax => x.softmax(),
        }
    }

    /// Input gradient given the forward *output* `y`.
    pub fn backward<T: Float>(self, y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Identity => {
                y.expect_same_shape(grad_out, "identity backward")?;
                Ok(grad_out.clone())
            }
            // y > 0 exactly when x > 0, so the gradient at x = 0 is 0.
            Activation::Relu => {
                grad_out.zip_map(y, "relu backward", |g, y| if y > T::zero() { g } else { T::zero() })
            }
            Activation::Sigmoid => {
                grad_out.zip_map(y, "sigmoid backward", |g, y| g * y * (T::one() - y))
            }
            Activation::Tanh => grad_out.zip_map(y, "tanh backward", |g, y| g * (T::one() - y * y)),
            Activation::Softmax => {
                y.expect_same_shape(grad_out, "softmax backward")?;
                let n = *y.dims().last().expect("rank >= 1");
                let mut out = grad_out.clone();
                for (g_row, y_row) in out.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: T = g_row.iter().zip(y_row).map(|(&g, &y)| g * y).sum();
                    for (g, &y) in g_row.iter_mut().zip(y_row) {
                        *g = y * (*g - dot);
                    }
                }
                Ok(out)
            }
        }
    }
}

pub(crate) fn relu<T: Float>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub(crate) fn sigmoid<T: Float>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn activation_forward<T: Float>(kind: Activation, x: &Tensor<T>) -> Result<Tensor<T>> {
    kind.apply(x)
}

/// Stand-alone element-wise (or softmax) activation.
pub struct ActivationLayer {
    name: String,
    kind: Activation,
}

impl ActivationLayer {
    pub fn new(name: impl Into<String>, kind: Activation) -> Self {
        ActivationLayer { name: name.into(), kind }
    }

    pub fn activation(&self) -> Activation {
        self.kind
    }
}

impl<T: Float> Layer<T> for ActivationLayer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Activation
    }

    fn describe(&self) -> String {
        self.kind.label().to_string()
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        let y = self.kind.apply(x)?;
        let cache = Cache::store(ctx, y.clone());
        Ok((y, cache))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let y: &Tensor<T> = cache.get(&self.name)?;
        Ok(Grads { input: self.kind.backward(y, grad_out)?, params: Vec::new() })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
