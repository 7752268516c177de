use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// SGD or Adam with bias correction. Moment buffers are created lazily on
/// the first step and must keep matching the parameter list afterwards.
pub struct Optimizer<T: Float> {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Float> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Optimizer { kind, lr, step: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.expect_same_shape(g, &format!("optimizer step, parameter {i}"))?;
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::from_f64_lossy(self.lr);
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(Tensor::zeros_like).collect();
                    self.v = grads.iter().map(Tensor::zeros_like).collect();
                }
                for (i, g) in grads.iter().enumerate() {
                    self.m[i].expect_same_shape(g, "adam state")?;
                }
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let (b1, b2) = (T::from_f64_lossy(ADAM_BETA1), T::from_f64_lossy(ADAM_BETA2));
                let (one, eps) = (T::one(), T::from_f64_lossy(ADAM_EPS));
                let (c1, c2, lr) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2), T::from_f64_lossy(self.lr));
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    for (j, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = b1 * m[j] + (one - b1) * d;
                        v[j] = b2 * v[j] + (one - b2) * d * d;
                        *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm<T: Float>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(vec![v]).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap();
        let mut w = scalar(0.0);
        opt.step(&mut [&mut w], &[scalar(0.0)]).unwrap();
        assert_eq!(w.data()[0], 0.0);
        opt.step(&mut [&mut w], &[scalar(1.0)]).unwrap();
        assert!((w.data()[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [3.0f64, -0.02, 250.0] {
            let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3).unwrap();
            let mut w = scalar(0.5);
            opt.step(&mut [&mut w], &[scalar(g)]).unwrap();
            assert!(((0.5 - w.data()[0]).abs() - 1e-3).abs() < 1e-6, "g = {g}");
        }
    }

    #[test]
    fn shape_mismatch_is_shape_error() {
        let mut opt = Optimizer::<f64>::new(OptimizerKind::Adam, 1e-3).unwrap();
        let mut w = scalar(0.0);
        let g = Tensor::zeros(vec![2]).unwrap();
        assert!(matches!(opt.step(&mut [&mut w], &[g]), Err(Error::Shape(_))));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::from_vec(vec![3.0f64, 4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
    }
}
