use std::any::Any;

use super::{Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Ordered chain of layers. Parameter names are prefixed with the child's
/// name, e.g. `conv1.kernel`.
pub struct Sequential<T> {
    name: String,
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Float> Sequential<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Sequential { name: name.into(), layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn push_boxed(&mut self, layer: Box<dyn Layer<T>>) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn layers(&self) -> &[Box<dyn Layer<T>>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Blueprint label of every top-level layer, in order.
    pub fn blueprint(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.describe()).collect()
    }
}

impl<T: Float> Layer<T> for Sequential<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::Sequential
    }

    fn describe(&self) -> String {
        format!("[{}]", self.blueprint().join(", "))
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut dims = input.to_vec();
        for layer in &self.layers {
            dims = layer.output_dims(&dims)?;
        }
        Ok(dims)
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&current, ctx)?;
            caches.push(c);
            current = y;
        }
        Ok((current, Cache::store(ctx, caches)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let caches: &Vec<Cache> = cache.get(&self.name)?;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (layer, c) in self.layers.iter().zip(caches).rev() {
            let grads = layer.backward(c, &g)?;
            g = grads.input;
            per_layer.push(grads.params);
        }
        let params = per_layer.into_iter().rev().flatten().collect();
        Ok(Grads { input: g, params })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .flat_map(|l| {
                let prefix = l.name().to_string();
                l.params().into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
