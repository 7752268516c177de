use std::any::Any;

use rand::Rng;

use super::{Activation, Cache, Dense, ForwardCtx, Grads, LayerNorm, Layer, LayerKind, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Sinusoidal position table `[steps, width]`:
/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding<T: Float>(steps: usize, width: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(steps * width);
    for p in 0..steps {
        for j in 0..width {
            let pair = (j - j % 2) as f64;
            let angle = p as f64 / 10000f64.powf(pair / width as f64);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            data.push(T::from_f64_lossy(v));
        }
    }
    Tensor::new(vec![steps, width], data)
}

/// Adds the sinusoidal table to a `[T, d]` sequence.
pub struct PositionalEncoding {
    name: String,
}

impl PositionalEncoding {
    pub fn new(name: impl Into<String>) -> Self {
        PositionalEncoding { name: name.into() }
    }
}

impl<T: Float> Layer<T> for PositionalEncoding {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::PositionalEncoding
    }

    fn describe(&self) -> String {
        "positional_encoding".into()
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 2 {
            return Err(Error::shape(format!("{}: expected [T, d], got {input:?}", self.name)));
        }
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        <Self as Layer<T>>::output_dims(self, x.dims())?;
        let pe = positional_encoding(x.dims()[0], x.dims()[1])?;
        Ok((x.add(&pe)?, Cache::store(ctx, ())))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        cache.get::<()>(&self.name)?;
        Ok(Grads { input: grad_out.clone(), params: Vec::new() })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Pre-norm encoder block:
/// `x1 = x + MHA(LN1 x)`, `out = x1 + W2 relu(W1 LN2 x1)`.
pub struct EncoderBlock<T> {
    name: String,
    ln1: LayerNorm<T>,
    attention: MultiHeadAttention<T>,
    ln2: LayerNorm<T>,
    ff1: Dense<T>,
    ff2: Dense<T>,
}

struct EncoderCache {
    ln1: Cache,
    attention: Cache,
    ln2: Cache,
    ff1: Cache,
    ff2: Cache,
}

impl<T: Float> EncoderBlock<T> {
    pub fn new(
        name: impl Into<String>,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            name: name.into(),
            ln1: LayerNorm::new("ln1", d_model)?,
            attention: MultiHeadAttention::new("attention", d_model, heads, rng)?,
            ln2: LayerNorm::new("ln2", d_model)?,
            ff1: Dense::new("ff1", d_model, d_ff, Activation::Relu, rng)?,
            ff2: Dense::new("ff2", d_ff, d_model, Activation::Identity, rng)?,
        })
    }

    pub fn d_model(&self) -> usize {
        self.attention.d_model()
    }

    fn children(&self) -> [&dyn Layer<T>; 5] {
        [&self.ln1, &self.attention, &self.ln2, &self.ff1, &self.ff2]
    }
}

impl<T: Float> Layer<T> for EncoderBlock<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::EncoderBlock
    }

    fn describe(&self) -> String {
        format!(
            "encoder(d_model={}, heads={}, d_ff={})",
            self.d_model(),
            self.attention.heads(),
            self.ff1.outputs()
        )
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.attention.output_dims(input)
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        self.output_dims(x.dims())?;
        let (a, ln1) = self.ln1.forward(x, ctx)?;
        let (b, attention) = self.attention.forward(&a, ctx)?;
        let x1 = x.add(&b)?;
        let (c, ln2) = self.ln2.forward(&x1, ctx)?;
        let (d, ff1) = self.ff1.forward(&c, ctx)?;
        let (e, ff2) = self.ff2.forward(&d, ctx)?;
        let out = x1.add(&e)?;
        let cache = Cache::store(ctx, EncoderCache { ln1, attention, ln2, ff1, ff2 });
        Ok((out, cache))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let c: &EncoderCache = cache.get(&self.name)?;
        let g_ff2 = self.ff2.backward(&c.ff2, grad_out)?;
        let g_ff1 = self.ff1.backward(&c.ff1, &g_ff2.input)?;
        let g_ln2 = self.ln2.backward(&c.ln2, &g_ff1.input)?;
        let mut g_x1 = grad_out.clone();
        g_x1.add_assign(&g_ln2.input)?;
        let g_att = self.attention.backward(&c.attention, &g_x1)?;
        let g_ln1 = self.ln1.backward(&c.ln1, &g_att.input)?;
        let mut input = g_x1;
        input.add_assign(&g_ln1.input)?;
        let params = [g_ln1.params, g_att.params, g_ln2.params, g_ff1.params, g_ff2.params]
            .into_iter()
            .flatten()
            .collect();
        Ok(Grads { input, params })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.children()
            .into_iter()
            .flat_map(|l| {
                let prefix = l.name().to_string();
                l.params().into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.ln1.params_mut();
        out.extend(self.attention.params_mut());
        out.extend(self.ln2.params_mut());
        out.extend(self.ff1.params_mut());
        out.extend(self.ff2.params_mut());
        out
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoding_table_values() {
        let pe = positional_encoding::<f64>(3, 4).unwrap();
        assert_eq!(pe.data()[0], 0.0);
        assert_eq!(pe.data()[1], 1.0);
        assert!((pe.get(&[1, 0]).unwrap() - 1f64.sin()).abs() < 1e-15);
        assert!((pe.get(&[1, 1]).unwrap() - 1f64.cos()).abs() < 1e-15);
        assert!((pe.get(&[2, 2]).unwrap() - (2.0 / 100.0f64).sin()).abs() < 1e-15);
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zeroed_residual_branches_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut block = EncoderBlock::<f64>::new("enc", 8, 2, 16, &mut rng).unwrap();
        for t in block.attention.w_o_mut().data_mut() {
            *t = 0.0;
        }
        for p in block.ff2.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::uniform(vec![5, 8], 1.0, &mut rng).unwrap();
        let (y, _) = block.forward(&x, &mut ForwardCtx::inference()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = EncoderBlock::<f32>::new("enc", 8, 4, 16, &mut rng).unwrap();
        let x = Tensor::uniform(vec![3, 8], 1.0, &mut rng).unwrap();
        assert_eq!(block.forward(&x, &mut ForwardCtx::inference()).unwrap().0.dims(), &[3, 8]);
        assert_eq!(block.params().len(), 2 + 4 + 2 + 2 + 2);
    }
}
