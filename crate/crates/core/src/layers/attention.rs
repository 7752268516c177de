use std::any::Any;

use rand::Rng;

use super::activation::Activation;
use super::init::glorot;
use super::{Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Inputs and attention weights of one `softmax(QKᵀ/√d_k)V` evaluation.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    /// `[T_q, T_k]`, each row a distribution over keys.
    pub weights: Tensor<T>,
}

fn check_qkv<T: Float>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<()> {
    q.expect_rank(2, "attention query")?;
    k.expect_rank(2, "attention keys")?;
    v.expect_rank(2, "attention values")?;
    if q.dims()[1] != k.dims()[1] {
        return Err(Error::shape(format!(
            "query {} and keys {} disagree on d_k",
            q.shape(),
            k.shape()
        )));
    }
    if k.dims()[0] != v.dims()[0] {
        return Err(Error::shape(format!(
            "keys {} and values {} have different sequence lengths",
            k.shape(),
            v.shape()
        )));
    }
    Ok(())
}

/// `softmax(QKᵀ/√d_k)·V`, softmax over keys, plus the cache for backward.
pub fn attention_with_cache<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    check_qkv(q, k, v)?;
    let d_k = T::from_usize(q.dims()[1]).expect("usize converts");
    let scores = q.matmul_nt(k)?.scale(T::one() / d_k.sqrt());
    let weights = scores.softmax()?;
    let out = weights.matmul(v)?;
    Ok((out, AttentionCache { q: q.clone(), k: k.clone(), v: v.clone(), weights }))
}

pub fn scaled_dot_attention<T: Float>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(attention_with_cache(q, k, v)?.0)
}

/// Returns `(dQ, dK, dV)`.
pub fn attention_backward<T: Float>(
    cache: &AttentionCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let scale = T::one() / T::from_usize(cache.q.dims()[1]).expect("usize converts").sqrt();
    let d_v = cache.weights.matmul_tn(grad_out)?;
    let d_weights = grad_out.matmul_nt(&cache.v)?;
    let d_scores = Activation::Softmax.backward(&cache.weights, &d_weights)?.scale(scale);
    let d_q = d_scores.matmul(&cache.k)?;
    let d_k = d_scores.matmul_tn(&cache.q)?;
    Ok((d_q, d_k, d_v))
}

/// Multi-head self-attention without positional information or masking.
///
/// `w_q`, `w_k`, `w_v` are `[d_model, heads·d_k]`; head `h` owns columns
/// `h·d_k .. (h+1)·d_k`. `w_o` is `[heads·d_k, d_model]`.
pub struct MultiHeadAttention<T> {
    name: String,
    heads: usize,
    w_q: Tensor<T>,
    w_k: Tensor<T>,
    w_v: Tensor<T>,
    w_o: Tensor<T>,
}

struct MhaCache<T> {
    x: Tensor<T>,
    concat: Tensor<T>,
    heads: Vec<AttentionCache<T>>,
}

fn take_head<T: Float>(m: &Tensor<T>, head: usize, d_k: usize) -> Result<Tensor<T>> {
    let (rows, cols) = (m.dims()[0], m.dims()[1]);
    let mut out = Vec::with_capacity(rows * d_k);
    for r in 0..rows {
        out.extend_from_slice(&m.data()[r * cols + head * d_k..r * cols + (head + 1) * d_k]);
    }
    Tensor::new(vec![rows, d_k], out)
}

fn put_head<T: Float>(m: &mut Tensor<T>, head: usize, part: &Tensor<T>) {
    let cols = m.dims()[1];
    let d_k = part.dims()[1];
    for (r, row) in part.data().chunks(d_k).enumerate() {
        m.data_mut()[r * cols + head * d_k..r * cols + (head + 1) * d_k].copy_from_slice(row);
    }
}

impl<T: Float> MultiHeadAttention<T> {
    pub fn new(name: impl Into<String>, d_model: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let d_k = d_model / heads;
        let proj = heads * d_k;
        let w_q = glorot(vec![d_model, proj], d_model, d_k, rng)?;
        let w_k = glorot(vec![d_model, proj], d_model, d_k, rng)?;
        let w_v = glorot(vec![d_model, proj], d_model, d_k, rng)?;
        let w_o = glorot(vec![proj, d_model], proj, d_model, rng)?;
        MultiHeadAttention::from_params(name, heads, w_q, w_k, w_v, w_o)
    }

    pub fn from_params(
        name: impl Into<String>,
        heads: usize,
        w_q: Tensor<T>,
        w_k: Tensor<T>,
        w_v: Tensor<T>,
        w_o: Tensor<T>,
    ) -> Result<Self> {
        w_q.expect_rank(2, "attention w_q")?;
        let (d_model, proj) = (w_q.dims()[0], w_q.dims()[1]);
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        if proj % heads != 0 || proj == 0 {
            return Err(Error::config(format!("projection width {proj} not divisible by {heads} heads")));
        }
        w_k.expect_dims(&[d_model, proj], "attention w_k")?;
        w_v.expect_dims(&[d_model, proj], "attention w_v")?;
        w_o.expect_dims(&[proj, d_model], "attention w_o")?;
        Ok(MultiHeadAttention { name: name.into(), heads, w_q, w_k, w_v, w_o })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn d_model(&self) -> usize {
        self.w_q.dims()[0]
    }

    pub fn d_k(&self) -> usize {
        self.w_q.dims()[1] / self.heads
    }

    pub fn w_o_mut(&mut self) -> &mut Tensor<T> {
        &mut self.w_o
    }
}

impl<T: Float> Layer<T> for MultiHeadAttention<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::MultiHeadAttention
    }

    fn describe(&self) -> String {
        format!("mha(heads={}, d_model={})", self.heads, self.d_model())
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [t, d] if *d == self.d_model() => Ok(vec![*t, *d]),
            _ => Err(Error::shape(format!(
                "{}: expected [T, {}], got {input:?}",
                self.name,
                self.d_model()
            ))),
        }
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        self.output_dims(x.dims())?;
        let d_k = self.d_k();
        let q = x.matmul(&self.w_q)?;
        let k = x.matmul(&self.w_k)?;
        let v = x.matmul(&self.w_v)?;
        let mut concat = Tensor::zeros(vec![x.dims()[0], self.heads * d_k])?;
        let mut caches = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (out, c) = attention_with_cache(&take_head(&q, h, d_k)?, &take_head(&k, h, d_k)?, &take_head(&v, h, d_k)?)?;
            put_head(&mut concat, h, &out);
            caches.push(c);
        }
        let y = concat.matmul(&self.w_o)?;
        let cache = if ctx.caching {
            Cache::store(ctx, MhaCache { x: x.clone(), concat, heads: caches })
        } else {
            Cache::empty()
        };
        Ok((y, cache))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let c: &MhaCache<T> = cache.get(&self.name)?;
        let d_k = self.d_k();
        let d_w_o = c.concat.matmul_tn(grad_out)?;
        let d_concat = grad_out.matmul_nt(&self.w_o)?;
        let proj = self.heads * d_k;
        let rows = c.x.dims()[0];
        let mut d_q = Tensor::zeros(vec![rows, proj])?;
        let mut d_k_all = Tensor::zeros(vec![rows, proj])?;
        let mut d_v = Tensor::zeros(vec![rows, proj])?;
        for (h, hc) in c.heads.iter().enumerate() {
            let (dq, dk, dv) = attention_backward(hc, &take_head(&d_concat, h, d_k)?)?;
            put_head(&mut d_q, h, &dq);
            put_head(&mut d_k_all, h, &dk);
            put_head(&mut d_v, h, &dv);
        }
        let d_w_q = c.x.matmul_tn(&d_q)?;
        let d_w_k = c.x.matmul_tn(&d_k_all)?;
        let d_w_v = c.x.matmul_tn(&d_v)?;
        let mut d_x = d_q.matmul_nt(&self.w_q)?;
        d_x.add_assign(&d_k_all.matmul_nt(&self.w_k)?)?;
        d_x.add_assign(&d_v.matmul_nt(&self.w_v)?)?;
        Ok(Grads { input: d_x, params: vec![d_w_q, d_w_k, d_w_v, d_w_o] })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("w_q".into(), &self.w_q),
            ("w_k".into(), &self.w_k),
            ("w_v".into(), &self.w_v),
            ("w_o".into(), &self.w_o),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
