//! LSTM recurrence and the bidirectional wrapper used by the LRCN heads.
//!
//! Gate pre-activations are stacked as `[input | forget | cell | output]`
//! along the last axis of every weight and bias.

use std::any::Any;

use rand::Rng;

use super::activation::sigmoid;
use super::init::glorot;
use super::{Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Consume the sequence from the last step to the first. Hidden states
    /// are still reported in original time order.
    Backward,
}

/// Hidden and cell state, both `[H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Float> LstmState<T> {
    pub fn zeros(hidden: usize) -> Result<Self> {
        Ok(LstmState { h: Tensor::zeros(vec![hidden])?, c: Tensor::zeros(vec![hidden])? })
    }
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

pub struct Lstm<T> {
    name: String,
    w_input: Tensor<T>,
    w_hidden: Tensor<T>,
    bias: Tensor<T>,
}

/// Gradients from one step: input, previous state, and parameters in
/// `[w_input, w_hidden, bias]` order.
pub struct LstmStepGrads<T> {
    pub input: Tensor<T>,
    pub h_prev: Tensor<T>,
    pub c_prev: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

struct SequenceCache<T> {
    steps: Vec<LstmStepCache<T>>,
    order: Vec<usize>,
    input_dims: Vec<usize>,
}

impl<T: Float> Lstm<T> {
    /// Glorot-uniform weights, zero biases except +1 on the forget gate.
    pub fn new(name: impl Into<String>, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let w_input = glorot(vec![inputs, 4 * hidden], inputs, 4 * hidden, rng)?;
        let w_hidden = glorot(vec![hidden, 4 * hidden], hidden, 4 * hidden, rng)?;
        let mut bias = Tensor::zeros(vec![4 * hidden])?;
        for b in &mut bias.data_mut()[hidden..2 * hidden] {
            *b = T::one();
        }
        Lstm::from_params(name, w_input, w_hidden, bias)
    }

    /// `w_input` is `[in, 4H]`, `w_hidden` is `[H, 4H]`, `bias` is `[4H]`.
    pub fn from_params(
        name: impl Into<String>,
        w_input: Tensor<T>,
        w_hidden: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self> {
        w_hidden.expect_rank(2, "lstm hidden weights")?;
        let hidden = w_hidden.dims()[0];
        w_hidden.expect_dims(&[hidden, 4 * hidden], "lstm hidden weights")?;
        w_input.expect_rank(2, "lstm input weights")?;
        if w_input.dims()[1] != 4 * hidden {
            return Err(Error::shape(format!(
                "lstm input weights {} do not have 4·{hidden} gate columns",
                w_input.shape()
            )));
        }
        bias.expect_dims(&[4 * hidden], "lstm bias")?;
        Ok(Lstm { name: name.into(), w_input, w_hidden, bias })
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.dims()[0]
    }

    pub fn inputs(&self) -> usize {
        self.w_input.dims()[0]
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("w_input".into(), &self.w_input),
            ("w_hidden".into(), &self.w_hidden),
            ("bias".into(), &self.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }

    fn step_raw(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> (Vec<T>, Vec<T>, LstmStepCache<T>) {
        let hn = self.hidden();
        let mut z = self.bias.data().to_vec();
        gemm(1, self.inputs(), 4 * hn, x, false, self.w_input.data(), false, &mut z, true);
        gemm(1, hn, 4 * hn, h_prev, false, self.w_hidden.data(), false, &mut z, true);
        for j in 0..hn {
            z[j] = sigmoid(z[j]);
            z[hn + j] = sigmoid(z[hn + j]);
            z[2 * hn + j] = z[2 * hn + j].tanh();
            z[3 * hn + j] = sigmoid(z[3 * hn + j]);
        }
        let mut c = vec![T::zero(); hn];
        let mut h = vec![T::zero(); hn];
        let mut tanh_c = vec![T::zero(); hn];
        for j in 0..hn {
            c[j] = z[hn + j] * c_prev[j] + z[j] * z[2 * hn + j];
            tanh_c[j] = c[j].tanh();
            h[j] = z[3 * hn + j] * tanh_c[j];
        }
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: z,
            tanh_c,
        };
        (h, c, cache)
    }

    /// Gradient of the gate pre-activations plus `(dh_prev, dc_prev)`.
    fn step_backward_raw(&self, cache: &LstmStepCache<T>, dh: &[T], dc_in: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let hn = self.hidden();
        let z = &cache.gates;
        let one = T::one();
        let mut dz = vec![T::zero(); 4 * hn];
        let mut dc_prev = vec![T::zero(); hn];
        for j in 0..hn {
            let (i, f, g, o) = (z[j], z[hn + j], z[2 * hn + j], z[3 * hn + j]);
            let tc = cache.tanh_c[j];
            let dc = dc_in[j] + dh[j] * o * (one - tc * tc);
            dz[j] = dc * g * i * (one - i);
            dz[hn + j] = dc * cache.c_prev[j] * f * (one - f);
            dz[2 * hn + j] = dc * i * (one - g * g);
            dz[3 * hn + j] = dh[j] * tc * o * (one - o);
            dc_prev[j] = dc * f;
        }
        let mut dh_prev = vec![T::zero(); hn];
        gemm(1, 4 * hn, hn, &dz, false, self.w_hidden.data(), true, &mut dh_prev, false);
        (dz, dh_prev, dc_prev)
    }

    /// One recurrence step on `x: [in]`.
    pub fn step(&self, x: &Tensor<T>, state: &LstmState<T>) -> Result<(LstmState<T>, LstmStepCache<T>)> {
        x.expect_dims(&[self.inputs()], "lstm step input")?;
        state.h.expect_dims(&[self.hidden()], "lstm hidden state")?;
        state.c.expect_dims(&[self.hidden()], "lstm cell state")?;
        let (h, c, cache) = self.step_raw(x.data(), state.h.data(), state.c.data());
        let hn = self.hidden();
        Ok((LstmState { h: Tensor::new(vec![hn], h)?, c: Tensor::new(vec![hn], c)? }, cache))
    }

    pub fn step_backward(
        &self,
        cache: &LstmStepCache<T>,
        grad_h: &Tensor<T>,
        grad_c: &Tensor<T>,
    ) -> Result<LstmStepGrads<T>> {
        let hn = self.hidden();
        grad_h.expect_dims(&[hn], "lstm step grad h")?;
        grad_c.expect_dims(&[hn], "lstm step grad c")?;
        let (dz, dh_prev, dc_prev) = self.step_backward_raw(cache, grad_h.data(), grad_c.data());
        let n_in = self.inputs();
        let mut dx = vec![T::zero(); n_in];
        gemm(1, 4 * hn, n_in, &dz, false, self.w_input.data(), true, &mut dx, false);
        let mut dwx = vec![T::zero(); n_in * 4 * hn];
        gemm(n_in, 1, 4 * hn, &cache.x, false, &dz, false, &mut dwx, false);
        let mut dwh = vec![T::zero(); hn * 4 * hn];
        gemm(hn, 1, 4 * hn, &cache.h_prev, false, &dz, false, &mut dwh, false);
        Ok(LstmStepGrads {
            input: Tensor::new(vec![n_in], dx)?,
            h_prev: Tensor::new(vec![hn], dh_prev)?,
            c_prev: Tensor::new(vec![hn], dc_prev)?,
            params: vec![
                Tensor::new(vec![n_in, 4 * hn], dwx)?,
                Tensor::new(vec![hn, 4 * hn], dwh)?,
                Tensor::new(vec![4 * hn], dz)?,
            ],
        })
    }

    fn run(&self, xs: &Tensor<T>, direction: Direction) -> Result<(Tensor<T>, LstmState<T>, SequenceCache<T>)> {
        xs.expect_rank(2, "lstm input sequence")?;
        let (steps, n_in) = (xs.dims()[0], xs.dims()[1]);
        if n_in != self.inputs() {
            return Err(Error::shape(format!(
                "{}: sequence feature size {n_in} but weights expect {}",
                self.name,
                self.inputs()
            )));
        }
        let hn = self.hidden();
        let order: Vec<usize> = match direction {
            Direction::Forward => (0..steps).collect(),
            Direction::Backward => (0..steps).rev().collect(),
        };
        let mut hs = vec![T::zero(); steps * hn];
        let mut h = vec![T::zero(); hn];
        let mut c = vec![T::zero(); hn];
        let mut caches = Vec::with_capacity(steps);
        for &t in &order {
            let (h_new, c_new, cache) = self.step_raw(&xs.data()[t * n_in..(t + 1) * n_in], &h, &c);
            hs[t * hn..(t + 1) * hn].copy_from_slice(&h_new);
            caches.push(cache);
            h = h_new;
            c = c_new;
        }
        let state = LstmState { h: Tensor::new(vec![hn], h)?, c: Tensor::new(vec![hn], c)? };
        let cache = SequenceCache { steps: caches, order, input_dims: xs.dims().to_vec() };
        Ok((Tensor::new(vec![steps, hn], hs)?, state, cache))
    }

    /// Backpropagation through time given the gradient on every reported
    /// hidden state `[T, H]`.
    fn run_backward(&self, cache: &SequenceCache<T>, grad_hs: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let hn = self.hidden();
        let n_in = self.inputs();
        let steps = cache.order.len();
        grad_hs.expect_dims(&[steps, hn], "lstm sequence gradient")?;
        // Gate gradients in original time order, so the weight gradients
        // reduce to three matrix products.
        let mut dz_all = vec![T::zero(); steps * 4 * hn];
        let mut x_all = vec![T::zero(); steps * n_in];
        let mut hprev_all = vec![T::zero(); steps * hn];
        let mut dh_carry = vec![T::zero(); hn];
        let mut dc_carry = vec![T::zero(); hn];
        for (k, &t) in cache.order.iter().enumerate().rev() {
            let step = &cache.steps[k];
            let mut dh = grad_hs.data()[t * hn..(t + 1) * hn].to_vec();
            for (a, &b) in dh.iter_mut().zip(&dh_carry) {
                *a += b;
            }
            let (dz, dh_prev, dc_prev) = self.step_backward_raw(step, &dh, &dc_carry);
            dz_all[t * 4 * hn..(t + 1) * 4 * hn].copy_from_slice(&dz);
            x_all[t * n_in..(t + 1) * n_in].copy_from_slice(&step.x);
            hprev_all[t * hn..(t + 1) * hn].copy_from_slice(&step.h_prev);
            dh_carry = dh_prev;
            dc_carry = dc_prev;
        }
        let mut dx = vec![T::zero(); steps * n_in];
        gemm(steps, 4 * hn, n_in, &dz_all, false, self.w_input.data(), true, &mut dx, false);
        let mut dwx = vec![T::zero(); n_in * 4 * hn];
        gemm(n_in, steps, 4 * hn, &x_all, true, &dz_all, false, &mut dwx, false);
        let mut dwh = vec![T::zero(); hn * 4 * hn];
        gemm(hn, steps, 4 * hn, &hprev_all, true, &dz_all, false, &mut dwh, false);
        let mut db = vec![T::zero(); 4 * hn];
        for row in dz_all.chunks(4 * hn) {
            for (b, &v) in db.iter_mut().zip(row) {
                *b += v;
            }
        }
        Ok((
            Tensor::new(cache.input_dims.clone(), dx)?,
            vec![
                Tensor::new(vec![n_in, 4 * hn], dwx)?,
                Tensor::new(vec![hn, 4 * hn], dwh)?,
                Tensor::new(vec![4 * hn], db)?,
            ],
        ))
    }
}

/// Run the recurrence from zero state over `xs: [T, in]`. Returns every
/// hidden state `[T, H]` in original time order and the final state.
pub fn lstm_forward<T: Float>(
    p: &Lstm<T>,
    xs: &Tensor<T>,
    direction: Direction,
) -> Result<(Tensor<T>, LstmState<T>)> {
    let (hs, state, _) = p.run(xs, direction)?;
    Ok((hs, state))
}

/// Forward and backward LSTMs over the same sequence, concatenated per step.
pub struct BiLstm<T> {
    name: String,
    forward: Lstm<T>,
    backward: Lstm<T>,
    return_sequences: bool,
}

impl<T: Float> BiLstm<T> {
    pub fn new(
        name: impl Into<String>,
        inputs: usize,
        hidden: usize,
        return_sequences: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let forward = Lstm::new("forward", inputs, hidden, rng)?;
        let backward = Lstm::new("backward", inputs, hidden, rng)?;
        BiLstm::from_parts(name, forward, backward, return_sequences)
    }

    pub fn from_parts(
        name: impl Into<String>,
        forward: Lstm<T>,
        backward: Lstm<T>,
        return_sequences: bool,
    ) -> Result<Self> {
        if forward.hidden() != backward.hidden() || forward.inputs() != backward.inputs() {
            return Err(Error::config(format!(
                "bidirectional halves differ: forward {}→{}, backward {}→{}",
                forward.inputs(),
                forward.hidden(),
                backward.inputs(),
                backward.hidden()
            )));
        }
        Ok(BiLstm { name: name.into(), forward, backward, return_sequences })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }
}

/// `[T, 2H]`: forward states in the first half of each row, backward
/// (reversal) states in the second.
pub fn bilstm_forward<T: Float>(p_fwd: &Lstm<T>, p_bwd: &Lstm<T>, xs: &Tensor<T>) -> Result<Tensor<T>> {
    if p_fwd.hidden() != p_bwd.hidden() {
        return Err(Error::config(format!(
            "bidirectional hidden sizes differ: {} vs {}",
            p_fwd.hidden(),
            p_bwd.hidden()
        )));
    }
    let (hf, _) = lstm_forward(p_fwd, xs, Direction::Forward)?;
    let (hb, _) = lstm_forward(p_bwd, xs, Direction::Backward)?;
    hf.concat_last(&hb)
}

struct BiCache<T> {
    fwd: SequenceCache<T>,
    bwd: SequenceCache<T>,
    steps: usize,
}

impl<T: Float> Layer<T> for BiLstm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::BiLstm
    }

    fn describe(&self) -> String {
        format!("bilstm({})", self.hidden())
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [t, n] if *n == self.forward.inputs() => Ok(if self.return_sequences {
                vec![*t, 2 * self.hidden()]
            } else {
                vec![2 * self.hidden()]
            }),
            _ => Err(Error::shape(format!(
                "{}: expected [T, {}], got {input:?}",
                self.name,
                self.forward.inputs()
            ))),
        }
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        let (hf, _, cf) = self.forward.run(x, Direction::Forward)?;
        let (hb, _, cb) = self.backward.run(x, Direction::Backward)?;
        let steps = x.dims()[0];
        let y = if self.return_sequences {
            hf.concat_last(&hb)?
        } else {
            // Final state of each direction: forward at T-1, backward at 0.
            let last = hf.index_axis0(steps - 1)?;
            let first = hb.index_axis0(0)?;
            last.concat_last(&first)?
        };
        Ok((y, Cache::store(ctx, BiCache { fwd: cf, bwd: cb, steps })))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let c: &BiCache<T> = cache.get(&self.name)?;
        let hn = self.hidden();
        let (gf, gb) = if self.return_sequences {
            grad_out.split_last(hn)?
        } else {
            grad_out.expect_dims(&[2 * hn], "bilstm gradient")?;
            let mut gf = Tensor::zeros(vec![c.steps, hn])?;
            let mut gb = Tensor::zeros(vec![c.steps, hn])?;
            let g = grad_out.data();
            gf.data_mut()[(c.steps - 1) * hn..].copy_from_slice(&g[..hn]);
            gb.data_mut()[..hn].copy_from_slice(&g[hn..]);
            (gf, gb)
        };
        let (dx_f, mut params) = self.forward.run_backward(&c.fwd, &gf)?;
        let (dx_b, params_b) = self.backward.run_backward(&c.bwd, &gb)?;
        params.extend(params_b);
        Ok(Grads { input: dx_f.add(&dx_b)?, params })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for lstm in [&self.forward, &self.backward] {
            for (n, t) in lstm.params() {
                out.push((format!("{}.{n}", lstm.name()), t));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.forward.params_mut();
        out.extend(self.backward.params_mut());
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

    fn zero_lstm(inputs: usize, hidden: usize) -> Lstm<f64> {
        Lstm::from_params(
            "z",
            Tensor::zeros(vec![inputs, 4 * hidden]).unwrap(),
            Tensor::zeros(vec![hidden, 4 * hidden]).unwrap(),
            Tensor::zeros(vec![4 * hidden]).unwrap(),
        )
        .unwrap()
    }

    fn reverse_rows(x: &Tensor<f64>) -> Tensor<f64> {
        let rows: Vec<_> = (0..x.dims()[0]).rev().map(|t| x.index_axis0(t).unwrap()).collect();
        Tensor::stack(&rows).unwrap()
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = Tensor::uniform(vec![6, 3], 2.0, &mut rng).unwrap();
        let (hs, state) = lstm_forward(&zero_lstm(3, 4), &xs, Direction::Forward).unwrap();
        assert_eq!(hs.dims(), &[6, 4]);
        assert!(hs.data().iter().all(|&v| v == 0.0));
        assert!(state.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_direction_equals_reversed_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = Lstm::<f64>::new("l", 3, 5, &mut rng).unwrap();
        let xs = Tensor::uniform(vec![7, 3], 1.0, &mut rng).unwrap();
        let (hb, _) = lstm_forward(&lstm, &xs, Direction::Backward).unwrap();
        let (hf_rev, _) = lstm_forward(&lstm, &reverse_rows(&xs), Direction::Forward).unwrap();
        assert_eq!(hb, reverse_rows(&hf_rev));
    }

    #[test]
    fn bilstm_halves_match_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Lstm::<f64>::new("f", 3, 4, &mut rng).unwrap();
        let b = Lstm::<f64>::new("b", 3, 4, &mut rng).unwrap();
        let xs = Tensor::uniform(vec![5, 3], 1.0, &mut rng).unwrap();
        let y = bilstm_forward(&f, &b, &xs).unwrap();
        assert_eq!(y.dims(), &[5, 8]);
        let (left, right) = y.split_last(4).unwrap();
        assert_eq!(left, lstm_forward(&f, &xs, Direction::Forward).unwrap().0);
        let (rev, _) = lstm_forward(&b, &reverse_rows(&xs), Direction::Forward).unwrap();
        assert_eq!(right, reverse_rows(&rev));
    }

    #[test]
    fn bilstm_zero_parameters_give_zero_output() {
        let xs = Tensor::full(vec![4, 2], 0.7).unwrap();
        let y = bilstm_forward(&zero_lstm(2, 3), &zero_lstm(2, 3), &xs).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_size_mismatch_is_config_error() {
        let xs = Tensor::full(vec![4, 2], 0.7).unwrap();
        assert!(matches!(bilstm_forward(&zero_lstm(2, 3), &zero_lstm(2, 4), &xs), Err(Error::Config(_))));
        assert!(matches!(
            BiLstm::from_parts("bi", zero_lstm(2, 3), zero_lstm(2, 4), false),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = Lstm::<f32>::new("l", 2, 3, &mut rng).unwrap();
        assert_eq!(l.bias.data(), &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
    }
}
