//! Convolutional LSTM with Hadamard peepholes.
//!
//! For every step:
//!
//! ```text
//! i_t = σ(w_xi * x_t + w_hi * h_{t-1} + w_ci ∘ c_{t-1} + b_i)
//! f_t = σ(w_xf * x_t + w_hf * h_{t-1} + w_cf ∘ c_{t-1} + b_f)
//! ĉ_t = tanh(w_xc * x_t + w_hc * h_{t-1} + b_c)
//! c_t = f_t ∘ c_{t-1} + i_t ∘ ĉ_t
//! o_t = σ(w_xo * x_t + w_ho * h_{t-1} + w_co ∘ c_t + b_o)
//! h_t = o_t ∘ tanh(c_t)
//! ```
//!
//! `*` is same-padded true convolution, `∘` the element-wise product. The
//! four input kernels are stored stacked along the output-channel axis as
//! `w_x: [k, k, C_in, 4F]` in gate order `(i, f, c, o)`; likewise `w_h` and
//! `bias`. Peepholes `w_ci`, `w_cf`, `w_co` have the cell-state shape
//! `[H, W, F]`.

use std::any::Any;

use rand::Rng;

use super::activation::sigmoid;
use super::conv::{conv_backward_raw, conv_forward_raw, Geometry};
use super::init::glorot;
use super::{Cache, ForwardCtx, Grads, Layer, LayerKind, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub struct ConvLstmCell<T> {
    name: String,
    w_x: Tensor<T>,
    w_h: Tensor<T>,
    peep_i: Tensor<T>,
    peep_f: Tensor<T>,
    peep_o: Tensor<T>,
    bias: Tensor<T>,
}

/// Forward state of one step.
pub struct ConvLstmStepCache<T> {
    cols_x: Vec<T>,
    cols_h: Vec<T>,
    c_prev: Vec<T>,
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
}

/// Gradients of one step. `params` follows [`ConvLstmCell::params`] order:
/// `w_x, w_h, w_ci, w_cf, w_co, bias`.
pub struct ConvLstmStepGrads<T> {
    pub input: Tensor<T>,
    pub h_prev: Tensor<T>,
    pub c_prev: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

impl<T: Float> ConvLstmCell<T> {
    /// Glorot-uniform kernels, zero peepholes, zero biases except +1 on the
    /// forget gate.
    pub fn new(
        name: impl Into<String>,
        k: usize,
        c_in: usize,
        filters: usize,
        height: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_x = glorot(vec![k, k, c_in, 4 * filters], k * k * c_in, k * k * 4 * filters, rng)?;
        let w_h = glorot(vec![k, k, filters, 4 * filters], k * k * filters, k * k * 4 * filters, rng)?;
        let cell = vec![height, width, filters];
        let mut bias = Tensor::zeros(vec![4 * filters])?;
        for b in &mut bias.data_mut()[filters..2 * filters] {
            *b = T::one();
        }
        ConvLstmCell::from_params(
            name,
            w_x,
            w_h,
            [Tensor::zeros(cell.clone())?, Tensor::zeros(cell.clone())?, Tensor::zeros(cell)?],
            bias,
        )
    }

    /// `peepholes` are `[w_ci, w_cf, w_co]`.
    pub fn from_params(
        name: impl Into<String>,
        w_x: Tensor<T>,
        w_h: Tensor<T>,
        peepholes: [Tensor<T>; 3],
        bias: Tensor<T>,
    ) -> Result<Self> {
        w_h.expect_rank(4, "convlstm w_h")?;
        let (k, f) = (w_h.dims()[0], w_h.dims()[2]);
        w_h.expect_dims(&[k, k, f, 4 * f], "convlstm w_h")?;
        w_x.expect_rank(4, "convlstm w_x")?;
        let c_in = w_x.dims()[2];
        w_x.expect_dims(&[k, k, c_in, 4 * f], "convlstm w_x")?;
        bias.expect_dims(&[4 * f], "convlstm bias")?;
        let [peep_i, peep_f, peep_o] = peepholes;
        peep_i.expect_rank(3, "convlstm peephole")?;
        if peep_i.dims()[2] != f {
            return Err(Error::shape(format!(
                "convlstm peephole {} does not end in {f} filters",
                peep_i.shape()
            )));
        }
        peep_f.expect_same_shape(&peep_i, "convlstm peephole")?;
        peep_o.expect_same_shape(&peep_i, "convlstm peephole")?;
        Ok(ConvLstmCell { name: name.into(), w_x, w_h, peep_i, peep_f, peep_o, bias })
    }

    pub fn filters(&self) -> usize {
        self.w_h.dims()[2]
    }

    pub fn kernel_size(&self) -> usize {
        self.w_h.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.w_x.dims()[2]
    }

    /// Cell-state shape `[H, W, F]`.
    pub fn state_dims(&self) -> &[usize] {
        self.peep_i.dims()
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("w_x".into(), &self.w_x),
            ("w_h".into(), &self.w_h),
            ("w_ci".into(), &self.peep_i),
            ("w_cf".into(), &self.peep_f),
            ("w_co".into(), &self.peep_o),
            ("bias".into(), &self.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.w_x,
            &mut self.w_h,
            &mut self.peep_i,
            &mut self.peep_f,
            &mut self.peep_o,
            &mut self.bias,
        ]
    }

    fn geometries(&self) -> Result<(Geometry, Geometry)> {
        let [h, w, f] = [self.state_dims()[0], self.state_dims()[1], self.filters()];
        let k = self.kernel_size();
        let gx = Geometry::new([1, h, w], self.in_channels(), [1, k, k], [1, 1, 1], Padding::Same, 4 * f)?;
        let gh = Geometry::new([1, h, w], f, [1, k, k], [1, 1, 1], Padding::Same, 4 * f)?;
        Ok((gx, gh))
    }

    fn check_inputs(&self, x: &Tensor<T>, h_prev: &Tensor<T>, c_prev: &Tensor<T>) -> Result<()> {
        let s = self.state_dims();
        x.expect_dims(&[s[0], s[1], self.in_channels()], &format!("{} input", self.name))?;
        h_prev.expect_dims(s, &format!("{} hidden state", self.name))?;
        c_prev.expect_dims(s, &format!("{} cell state", self.name))
    }

    fn step_raw(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, ConvLstmStepCache<T>)> {
        let (gx, gh) = self.geometries()?;
        let f = self.filters();
        let (mut z, cols_x) = conv_forward_raw(x, self.w_x.data(), Some(self.bias.data()), &gx);
        let (zh, cols_h) = conv_forward_raw(h_prev, self.w_h.data(), None, &gh);
        for (a, b) in z.iter_mut().zip(&zh) {
            *a += *b;
        }
        let (pi, pf, po) = (self.peep_i.data(), self.peep_f.data(), self.peep_o.data());
        let n = c_prev.len();
        let mut c = vec![T::zero(); n];
        let mut tanh_c = vec![T::zero(); n];
        let mut h = vec![T::zero(); n];
        for p in 0..gx.out_positions() {
            let row = &mut z[p * 4 * f..(p + 1) * 4 * f];
            for j in 0..f {
                let e = p * f + j;
                let i_g = sigmoid(row[j] + pi[e] * c_prev[e]);
                let f_g = sigmoid(row[f + j] + pf[e] * c_prev[e]);
                let cand = row[2 * f + j].tanh();
                c[e] = f_g * c_prev[e] + i_g * cand;
                tanh_c[e] = c[e].tanh();
                let o_g = sigmoid(row[3 * f + j] + po[e] * c[e]);
                h[e] = o_g * tanh_c[e];
                row[j] = i_g;
                row[f + j] = f_g;
                row[2 * f + j] = cand;
                row[3 * f + j] = o_g;
            }
        }
        let cache = ConvLstmStepCache { cols_x, cols_h, c_prev: c_prev.to_vec(), gates: z, c, tanh_c };
        Ok((h, cache))
    }

    /// Gradients of one step given upstream gradients on `h_t` and `c_t`.
    fn step_backward_raw(
        &self,
        cache: &ConvLstmStepCache<T>,
        dh: &[T],
        dc_in: &[T],
        need_input: bool,
    ) -> Result<(Option<Vec<T>>, Vec<T>, Vec<T>, Vec<Vec<T>>)> {
        let (gx, gh) = self.geometries()?;
        let f = self.filters();
        let one = T::one();
        let n = cache.c.len();
        let (pi, pf, po) = (self.peep_i.data(), self.peep_f.data(), self.peep_o.data());
        let mut dz = vec![T::zero(); n * 4];
        let mut dc_prev = vec![T::zero(); n];
        let mut d_pi = vec![T::zero(); n];
        let mut d_pf = vec![T::zero(); n];
        let mut d_po = vec![T::zero(); n];
        for p in 0..gx.out_positions() {
            let gates = &cache.gates[p * 4 * f..(p + 1) * 4 * f];
            let dzr = &mut dz[p * 4 * f..(p + 1) * 4 * f];
            for j in 0..f {
                let e = p * f + j;
                let (i_g, f_g, cand, o_g) = (gates[j], gates[f + j], gates[2 * f + j], gates[3 * f + j]);
                let tc = cache.tanh_c[e];
                let da_o = dh[e] * tc * o_g * (one - o_g);
                let dc = dc_in[e] + dh[e] * o_g * (one - tc * tc) + da_o * po[e];
                let da_i = dc * cand * i_g * (one - i_g);
                let da_f = dc * cache.c_prev[e] * f_g * (one - f_g);
                let da_c = dc * i_g * (one - cand * cand);
                dzr[j] = da_i;
                dzr[f + j] = da_f;
                dzr[2 * f + j] = da_c;
                dzr[3 * f + j] = da_o;
                dc_prev[e] = dc * f_g + da_i * pi[e] + da_f * pf[e];
                d_pi[e] = da_i * cache.c_prev[e];
                d_pf[e] = da_f * cache.c_prev[e];
                d_po[e] = da_o * cache.c[e];
            }
        }
        let bx = conv_backward_raw(&cache.cols_x, self.w_x.data(), &dz, &gx, need_input);
        let bh = conv_backward_raw(&cache.cols_h, self.w_h.data(), &dz, &gh, true);
        let params = vec![bx.kernel, bh.kernel, d_pi, d_pf, d_po, bx.bias];
        Ok((bx.input, bh.input.expect("requested"), dc_prev, params))
    }

    pub fn step(
        &self,
        x: &Tensor<T>,
        h_prev: &Tensor<T>,
        c_prev: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, ConvLstmStepCache<T>)> {
        self.check_inputs(x, h_prev, c_prev)?;
        let (h, cache) = self.step_raw(x.data(), h_prev.data(), c_prev.data())?;
        let dims = self.state_dims().to_vec();
        let c = Tensor::new(dims.clone(), cache.c.clone())?;
        Ok((Tensor::new(dims, h)?, c, cache))
    }

    pub fn step_backward(
        &self,
        cache: &ConvLstmStepCache<T>,
        grad_h: &Tensor<T>,
        grad_c: &Tensor<T>,
    ) -> Result<ConvLstmStepGrads<T>> {
        let dims = self.state_dims().to_vec();
        grad_h.expect_dims(&dims, "convlstm grad h")?;
        grad_c.expect_dims(&dims, "convlstm grad c")?;
        let (dx, dh, dc, params) = self.step_backward_raw(cache, grad_h.data(), grad_c.data(), true)?;
        let shapes: Vec<Vec<usize>> = self.params().iter().map(|(_, t)| t.dims().to_vec()).collect();
        Ok(ConvLstmStepGrads {
            input: Tensor::new(vec![dims[0], dims[1], self.in_channels()], dx.expect("requested"))?,
            h_prev: Tensor::new(dims.clone(), dh)?,
            c_prev: Tensor::new(dims, dc)?,
            params: params.into_iter().zip(shapes).map(|(d, s)| Tensor::new(s, d)).collect::<Result<_>>()?,
        })
    }
}

/// One ConvLSTM step: returns `(h_t, c_t)`.
pub fn convlstm_cell_step<T: Float>(
    p: &ConvLstmCell<T>,
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, c, _) = p.step(x_t, h_prev, c_prev)?;
    Ok((h, c))
}

/// ConvLSTM over a `[T, H, W, C]` clip from zero state, returning the final
/// hidden state `h_T: [H, W, F]`.
pub struct ConvLstm<T> {
    name: String,
    cell: ConvLstmCell<T>,
}

impl<T: Float> ConvLstm<T> {
    pub fn new(name: impl Into<String>, cell: ConvLstmCell<T>) -> Self {
        ConvLstm { name: name.into(), cell }
    }

    pub fn cell(&self) -> &ConvLstmCell<T> {
        &self.cell
    }
}

impl<T: Float> Layer<T> for ConvLstm<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        LayerKind::ConvLstm
    }

    fn describe(&self) -> String {
        let k = self.cell.kernel_size();
        format!("convlstm({}, {k}x{k})", self.cell.filters())
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let s = self.cell.state_dims();
        match input {
            [_, h, w, c] if *h == s[0] && *w == s[1] && *c == self.cell.in_channels() => Ok(s.to_vec()),
            _ => Err(Error::shape(format!(
                "{}: expected [T, {}, {}, {}], got {input:?}",
                self.name,
                s[0],
                s[1],
                self.cell.in_channels()
            ))),
        }
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        self.output_dims(x.dims())?;
        let steps = x.dims()[0];
        let frame = x.len() / steps;
        let n = self.cell.state_dims().iter().product();
        let mut h = vec![T::zero(); n];
        let mut c = vec![T::zero(); n];
        let mut caches = Vec::with_capacity(if ctx.caching { steps } else { 0 });
        for t in 0..steps {
            let (h_new, cache) = self.cell.step_raw(&x.data()[t * frame..(t + 1) * frame], &h, &c)?;
            h = h_new;
            c.clone_from(&cache.c);
            if ctx.caching {
                caches.push(cache);
            }
        }
        let y = Tensor::new(self.cell.state_dims().to_vec(), h)?;
        Ok((y, Cache::store(ctx, (caches, x.dims().to_vec()))))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let (caches, in_dims): &(Vec<ConvLstmStepCache<T>>, Vec<usize>) = cache.get(&self.name)?;
        grad_out.expect_dims(self.cell.state_dims(), "convlstm gradient")?;
        let steps = caches.len();
        let frame = in_dims[1..].iter().product::<usize>();
        let mut dx = vec![T::zero(); steps * frame];
        let mut dh = grad_out.data().to_vec();
        let mut dc = vec![T::zero(); dh.len()];
        let mut acc: Vec<Vec<T>> = Vec::new();
        for t in (0..steps).rev() {
            let (dx_t, dh_prev, dc_prev, params) = self.cell.step_backward_raw(&caches[t], &dh, &dc, true)?;
            dx[t * frame..(t + 1) * frame].copy_from_slice(&dx_t.expect("requested"));
            if acc.is_empty() {
                acc = params;
            } else {
                for (a, p) in acc.iter_mut().zip(params) {
                    for (x, y) in a.iter_mut().zip(p) {
                        *x += y;
                    }
                }
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        let shapes: Vec<Vec<usize>> = self.cell.params().iter().map(|(_, t)| t.dims().to_vec()).collect();
        Ok(Grads {
            input: Tensor::new(in_dims.clone(), dx)?,
            params: acc.into_iter().zip(shapes).map(|(d, s)| Tensor::new(s, d)).collect::<Result<_>>()?,
        })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.cell.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.cell.params_mut()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cell(h: usize, w: usize, c_in: usize, f: usize) -> ConvLstmCell<f64> {
        let k = 3;
        ConvLstmCell::from_params(
            "cell",
            Tensor::zeros(vec![k, k, c_in, 4 * f]).unwrap(),
            Tensor::zeros(vec![k, k, f, 4 * f]).unwrap(),
            [
                Tensor::zeros(vec![h, w, f]).unwrap(),
                Tensor::zeros(vec![h, w, f]).unwrap(),
                Tensor::zeros(vec![h, w, f]).unwrap(),
            ],
            Tensor::zeros(vec![4 * f]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_fixed_point() {
        let cell = zero_cell(3, 4, 2, 2);
        let x = Tensor::full(vec![3, 4, 2], 0.9).unwrap();
        let z = Tensor::zeros(vec![3, 4, 2]).unwrap();
        let (h, c) = convlstm_cell_step(&cell, &x, &z, &z).unwrap();
        assert!(h.data().iter().chain(c.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_hand_evaluation() {
        let mut cell = zero_cell(1, 1, 1, 1);
        cell.bias.data_mut()[2] = 1.0;
        let z = Tensor::zeros(vec![1, 1, 1]).unwrap();
        let (h, c) = convlstm_cell_step(&cell, &z, &z, &z).unwrap();
        // c = σ(0)·tanh(1), h = σ(0)·tanh(c)
        let c_want = 0.5 * 1f64.tanh();
        let h_want = 0.5 * c_want.tanh();
        assert!((c.data()[0] - c_want).abs() < 1e-15);
        assert!((h.data()[0] - h_want).abs() < 1e-15);
        assert!((c.data()[0] - 0.38079).abs() < 1e-5);
        assert!((h.data()[0] - 0.181700).abs() < 1e-5);
    }

    #[test]
    fn same_padding_keeps_spatial_dims() {
        let mut rng = rand::thread_rng();
        let cell = ConvLstmCell::<f64>::new("c", 3, 3, 4, 5, 7, &mut rng).unwrap();
        let x = Tensor::uniform(vec![5, 7, 3], 1.0, &mut rng).unwrap();
        let z = Tensor::zeros(vec![5, 7, 4]).unwrap();
        let (h, c) = convlstm_cell_step(&cell, &x, &z, &z).unwrap();
        assert_eq!(h.dims(), &[5, 7, 4]);
        assert_eq!(c.dims(), &[5, 7, 4]);
    }

    #[test]
    fn saturated_gates_carry_the_cell_state() {
        let mut cell = zero_cell(2, 2, 1, 1);
        // i ≡ 0, f ≡ 1
        cell.bias.data_mut()[0] = -60.0;
        cell.bias.data_mut()[1] = 60.0;
        let x = Tensor::full(vec![2, 2, 1], 0.3).unwrap();
        let h = Tensor::new(vec![2, 2, 1], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let c_prev = Tensor::new(vec![2, 2, 1], vec![0.7, -1.3, 2.0, 0.05]).unwrap();
        let (_, c) = convlstm_cell_step(&cell, &x, &h, &c_prev).unwrap();
        assert!(c.max_abs_diff(&c_prev).unwrap() < 1e-6);
    }

    #[test]
    fn mismatched_state_is_shape_error() {
        let cell = zero_cell(2, 2, 1, 1);
        let x = Tensor::zeros(vec![2, 2, 1]).unwrap();
        let bad = Tensor::zeros(vec![3, 2, 1]).unwrap();
        assert!(matches!(convlstm_cell_step(&cell, &x, &bad, &x), Err(Error::Shape(_))));
    }
}
