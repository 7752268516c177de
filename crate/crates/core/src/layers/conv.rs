//! 2D and 3D convolution.
//!
//! This is true convolution: output `o` at `(s, t)` sums
//! `A_k[s + p, t + q] · W_ok[P - 1 - p, Q - 1 - q]` over the kernel window
//! and input channels. Internally the kernel is flipped once and the sum is
//! evaluated as an im2col matrix product. Both ranks share one engine that
//! treats a 2D input as a single-frame 3D input.

use std::any::Any;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot;
use super::{Activation, Cache, ForwardCtx, Grads, Layer, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvRank {
    Two,
    Three,
}

/// Resolved sizes for one convolution over a `[T, H, W, C]` volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub input: [usize; 3],
    pub c_in: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
    pub c_out: usize,
}

impl Geometry {
    pub fn new(
        input: [usize; 3],
        c_in: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: Padding,
        c_out: usize,
    ) -> Result<Self> {
        let mut pad = [0; 3];
        let mut output = [0; 3];
        for axis in 0..3 {
            let (n, k, s) = (input[axis], kernel[axis], stride[axis]);
            if k == 0 || s == 0 {
                return Err(Error::config("kernel size and stride must be at least 1"));
            }
            match padding {
                Padding::Valid => {
                    if n < k {
                        return Err(Error::shape(format!(
                            "input extent {n} is smaller than kernel extent {k} under valid padding"
                        )));
                    }
                    output[axis] = (n - k) / s + 1;
                }
                Padding::Same => {
                    let out = n.div_ceil(s);
                    let total = ((out - 1) * s + k).saturating_sub(n);
                    pad[axis] = total / 2;
                    output[axis] = out;
                }
            }
        }
        Ok(Geometry { input, c_in, kernel, stride, pad, output, c_out })
    }

    pub fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    pub fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.c_in
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product::<usize>() * self.c_in
    }
}

/// Unfold every receptive field into a row of `[positions × patch_len]`.
pub(crate) fn im2col<T: Float>(x: &[T], g: &Geometry) -> Vec<T> {
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let [ot, oh, ow] = g.output;
    let c = g.c_in;
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); g.out_positions() * patch];
    let mut row = 0;
    for t in 0..ot {
        for h in 0..oh {
            for w in 0..ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                let mut off = 0;
                for dt in 0..kt {
                    let st_ = (t * st + dt) as isize - pt as isize;
                    for dh in 0..kh {
                        let sh_ = (h * sh + dh) as isize - ph as isize;
                        for dw in 0..kw {
                            let sw_ = (w * sw + dw) as isize - pw as isize;
                            let inside = st_ >= 0
                                && sh_ >= 0
                                && sw_ >= 0
                                && (st_ as usize) < it
                                && (sh_ as usize) < ih
                                && (sw_ as usize) < iw;
                            if inside {
                                let src = ((st_ as usize * ih + sh_ as usize) * iw + sw_ as usize) * c;
                                dst[off..off + c].copy_from_slice(&x[src..src + c]);
                            }
                            off += c;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-add the inverse of [`im2col`].
pub(crate) fn col2im<T: Float>(cols: &[T], g: &Geometry) -> Vec<T> {
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let [ot, oh, ow] = g.output;
    let c = g.c_in;
    let patch = g.patch_len();
    let mut x = vec![T::zero(); g.input_len()];
    let mut row = 0;
    for t in 0..ot {
        for h in 0..oh {
            for w in 0..ow {
                let src_row = &cols[row * patch..(row + 1) * patch];
                let mut off = 0;
                for dt in 0..kt {
                    let st_ = (t * st + dt) as isize - pt as isize;
                    for dh in 0..kh {
                        let sh_ = (h * sh + dh) as isize - ph as isize;
                        for dw in 0..kw {
                            let sw_ = (w * sw + dw) as isize - pw as isize;
                            let inside = st_ >= 0
                                && sh_ >= 0
                                && sw_ >= 0
                                && (st_ as usize) < it
                                && (sh_ as usize) < ih
                                && (sw_ as usize) < iw;
                            if inside {
                                let dst = ((st_ as usize * ih + sh_ as usize) * iw + sw_ as usize) * c;
                                for (d, &s) in x[dst..dst + c].iter_mut().zip(&src_row[off..off + c]) {
                                    *d += s;
                                }
                            }
                            off += c;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

/// Reverse the three spatial axes of a `[kt, kh, kw, c_in, c_out]` kernel.
/// The flip is its own inverse.
pub(crate) fn flip_kernel<T: Float>(w: &[T], g: &Geometry) -> Vec<T> {
    let [kt, kh, kw] = g.kernel;
    let block = g.c_in * g.c_out;
    let mut out = vec![T::zero(); w.len()];
    for dt in 0..kt {
        for dh in 0..kh {
            for dw in 0..kw {
                let src = ((dt * kh + dh) * kw + dw) * block;
                let dst = (((kt - 1 - dt) * kh + (kh - 1 - dh)) * kw + (kw - 1 - dw)) * block;
                out[dst..dst + block].copy_from_slice(&w[src..src + block]);
            }
        }
    }
    out
}

/// Pre-activation convolution. Returns `[positions × c_out]` and the im2col
/// buffer needed by [`conv_backward_raw`].
pub(crate) fn conv_forward_raw<T: Float>(
    x: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    g: &Geometry,
) -> (Vec<T>, Vec<T>) {
    let cols = im2col(x, g);
    let wmat = flip_kernel(kernel, g);
    let (m, k, n) = (g.out_positions(), g.patch_len(), g.c_out);
    let mut out = vec![T::zero(); m * n];
    if let Some(b) = bias {
        for row in out.chunks_mut(n) {
            row.copy_from_slice(b);
        }
    }
    gemm(m, k, n, &cols, false, &wmat, false, &mut out, bias.is_some());
    (out, cols)
}

pub(crate) struct ConvBackward<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv_backward_raw<T: Float>(
    cols: &[T],
    kernel: &[T],
    grad_out: &[T],
    g: &Geometry,
    need_input: bool,
) -> ConvBackward<T> {
    let (m, k, n) = (g.out_positions(), g.patch_len(), g.c_out);
    let mut dwmat = vec![T::zero(); k * n];
    gemm(k, m, n, cols, true, grad_out, false, &mut dwmat, false);
    let mut bias = vec![T::zero(); n];
    for row in grad_out.chunks(n) {
        for (b, &v) in bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    let input = need_input.then(|| {
        let wmat = flip_kernel(kernel, g);
        let mut dcols = vec![T::zero(); m * k];
        gemm(m, n, k, grad_out, false, &wmat, true, &mut dcols, false);
        col2im(&dcols, g)
    });
    ConvBackward { input, kernel: flip_kernel(&dwmat, g), bias }
}

/// Convolution layer with bias and a fused activation `g_m`.
pub struct Conv<T> {
    name: String,
    rank: ConvRank,
    kernel: Tensor<T>,
    bias: Tensor<T>,
    padding: Padding,
    stride: [usize; 3],
    activation: Activation,
}

struct ConvCache<T> {
    cols: Vec<T>,
    output: Tensor<T>,
    geometry: Geometry,
}

impl<T: Float> Conv<T> {
    /// Square `k×k` 2D convolution with glorot-uniform kernel and zero bias.
    pub fn new_2d(
        name: impl Into<String>,
        k: usize,
        c_in: usize,
        c_out: usize,
        padding: Padding,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let kernel = glorot(vec![k, k, c_in, c_out], k * k * c_in, k * k * c_out, rng)?;
        Conv::from_params(name, ConvRank::Two, kernel, Tensor::zeros(vec![c_out])?, padding, 1, activation)
    }

    pub fn new_3d(
        name: impl Into<String>,
        k: [usize; 3],
        c_in: usize,
        c_out: usize,
        padding: Padding,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let vol: usize = k.iter().product();
        let kernel = glorot(vec![k[0], k[1], k[2], c_in, c_out], vol * c_in, vol * c_out, rng)?;
        Conv::from_params(name, ConvRank::Three, kernel, Tensor::zeros(vec![c_out])?, padding, 1, activation)
    }

    /// Kernel is `[K, K, C_in, C_out]` for rank two and
    /// `[K_t, K_h, K_w, C_in, C_out]` for rank three.
    pub fn from_params(
        name: impl Into<String>,
        rank: ConvRank,
        kernel: Tensor<T>,
        bias: Tensor<T>,
        padding: Padding,
        stride: usize,
        activation: Activation,
    ) -> Result<Self> {
        let want = match rank {
            ConvRank::Two => 4,
            ConvRank::Three => 5,
        };
        kernel.expect_rank(want, "convolution kernel")?;
        let c_out = *kernel.dims().last().expect("rank checked");
        bias.expect_dims(&[c_out], "convolution bias")?;
        if stride == 0 {
            return Err(Error::config("convolution stride must be at least 1"));
        }
        if activation == Activation::Softmax {
            return Err(Error::config("softmax is not an element-wise convolution activation"));
        }
        let stride = match rank {
            ConvRank::Two => [1, stride, stride],
            ConvRank::Three => [stride; 3],
        };
        Ok(Conv { name: name.into(), rank, kernel, bias, padding, stride, activation })
    }

    pub fn rank(&self) -> ConvRank {
        self.rank
    }

    pub fn kernel(&self) -> &Tensor<T> {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn out_channels(&self) -> usize {
        *self.kernel.dims().last().expect("rank checked")
    }

    fn kernel_extent(&self) -> [usize; 3] {
        let d = self.kernel.dims();
        match self.rank {
            ConvRank::Two => [1, d[0], d[1]],
            ConvRank::Three => [d[0], d[1], d[2]],
        }
    }

    fn in_channels(&self) -> usize {
        let d = self.kernel.dims();
        d[d.len() - 2]
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry> {
        let (spatial, c) = match (self.rank, input) {
            (ConvRank::Two, [h, w, c]) => ([1, *h, *w], *c),
            (ConvRank::Three, [t, h, w, c]) => ([*t, *h, *w], *c),
            _ => {
                return Err(Error::shape(format!(
                    "{}: unexpected input shape {input:?}",
                    self.name
                )))
            }
        };
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "{}: input has {c} channels, kernel expects {}",
                self.name,
                self.in_channels()
            )));
        }
        Geometry::new(spatial, c, self.kernel_extent(), self.stride, self.padding, self.out_channels())
            .map_err(|e| e.context(&self.name))
    }

    fn output_shape(&self, g: &Geometry) -> Vec<usize> {
        match self.rank {
            ConvRank::Two => vec![g.output[1], g.output[2], g.c_out],
            ConvRank::Three => vec![g.output[0], g.output[1], g.output[2], g.c_out],
        }
    }
}

pub fn conv2d_forward<T: Float>(p: &Conv<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if p.rank != ConvRank::Two {
        return Err(Error::usage("conv2d_forward needs a rank-two convolution"));
    }
    Ok(p.forward(x, &mut super::ForwardCtx::inference())?.0)
}

pub fn conv3d_forward<T: Float>(p: &Conv<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if p.rank != ConvRank::Three {
        return Err(Error::usage("conv3d_forward needs a rank-three convolution"));
    }
    Ok(p.forward(x, &mut super::ForwardCtx::inference())?.0)
}

impl<T: Float> Layer<T> for Conv<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LayerKind {
        match self.rank {
            ConvRank::Two => LayerKind::Conv2d,
            ConvRank::Three => LayerKind::Conv3d,
        }
    }

    fn describe(&self) -> String {
        let base = match self.rank {
            ConvRank::Two => "conv2d",
            ConvRank::Three => "conv3d",
        };
        format!("{base}({}){}", self.out_channels(), self.activation.suffix())
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(self.output_shape(&self.geometry(input)?))
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        let g = self.geometry(x.dims())?;
        let (pre, cols) = conv_forward_raw(x.data(), self.kernel.data(), Some(self.bias.data()), &g);
        let pre = Tensor::new(self.output_shape(&g), pre)?;
        let output = self.activation.apply(&pre)?;
        let cache = if ctx.caching {
            Cache::store(ctx, ConvCache { cols, output: output.clone(), geometry: g })
        } else {
            Cache::empty()
        };
        Ok((output, cache))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let c: &ConvCache<T> = cache.get(&self.name)?;
        let g_pre = self.activation.backward(&c.output, grad_out)?;
        let back = conv_backward_raw(&c.cols, self.kernel.data(), g_pre.data(), &c.geometry, true);
        let in_shape = match self.rank {
            ConvRank::Two => vec![c.geometry.input[1], c.geometry.input[2], c.geometry.c_in],
            ConvRank::Three => {
                let [t, h, w] = c.geometry.input;
                vec![t, h, w, c.geometry.c_in]
            }
        };
        Ok(Grads {
            input: Tensor::new(in_shape, back.input.expect("requested"))?,
            params: vec![
                Tensor::from_shape(self.kernel.shape().clone(), back.kernel)?,
                Tensor::from_shape(self.bias.shape().clone(), back.bias)?,
            ],
        })
    }

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
