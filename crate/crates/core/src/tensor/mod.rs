//! Dense row-major tensors.
//!
//! No broadcasting: every element-wise operation requires identical shapes
//! and reports a shape error otherwise.

mod fd;
mod float;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fd::finite_difference_gradient;
pub use float::Float;

/// Ordered list of positive dimensions.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::shape("shape must have at least one dimension"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("shape {dims:?} has a zero dimension")));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    pub fn linear_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.0.len() {
            return Err(Error::shape(format!(
                "index {index:?} has rank {} but shape {self} has rank {}",
                index.len(),
                self.rank()
            )));
        }
        let mut linear = 0;
        for (&i, &d) in index.iter().zip(&self.0) {
            if i >= d {
                return Err(Error::shape(format!("index {index:?} out of bounds for {self}")));
            }
            linear = linear * d + i;
        }
        Ok(linear)
    }

    pub fn unravel(&self, mut linear: usize) -> Vec<usize> {
        let mut index = vec![0; self.0.len()];
        for (slot, &d) in index.iter_mut().zip(&self.0).rev() {
            *slot = linear % d;
            linear /= d;
        }
        index
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(shape: Shape) -> Self {
        shape.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("×"))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// N-dimensional array with row-major storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{} [{:?}, ... {} values]", self.shape, &self.data[..8], self.data.len())
        }
    }
}

impl<T: Float> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_shape(shape: Shape, data: Vec<T>) -> Result<Self> {
        Tensor::new(shape.0, data)
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor { shape, data: vec![value; n] })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(dims, T::zero())
    }

    pub fn ones(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(dims, T::one())
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor { shape: other.shape.clone(), data: vec![T::zero(); other.data.len()] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Shape(vec![1]), data: vec![value] }
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Result<Self> {
        let mut t = Tensor::zeros(vec![n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    /// Values drawn uniformly from `[-limit, limit)`.
    pub fn uniform(dims: impl Into<Vec<usize>>, limit: f64, rng: &mut impl Rng) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit)))
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.shape.linear_index(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let i = self.shape.linear_index(index)?;
        self.data[i] = value;
        Ok(())
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn into_reshaped(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Ok(Tensor { shape, data: self.data })
    }

    /// Row-major linearization.
    pub fn flatten(&self) -> Self {
        Tensor { shape: Shape(vec![self.len()]), data: self.data.clone() }
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor<T>, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Tensor<T>, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {} and {} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn expect_dims(&self, dims: &[usize], what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::shape(format!(
                "{what}: expected shape {dims:?}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.rank() != rank {
            return Err(Error::shape(format!(
                "{what}: expected rank {rank}, got shape {}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Element-wise product.
    pub fn hadamard(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        self.expect_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    fn matrix_dims(&self, what: &str) -> Result<(usize, usize)> {
        match self.dims() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::shape(format!("{what}: expected a matrix, got {}", self.shape))),
        }
    }

    /// `self[m×k] · other[k×n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let (m, k) = self.matrix_dims("matmul")?;
        let (k2, n) = other.matrix_dims("matmul")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions differ for {} and {}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, false);
        Tensor::new(vec![m, n], out)
    }

    /// `self[m×k] · other[n×k]ᵀ`.
    pub fn matmul_nt(&self, other: &Tensor<T>) -> Result<Self> {
        let (m, k) = self.matrix_dims("matmul_nt")?;
        let (n, k2) = other.matrix_dims("matmul_nt")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul_nt: inner dimensions differ for {} and {}ᵀ",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, false, &other.data, true, &mut out, false);
        Tensor::new(vec![m, n], out)
    }

    /// `self[k×m]ᵀ · other[k×n]`.
    pub fn matmul_tn(&self, other: &Tensor<T>) -> Result<Self> {
        let (k, m) = self.matrix_dims("matmul_tn")?;
        let (k2, n) = other.matrix_dims("matmul_tn")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul_tn: inner dimensions differ for {}ᵀ and {}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, true, &other.data, false, &mut out, false);
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.matrix_dims("transpose")?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    /// Softmax along the last axis with max subtraction.
    pub fn softmax(&self) -> Result<Self> {
        if !self.all_finite() {
            return Err(Error::NumericInput("softmax input contains non-finite values".into()));
        }
        let n = *self.dims().last().expect("rank >= 1");
        let mut out = self.data.clone();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        Ok(Tensor { shape: self.shape.clone(), data: out })
    }

    /// Slice `index` along the leading axis.
    pub fn index_axis0(&self, index: usize) -> Result<Self> {
        let dims = self.dims();
        if index >= dims[0] {
            return Err(Error::shape(format!("index {index} out of range for {}", self.shape)));
        }
        let inner: Vec<usize> = if dims.len() == 1 { vec![1] } else { dims[1..].to_vec() };
        let step = self.len() / dims[0];
        Tensor::new(inner, self.data[index * step..(index + 1) * step].to_vec())
    }

    /// Contiguous range `[start, end)` along the leading axis.
    pub fn slice_axis0(&self, start: usize, end: usize) -> Result<Self> {
        let dims = self.dims();
        if start >= end || end > dims[0] {
            return Err(Error::shape(format!(
                "slice [{start}, {end}) out of range for {}",
                self.shape
            )));
        }
        let step = self.len() / dims[0];
        let mut new_dims = dims.to_vec();
        new_dims[0] = end - start;
        Tensor::new(new_dims, self.data[start * step..end * step].to_vec())
    }

    /// Stack equal-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for (i, t) in items.iter().enumerate() {
            if t.shape != first.shape {
                return Err(Error::shape(format!(
                    "stack: item {i} has shape {} but item 0 has {}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(first.dims());
        Tensor::new(dims, data)
    }

    /// Concatenate along the last axis.
    pub fn concat_last(&self, other: &Tensor<T>) -> Result<Self> {
        let (a, b) = (self.dims(), other.dims());
        if a.len() != b.len() || a[..a.len() - 1] != b[..b.len() - 1] {
            return Err(Error::shape(format!(
                "concat: leading dims of {} and {} differ",
                self.shape, other.shape
            )));
        }
        let (na, nb) = (a[a.len() - 1], b[b.len() - 1]);
        let rows = self.len() / na;
        let mut data = Vec::with_capacity(self.len() + other.len());
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * na..(r + 1) * na]);
            data.extend_from_slice(&other.data[r * nb..(r + 1) * nb]);
        }
        let mut dims = a.to_vec();
        *dims.last_mut().expect("rank >= 1") = na + nb;
        Tensor::new(dims, data)
    }

    /// Split the last axis at `at` (inverse of [`Tensor::concat_last`]).
    pub fn split_last(&self, at: usize) -> Result<(Self, Self)> {
        let dims = self.dims();
        let n = dims[dims.len() - 1];
        if at == 0 || at >= n {
            return Err(Error::shape(format!("cannot split last axis of {} at {at}", self.shape)));
        }
        let rows = self.len() / n;
        let mut left = Vec::with_capacity(rows * at);
        let mut right = Vec::with_capacity(rows * (n - at));
        for r in 0..rows {
            left.extend_from_slice(&self.data[r * n..r * n + at]);
            right.extend_from_slice(&self.data[r * n + at..(r + 1) * n]);
        }
        let mut ld = dims.to_vec();
        let mut rd = dims.to_vec();
        *ld.last_mut().expect("rank >= 1") = at;
        *rd.last_mut().expect("rank >= 1") = n - at;
        Ok((Tensor::new(ld, left)?, Tensor::new(rd, right)?))
    }
}

pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `c (+)= op(a) · op(b)` on contiguous row-major buffers, where `op(a)` is
/// `m×k` and `op(b)` is `k×n`. With `a_t` the buffer holds `a` as `k×m`;
/// with `b_t` it holds `b` as `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: buffer sizes are asserted above and `c` is a distinct &mut borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(dims: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(Tensor::eye(2).unwrap().matmul(&a).unwrap(), a);
        let b = t(&[2, 1], &[5., 6.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[17., 39.]);
        let z = Tensor::<f64>::zeros(vec![2, 2]).unwrap();
        let any = t(&[2, 3], &[1., -2., 3., 0.5, 9., 7.]);
        assert_eq!(z.matmul(&any).unwrap(), Tensor::zeros(vec![2, 3]).unwrap());
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = t(&[2, 3], &[0.; 6]);
        let b = t(&[2, 3], &[0.; 6]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2×3]") && err.contains("inner"), "{err}");
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f64>::uniform(vec![3, 4], 1.0, &mut rng).unwrap();
        let b = Tensor::<f64>::uniform(vec![5, 4], 1.0, &mut rng).unwrap();
        let c = Tensor::<f64>::uniform(vec![3, 5], 1.0, &mut rng).unwrap();
        let nt = a.matmul_nt(&b).unwrap();
        assert!(nt.max_abs_diff(&a.matmul(&b.transpose().unwrap()).unwrap()).unwrap() < 1e-12);
        let tn = a.matmul_tn(&c).unwrap();
        assert!(tn.max_abs_diff(&a.transpose().unwrap().matmul(&c).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn hadamard_examples() {
        let a = t(&[3], &[1., 2., 3.]);
        assert_eq!(a.hadamard(&Tensor::ones(vec![3]).unwrap()).unwrap(), a);
        assert_eq!(a.hadamard(&Tensor::zeros(vec![3]).unwrap()).unwrap().data(), &[0.; 3]);
        assert_eq!(a.hadamard(&t(&[3], &[4., 5., 6.])).unwrap().data(), &[4., 10., 18.]);
        assert!(matches!(a.hadamard(&t(&[1, 3], &[1., 1., 1.])), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(t(&[2], &[0., 0.]).softmax().unwrap().data(), &[0.5, 0.5]);
        for c in [-40.0, 0.0, 3.5, 700.0] {
            let s = t(&[4], &[c; 4]).softmax().unwrap();
            assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        }
        let s = t(&[2], &[0., 3f64.ln()]).softmax().unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12 && (s.data()[1] - 0.75).abs() < 1e-12);
        assert!(matches!(t(&[2], &[0., f64::NAN]).softmax(), Err(Error::NumericInput(_))));
    }

    #[test]
    fn shape_rejects_zero_dims_and_data_mismatch() {
        assert!(Shape::new(vec![2, 0]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn concat_and_split_invert() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[5., 6.]);
        let c = a.concat_last(&b).unwrap();
        assert_eq!(c.data(), &[1., 2., 5., 3., 4., 6.]);
        let (l, r) = c.split_last(2).unwrap();
        assert_eq!((l, r), (a, b));
    }

    proptest! {
        #[test]
        fn index_round_trips(dims in prop::collection::vec(1usize..5, 1..5), seed in 0u64..1000) {
            let shape = Shape::new(dims).unwrap();
            let linear = (seed as usize) % shape.numel();
            let idx = shape.unravel(linear);
            prop_assert_eq!(shape.linear_index(&idx).unwrap(), linear);
        }

        #[test]
        fn matmul_is_associative(m in 1usize..5, k in 1usize..5, l in 1usize..5, n in 1usize..5, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::<f64>::uniform(vec![m, k], 1.0, &mut rng).unwrap();
            let b = Tensor::<f64>::uniform(vec![k, l], 1.0, &mut rng).unwrap();
            let c = Tensor::<f64>::uniform(vec![l, n], 1.0, &mut rng).unwrap();
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-10);

            let (a32, b32, c32) = (a.cast::<f32>(), b.cast::<f32>(), c.cast::<f32>());
            let left = a32.matmul(&b32).unwrap().matmul(&c32).unwrap();
            let right = a32.matmul(&b32.matmul(&c32).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-4 * x.abs().max(y.abs()).max(1.0));
            }
        }

        #[test]
        fn softmax_is_a_positive_distribution(v in prop::collection::vec(-80.0f64..80.0, 1..12), shift in -50.0f64..50.0) {
            let x = Tensor::from_vec(v).unwrap();
            let s = x.softmax().unwrap();
            prop_assert!(s.data().iter().all(|&p| p > 0.0));
            prop_assert!((s.sum() - 1.0).abs() < 1e-6);
            let shifted = x.map(|e| e + shift).softmax().unwrap();
            prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-6);
        }
    }
}
