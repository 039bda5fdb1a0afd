//! Dense row-major tensors and the numeric kernels the model is built from.
//!
//! A [`Tensor`] owns a contiguous buffer; there are no strided views.
//! Transposes and slices copy. Differentiable versions of every kernel live
//! on [`GradTape`].

mod checkpoint;
mod gradcheck;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, check_gradients_with, GradCheck, GradCheckOptions};
pub use tape::{GradTape, Gradients, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor from `f64` values, rounding to `T`.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_f64(&[rows.len(), cols], &flat)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// First element; the value of a scalar tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::InvalidArgument(format!(
                "expected a matrix, got shape {other:?}"
            ))),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[self.shape.len() - 1] + c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += other`; used for gradient accumulation.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Standard matrix product of `m×k` by `k×n`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self
            .dims2()
            .map_err(|_| Error::shape("matmul", &self.shape, &other.shape))?;
        let (k2, n) = other
            .dims2()
            .map_err(|_| Error::shape("matmul", &self.shape, &other.shape))?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(self.data[i * c + j]);
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data,
        })
    }

    /// Softmax along `axis`, max-subtracted so large logits do not overflow.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::InvalidArgument(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let at = |j: usize| base + j * inner;
                let max = (0..n).map(|j| out[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..n {
                    let e = (out[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Layer normalization over the last axis followed by the affine
    /// `gain`/`bias`. Variance is the population variance; `eps` keeps a
    /// constant row finite (it maps to `bias`).
    pub fn layer_norm(&self, gain: &Self, bias: &Self, eps: T) -> Result<Self> {
        let d = *self.shape.last().expect("tensor has rank >= 1");
        if gain.numel() != d || bias.numel() != d {
            return Err(Error::shape("layer_norm", &self.shape, gain.shape()));
        }
        if !(eps > T::zero()) {
            return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data.chunks(d) {
            let (mean, inv_std) = row_stats(row, eps);
            for (j, &x) in row.iter().enumerate() {
                out.push((x - mean) * inv_std * gain.data[j] + bias.data[j]);
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    pub fn gelu(&self) -> Self {
        self.map(gelu)
    }

    pub fn tanh_act(&self) -> Self {
        self.map(T::tanh)
    }

    /// Copy of rows `start..start + len` of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if start + len > r || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "row slice {start}..{} out of range for {r} rows",
                start + len
            )));
        }
        Ok(Self {
            shape: vec![len, c],
            data: self.data[start * c..(start + len) * c].to_vec(),
        })
    }

    /// Copy of columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if start + len > c || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "column slice {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Ok(Self {
            shape: vec![r, len],
            data,
        })
    }

    pub fn concat_cols(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("concat input"))?;
        let (r, _) = first.dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = p.dims2()?;
            if pr != r {
                return Err(Error::shape("concat_cols", first.shape(), p.shape()));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Ok(Self {
            shape: vec![r, total],
            data,
        })
    }

    pub fn concat_rows(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("concat input"))?;
        let (_, c) = first.dims2()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (pr, pc) = p.dims2()?;
            if pc != c {
                return Err(Error::shape("concat_rows", first.shape(), p.shape()));
            }
            rows += pr;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![rows, c],
            data,
        })
    }

    /// `self + bias` with `bias` (length = last dimension) broadcast over rows.
    pub fn add_row(&self, bias: &Self) -> Result<Self> {
        let d = *self.shape.last().expect("rank >= 1");
        if bias.numel() != d {
            return Err(Error::shape("add_row", &self.shape, bias.shape()));
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(d) {
            for (x, &b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`, `out: m×n`.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: m×k`, `b: n×k`.
pub(crate) fn matmul_nt_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out += aᵀ · b` for `a: k×m`, `b: k×n`.
pub(crate) fn matmul_tn_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
}

pub(crate) fn row_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::lit(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

const GELU_COEFF: f64 = 0.044715;

fn sqrt_2_over_pi<T: Scalar>() -> T {
    T::lit((2.0 / std::f64::consts::PI).sqrt())
}

/// GeLU, tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = sqrt_2_over_pi::<T>() * (x + T::lit(GELU_COEFF) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = sqrt_2_over_pi::<T>();
    let a = T::lit(GELU_COEFF);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn zero_matmul() {
        let a = Tensor::<f32>::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 1]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[3, 4], 1);
        let b = random(&[4, 2], 2);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a.get2(i, p) * b.get2(p, j);
                }
                let got = c.get2(i, j);
                assert!((got - acc).abs() / acc.abs().max(1e-12) <= 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let t = Tensor::<f32>::from_f64(&[2], &[0.0, 0.0]).unwrap().softmax(0).unwrap();
        assert_eq!(t.data(), &[0.5, 0.5]);
        let t = Tensor::<f32>::from_f64(&[2], &[1000.0, 0.0])
            .unwrap()
            .softmax(0)
            .unwrap();
        assert!(t.is_finite());
        assert!((t.data()[0] - 1.0).abs() < 1e-6 && t.data()[1] < 1e-6);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = random(&[5], 3).scale(3.0);
        let s = x.softmax(0).unwrap();
        let denom: f64 = x.data().iter().map(|v| v.exp()).sum();
        for (i, &v) in x.data().iter().enumerate() {
            let want = v.exp() / denom;
            assert!((s.data()[i] - want).abs() / want <= 1e-6);
        }
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = random(&[3, 4], 9);
        let s = x.softmax(0).unwrap();
        for j in 0..4 {
            let col: f64 = (0..3).map(|i| s.get2(i, j)).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::<f32>::full(&[1, 4], 5.0);
        let y = x.layer_norm(&Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-6).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn layer_norm_zero_gain_yields_bias() {
        let x = random(&[3, 4], 4);
        let b = Tensor::from_f64(&[4], &[0.1, -0.2, 0.3, 0.4]).unwrap();
        let y = x.layer_norm(&Tensor::zeros(&[4]), &b, 1e-6).unwrap();
        for row in y.data().chunks(4) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn layer_norm_moments() {
        let x = random(&[1, 16], 5).scale(7.0);
        let y = x.layer_norm(&Tensor::ones(&[16]), &Tensor::zeros(&[16]), 1e-6).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 16.0;
        let var: f64 = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-6);
        assert!((var - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(0.0f64.tanh(), 0.0);
    }

    #[test]
    fn gelu_matches_formula_at_three() {
        let x = 3.0f64;
        let want = 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        let got = gelu(3.0f32) as f64;
        assert!((got - want).abs() / want <= 1e-6);
    }

    #[test]
    fn rejects_zero_dims_and_length_mismatch() {
        assert!(Tensor::<f32>::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
