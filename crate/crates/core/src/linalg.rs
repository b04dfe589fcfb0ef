//! Dense row-major matrices and the handful of kernels the graph network
//! needs: products, row softmax, layer normalization, ReLU and pooling.
//!
//! Every kernel accumulates in a fixed order (ascending inner index), so a
//! given input always produces bit-identical output. `f64` is the default
//! element type; `f32` can be selected through the [`Real`] parameter.

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Floating-point element type accepted by [`Matrix`].
pub trait Real: Float + Default + fmt::Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Length {
                op: "Matrix::from_vec",
                left: rows * cols,
                right: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Length {
                    op: "Matrix::from_rows",
                    left: cols,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single-row matrix.
    pub fn row_vector(v: &[T]) -> Self {
        Matrix {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add_assign", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(Error::shape("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn concat_cols(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape("concat_cols", self.shape(), other.shape()));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Applies a row permutation and the same permutation to columns:
    /// `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permute_square(&self, perm: &[usize]) -> Self {
        Matrix::from_fn(perm.len(), perm.len(), |i, j| self.get(perm[i], perm[j]))
    }

    /// `out[i] = self[perm[i]]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        Matrix::from_fn(perm.len(), self.cols, |i, j| self.get(perm[i], j))
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from(*v).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

/// `a · b`.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            let br = b.row(j);
            let mut acc = T::zero();
            for (&x, &y) in ar.iter().zip(br) {
                acc = acc + x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_tn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    let n = b.cols;
    for k in 0..a.rows {
        let b_row = b.row(k);
        for i in 0..a.cols {
            let aki = a.data[k * a.cols + i];
            if aki == T::zero() {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aki * bv;
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Per-row layer normalization over the feature dimension.
pub fn layer_norm<T: Real>(x: &Matrix<T>, gain: &[T], bias: &[T], eps: T) -> Result<Matrix<T>> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return Err(Error::shape(
            "layer_norm",
            x.shape(),
            (gain.len(), bias.len()),
        ));
    }
    let mut out = x.clone();
    for r in 0..x.rows {
        let (mean, inv_std) = row_stats(x.row(r), eps);
        for ((o, &g), &b) in out.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *o = (*o - mean) * inv_std * g + b;
        }
    }
    Ok(out)
}

/// Row mean and `1 / sqrt(var + eps)` using the population variance.
pub(crate) fn row_stats<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::from(row.len()).unwrap_or_else(T::one);
    let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
    let var = row
        .iter()
        .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
        / n;
    let denom = (var + eps).sqrt();
    // Zero variance with eps = 0: the centered row is all zeros anyway.
    let inv_std = if denom > T::zero() {
        T::one() / denom
    } else {
        T::zero()
    };
    (mean, inv_std)
}

pub fn relu<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Arithmetic mean over rows.
pub fn mean_rows<T: Real>(x: &Matrix<T>) -> Result<Vec<T>> {
    if x.rows == 0 {
        return Err(Error::Empty { op: "mean_rows" });
    }
    let mut acc = vec![T::zero(); x.cols];
    for r in 0..x.rows {
        for (a, &v) in acc.iter_mut().zip(x.row(r)) {
            *a = *a + v;
        }
    }
    let n = T::from(x.rows).unwrap_or_else(T::one);
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Elementwise maximum over a list of equal-length vectors.
pub fn max_elementwise<T: Real, V: AsRef<[T]>>(vs: &[V]) -> Result<Vec<T>> {
    let first = vs
        .first()
        .ok_or(Error::Empty {
            op: "max_elementwise",
        })?
        .as_ref();
    let mut out = first.to_vec();
    for v in &vs[1..] {
        let v = v.as_ref();
        if v.len() != out.len() {
            return Err(Error::Length {
                op: "max_elementwise",
                left: out.len(),
                right: v.len(),
            });
        }
        for (o, &x) in out.iter_mut().zip(v) {
            *o = o.max(x);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng, scale: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random(3, 4, &mut rng, 1.0);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
        let z = matmul(&m, &Matrix::zeros(4, 2)).unwrap();
        assert_eq!(z, Matrix::zeros(3, 2));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(2, 2, &mut rng, 1.0);
        let b = random(2, 2, &mut rng, 1.0);
        let diff = matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)).unwrap();
        assert!(diff <= 1e-12);
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(4, 3, &mut rng, 1.0);
        let b = random(5, 3, &mut rng, 1.0);
        let c = random(4, 2, &mut rng, 1.0);
        let nt = matmul_nt(&a, &b).unwrap();
        assert!(nt.max_abs_diff(&naive(&a, &b.transpose())).unwrap() < 1e-14);
        let tn = matmul_tn(&a, &c).unwrap();
        assert!(tn.max_abs_diff(&naive(&a.transpose(), &c)).unwrap() < 1e-14);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::<f64>::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        for &v in softmax_rows(&m).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = -3.7;
        let m = Matrix::from_rows(&[[c, c + 2f64.ln()]]).unwrap();
        let s = softmax_rows(&m);
        assert!((s.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        let big = softmax_rows(&Matrix::from_rows(&[[1000.0, 1001.0]]).unwrap());
        let small = softmax_rows(&Matrix::from_rows(&[[0.0, 1.0]]).unwrap());
        assert!(big.max_abs_diff(&small).unwrap() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let x = Matrix::from_rows(&[[4.0, 4.0, 4.0]]).unwrap();
        let y = layer_norm(&x, &[1.0; 3], &[0.0; 3], LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let x = Matrix::from_rows(&[[1.0, 3.0]]).unwrap();
        let y = layer_norm(&x, &[1.0; 2], &[0.0; 2], 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);

        let x = Matrix::from_rows(&[[0.3, -2.0, 9.0]]).unwrap();
        let y = layer_norm(&x, &[0.0; 3], &[1.5, -2.0, 0.25], LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn relu_examples() {
        let x = Matrix::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Matrix::filled(2, 2, -0.5);
        assert_eq!(relu(&neg), Matrix::zeros(2, 2));
        let pos = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.5]]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn pooling_examples() {
        let x = Matrix::from_rows(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        assert_eq!(mean_rows(&x).unwrap(), vec![1.0, 1.0]);
        assert_eq!(max_elementwise(&[vec![4.0, -1.0]]).unwrap(), vec![4.0, -1.0]);
        assert_eq!(
            max_elementwise(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap(),
            vec![3.0, 5.0]
        );
        assert!(matches!(
            mean_rows(&Matrix::<f64>::zeros(0, 3)),
            Err(Error::Empty { .. })
        ));
        assert!(max_elementwise::<f64, Vec<f64>>(&[]).is_err());
        assert!(max_elementwise(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn single_precision_is_selectable() {
        let a: Matrix<f32> = Matrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
        let s = softmax_rows(&matmul(&a, &Matrix::identity(2)).unwrap());
        let sum: f32 = s.row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random(rows, cols, &mut rng, 1e4);
            let s = softmax_rows(&m);
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(s.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }

        #[test]
        fn layer_norm_standardizes(seed in any::<u64>(), cols in 2usize..32) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(3, cols, &mut rng, 10.0);
            let y = layer_norm(&x, &vec![1.0; cols], &vec![0.0; cols], 1e-12).unwrap();
            for r in 0..3 {
                let mean = y.row(r).iter().sum::<f64>() / cols as f64;
                let var = y.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn matmul_is_associative(seed in any::<u64>(), n in 1usize..6, m in 1usize..6, k in 1usize..6, l in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(n, m, &mut rng, 1.0);
            let b = random(m, k, &mut rng, 1.0);
            let c = random(k, l, &mut rng, 1.0);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.data().iter().fold(1.0f64, |s, v| s.max(v.abs()));
            prop_assert!(left.max_abs_diff(&right).unwrap() / scale < 1e-9);
        }

        #[test]
        fn max_is_order_invariant(seed in any::<u64>(), count in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut vs: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let before = max_elementwise(&vs).unwrap();
            vs.reverse();
            vs.rotate_left(count / 2);
            prop_assert_eq!(before, max_elementwise(&vs).unwrap());
        }
    }
}
