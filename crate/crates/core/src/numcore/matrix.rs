//! Dense row-major matrices of `f64` and the stable reductions built on them.

use std::fmt;

use crate::error::{Error, Result};

/// Epsilon added inside logarithms and denominators throughout the crate.
pub const EPS: f64 = 1e-12;

/// A dense, row-major matrix of 64-bit reals. Batches are stored one sample per row.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks(0) panics, so empty-width matrices yield `rows` empty slices.
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other, "elementwise op")?;
        Ok(Self {
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

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::shape(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Stacks `top` above `bottom`.
    pub fn vstack(top: &Self, bottom: &Self) -> Result<Self> {
        if top.cols != bottom.cols {
            return Err(Error::shape(format!(
                "cannot stack {}x{} on {}x{}",
                top.rows, top.cols, bottom.rows, bottom.cols
            )));
        }
        let mut data = Vec::with_capacity(top.data.len() + bottom.data.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(Self {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }

    /// Reinterprets the row-major buffer under a new shape of equal size.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, self.data)
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            Operand::plain(self),
            Operand::plain(other),
            &mut out,
            0.0,
        );
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "transposed matmul of ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            Operand::transposed(self),
            Operand::plain(other),
            &mut out,
            0.0,
        );
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul of {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(
            Operand::plain(self),
            Operand::transposed(other),
            &mut out,
            0.0,
        );
        Ok(out)
    }

    fn expect_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{what} on mismatched shapes {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// A matrix viewed either as-is or transposed, described by strides.
struct Operand<'a> {
    m: &'a DenseMatrix,
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Operand<'a> {
    fn plain(m: &'a DenseMatrix) -> Self {
        Self {
            m,
            rows: m.rows,
            cols: m.cols,
            row_stride: m.cols as isize,
            col_stride: 1,
        }
    }

    fn transposed(m: &'a DenseMatrix) -> Self {
        Self {
            m,
            rows: m.cols,
            cols: m.rows,
            row_stride: 1,
            col_stride: m.cols as isize,
        }
    }
}

/// `out = a · b + beta · out`. Shapes are validated by the callers.
fn gemm(a: Operand<'_>, b: Operand<'_>, out: &mut DenseMatrix, beta: f64) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(k, b.rows);
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.data.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the strides describe in-bounds element offsets of each buffer:
    // operand shapes were checked against their backing matrices above, and
    // `out` is an exclusively borrowed m×n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.m.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.m.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise softmax computed from max-shifted exponentials.
pub fn row_softmax(a: &DenseMatrix) -> Result<DenseMatrix> {
    if a.is_empty() {
        return Err(Error::shape("row_softmax of an empty matrix"));
    }
    let mut out = a.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// `log Σ exp(vᵢ)`, shifted by the maximum so large inputs do not overflow.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::shape("log_sum_exp of an empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + total.ln())
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Rows scaled to unit Euclidean norm. Zero rows are rejected.
pub fn row_normalize(a: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let n = l2_norm(out.row(i));
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateVector(format!("row {i} has norm {n} and cannot be normalized")));
        }
        out.row_mut(i).iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}

/// Cosine similarity clamped to `[-1, 1]`. Zero-norm inputs are rejected.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "cosine similarity of vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(DenseMatrix::identity(2).matmul(&a).unwrap(), a);
        let zero = a.matmul(&m(&[&[0.0], &[0.0]])).unwrap();
        assert_eq!(zero, m(&[&[0.0], &[0.0]]));
        let prod = a.matmul(&m(&[&[5.0], &[6.0]])).unwrap();
        assert_eq!(prod, m(&[&[17.0], &[39.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = DenseMatrix::zeros(2, 3).matmul(&DenseMatrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("by 2x3"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = DenseMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 - 1.0);
        assert_eq!(a.t_matmul(&b).unwrap(), a.transpose().matmul(&b).unwrap());
        let c = DenseMatrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.25);
        assert_eq!(a.matmul_t(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
    }

    #[test]
    fn softmax_examples() {
        let s = row_softmax(&m(&[&[0.0, 0.0], &[1000.0, 1000.0], &[0.0, 3f64.ln()]])).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert_eq!(s.row(1), &[0.5, 0.5]);
        assert!((s.get(2, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(2, 1) - 0.75).abs() < 1e-15);
        assert!(row_softmax(&DenseMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
        let big = log_sum_exp(&[700.0, 700.0]).unwrap();
        assert!(big.is_finite());
        assert!((big - (700.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
    }

    fn finite_row(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, len)
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions_and_shift_invariant(
            rows in prop::collection::vec(finite_row(5), 1..6),
            shifts in prop::collection::vec(-200.0f64..200.0, 6),
        ) {
            let a = DenseMatrix::from_rows(&rows).unwrap();
            let s = row_softmax(&a).unwrap();
            for r in s.row_iter() {
                prop_assert!(r.iter().all(|&v| v >= 0.0));
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            let shifted = DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + shifts[i]);
            let s2 = row_softmax(&shifted).unwrap();
            for (x, y) in s.as_slice().iter().zip(s2.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_is_symmetric_and_scale_invariant(
            u in finite_row(4), v in finite_row(4),
            a in 0.01f64..100.0, b in 0.01f64..100.0,
        ) {
            prop_assume!(l2_norm(&u) > 1e-3 && l2_norm(&v) > 1e-3);
            let c = cosine_similarity(&u, &v).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - cosine_similarity(&v, &u).unwrap()).abs() <= 1e-12);
            let su: Vec<f64> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((c - cosine_similarity(&su, &sv).unwrap()).abs() <= 1e-12);
        }
    }
}
