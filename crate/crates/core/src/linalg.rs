//! Small dense and compressed-sparse matrix types.
//!
//! Everything the model needs is a handful of products, a Cholesky
//! factorisation and triangular solves, so these are written directly over
//! row-major `Vec<T>` storage instead of pulling in a full linear algebra
//! stack that is not generic over `num_traits::Float`.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix storage",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    context: "matrix row",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · other`
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_transposed(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_transposed shape mismatch");
        Self::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    /// `selfᵀ · other`
    pub fn transpose_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "transpose_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] = self[(i, i)] + v;
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn trace(&self) -> T {
        self.diagonal().into_iter().sum()
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Frobenius inner product `Σ a_ij b_ij`.
    pub fn frobenius_dot(&self, other: &Self) -> T {
        dot(&self.data, &other.data)
    }

    /// Plain Cholesky factorisation; `None` if a pivot is not strictly positive.
    pub fn cholesky(&self) -> Option<Self> {
        assert_eq!(self.rows, self.cols, "cholesky of non-square matrix");
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d.is_finite() && d > T::zero()) {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s = s - l.data[ri + k] * l.data[rj + k];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(l)
    }

    /// Cholesky with diagonal jitter `scale · 10^-6`, escalated tenfold up to
    /// `scale · 10^-2`. Returns the factor and the jitter that was added.
    pub fn cholesky_jittered(&self, scale: T) -> Result<(Self, T)> {
        let mut jitter = scale * T::of(1e-6);
        let limit = scale * T::of(1e-2) * T::of(1.000001);
        loop {
            let mut a = self.clone();
            a.add_diagonal(jitter);
            if let Some(l) = a.cholesky() {
                return Ok((l, jitter));
            }
            jitter = jitter * T::of(10.0);
            if jitter > limit {
                return Err(Error::NotPositiveDefinite {
                    jitter: (jitter / T::of(10.0)).as_f64(),
                });
            }
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower<T: Scalar>(l: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    assert_eq!(n, b.rows());
    let mut x = b.clone();
    let m = b.cols();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == T::zero() {
                continue;
            }
            for c in 0..m {
                let v = x[(k, c)];
                x[(i, c)] = x[(i, c)] - lik * v;
            }
        }
        let d = l[(i, i)];
        for v in x.row_mut(i) {
            *v = *v / d;
        }
    }
    x
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_lower_transposed<T: Scalar>(l: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    assert_eq!(n, b.rows());
    let mut x = b.clone();
    let m = b.cols();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[(k, i)];
            if lki == T::zero() {
                continue;
            }
            for c in 0..m {
                let v = x[(k, c)];
                x[(i, c)] = x[(i, c)] - lki * v;
            }
        }
        let d = l[(i, i)];
        for v in x.row_mut(i) {
            *v = *v / d;
        }
    }
    x
}

/// Reverse-mode adjoint of `Σ = L Lᵀ`: given `∂f/∂L` (lower part used),
/// returns the symmetric `∂f/∂Σ`.
pub fn cholesky_adjoint<T: Scalar>(l: &Matrix<T>, l_bar: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    // Φ(Lᵀ L̄): lower triangle with halved diagonal
    let mut p = l.transpose_matmul(&lower_part(l_bar));
    for i in 0..n {
        for j in (i + 1)..n {
            p[(i, j)] = T::zero();
        }
        p[(i, i)] = p[(i, i)] * T::of(0.5);
    }
    // L^{-T} P L^{-1}
    let left = solve_lower_transposed(l, &p);
    let s = solve_lower_transposed(l, &left.transpose()).transpose();
    let half = T::of(0.5);
    Matrix::from_fn(n, n, |i, j| half * (s[(i, j)] + s[(j, i)]))
}

fn lower_part<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        if j <= i {
            m[(i, j)]
        } else {
            T::zero()
        }
    })
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds from per-row `(column, value)` lists; columns within a row must be sorted.
    pub fn from_row_lists(cols: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in &rows {
            for &(c, v) in r {
                debug_assert!(c < cols);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> SparseMatrix<U> {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).fold(T::zero(), |acc, (j, a)| acc + a * v[j]))
            .collect()
    }

    /// `self · dense`
    pub fn mul_dense(&self, dense: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, dense.rows());
        let mut out = Matrix::zeros(self.rows, dense.cols());
        for i in 0..self.rows {
            for (k, a) in self.row(i) {
                let src = dense.row(k).to_vec();
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `dense · self`
    pub fn left_mul_dense(&self, dense: &Matrix<T>) -> Matrix<T> {
        assert_eq!(dense.cols(), self.rows);
        let mut out = Matrix::zeros(dense.rows(), self.cols);
        for r in 0..dense.rows() {
            for (k, &d) in dense.row(r).iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (j, a) in self.row(k) {
                    out[(r, j)] = out[(r, j)] + d * a;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        let a = Matrix::from_fn(n, n, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 0.5 } else { 0.0 }
        });
        let mut s = a.matmul_transposed(&a);
        s.add_diagonal(1.0);
        s
    }

    #[test]
    fn cholesky_reconstructs_input() {
        let s = spd(6);
        let l = s.cholesky().unwrap();
        assert!(l.matmul_transposed(&l).max_abs_diff(&s) < 1e-12);
        for i in 0..6 {
            for j in (i + 1)..6 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(m.cholesky().is_none());
        assert!(matches!(
            m.cholesky_jittered(1.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn jitter_escalates_for_singular_psd() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (l, jitter) = m.cholesky_jittered(1.0).unwrap();
        assert!((1e-6..=1e-2).contains(&jitter));
        let mut mj = m.clone();
        mj.add_diagonal(jitter);
        assert!(l.matmul_transposed(&l).max_abs_diff(&mj) < 1e-12);
    }

    #[test]
    fn triangular_solves() {
        let s = spd(5);
        let l = s.cholesky().unwrap();
        let b = Matrix::from_fn(5, 3, |i, j| (i as f64) - (j as f64) * 0.5);
        let x = solve_lower(&l, &b);
        assert!(l.matmul(&x).max_abs_diff(&b) < 1e-12);
        let y = solve_lower_transposed(&l, &b);
        assert!(l.transpose().matmul(&y).max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn cholesky_adjoint_matches_finite_differences() {
        // f(Σ) = Σ_ij W_ij L_ij with a fixed weight matrix W.
        let n = 4;
        let s = spd(n);
        let w = Matrix::from_fn(n, n, |i, j| ((i + 2 * j) as f64).sin());
        let f = |m: &Matrix<f64>| m.cholesky().unwrap().frobenius_dot(&w);
        let l = s.cholesky().unwrap();
        let g = cholesky_adjoint(&l, &w);
        let h = 1e-6;
        for i in 0..n {
            for j in 0..=i {
                let mut p = s.clone();
                let mut m = s.clone();
                p[(i, j)] += h;
                m[(i, j)] -= h;
                if i != j {
                    p[(j, i)] += h;
                    m[(j, i)] -= h;
                }
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                let an = if i == j {
                    g[(i, i)]
                } else {
                    g[(i, j)] + g[(j, i)]
                };
                assert!((fd - an).abs() < 1e-7, "({i},{j}) fd {fd} an {an}");
            }
        }
    }

    #[test]
    fn sparse_products_match_dense() {
        let sp = SparseMatrix::from_row_lists(
            3,
            vec![
                vec![(0, 1.0), (2, 2.0)],
                vec![(1, -1.0)],
                vec![(0, 0.5), (1, 0.25)],
            ],
        );
        let d = sp.to_dense();
        let x = Matrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0);
        assert_eq!(sp.mul_dense(&x), d.matmul(&x));
        let y = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(sp.left_mul_dense(&y), y.matmul(&d));
        assert_eq!(sp.mul_vec(&[1.0, 2.0, 3.0]), d.mul_vec(&[1.0, 2.0, 3.0]));
        assert_eq!(sp.get(0, 2), 2.0);
        assert_eq!(sp.get(1, 2), 0.0);
    }
}
