//! Small dense matrix type plus the factorisations the core needs.
//!
//! Storage is row-major and generic over [`Real`]. Factorisations delegate to
//! `nalgebra` in double precision and convert back, so `f32` callers still get
//! well-conditioned solves.

use nalgebra::{Cholesky as NaCholesky, DMatrix, Dyn, SymmetricEigen};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * c).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].as_f64())
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| T::lit(m[(i, j)]))
    }

    /// Cholesky factorisation of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Result<Cholesky<T>, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::DimensionMismatch { expected: self.rows, got: self.cols });
        }
        let chol = NaCholesky::new(self.to_nalgebra()).ok_or(LinalgError::NotPositiveDefinite)?;
        Ok(Cholesky { inner: chol, _marker: std::marker::PhantomData })
    }

    /// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
    pub fn symmetric_eigen(&self) -> (Vec<T>, Matrix<T>) {
        let eig = SymmetricEigen::new(self.to_nalgebra());
        let mut order: Vec<usize> = (0..self.rows).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| T::lit(eig.eigenvalues[k])).collect();
        let vectors = Self::from_fn(self.rows, self.rows, |i, j| T::lit(eig.eigenvectors[(i, order[j])]));
        (values, vectors)
    }

    /// Ratio of the largest to the smallest absolute eigenvalue of a symmetric matrix.
    pub fn condition_number(&self) -> T {
        let eig = SymmetricEigen::new(self.to_nalgebra());
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in eig.eigenvalues.iter() {
            lo = lo.min(v.abs());
            hi = hi.max(v.abs());
        }
        if lo == 0.0 {
            T::infinity()
        } else {
            T::lit(hi / lo)
        }
    }

    /// Symmetric inverse square root `V diag(λ^{-1/2}) Vᵀ`.
    pub fn sym_inverse_sqrt(&self) -> Result<Self, LinalgError> {
        let eig = SymmetricEigen::new(self.to_nalgebra());
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if eig.eigenvalues.iter().any(|&v| !(v > top * 1e-14) || !v.is_finite()) {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
        let out = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        Ok(Self::from_nalgebra(&out))
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub struct Cholesky<T> {
    inner: NaCholesky<f64, Dyn>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let rhs = nalgebra::DVector::from_iterator(b.len(), b.iter().map(|v| v.as_f64()));
        self.inner.solve(&rhs).iter().map(|&v| T::lit(v)).collect()
    }

    pub fn inverse(&self) -> Matrix<T> {
        Matrix::from_nalgebra(&self.inner.inverse())
    }

    pub fn log_det(&self) -> T {
        let l = self.inner.l_dirty();
        let n = l.nrows();
        T::lit(2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd(n: usize) -> Matrix<f64> {
        Matrix::from_fn(n, n, |i, j| if i == j { 2.0 + i as f64 } else { 0.3 / (1.0 + (i + j) as f64) })
    }

    #[test]
    fn cholesky_solve_inverts() {
        let a = spd(6);
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let x = a.cholesky().unwrap().solve(&b);
        let back = a.matvec(&x);
        for (u, v) in back.iter().zip(&b) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let a = spd(5);
        let r = a.sym_inverse_sqrt().unwrap();
        let prod = r.matmul(&r).matmul(&a);
        for i in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(prod[(i, j)], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn log_det_of_diagonal() {
        let a = Matrix::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        assert_relative_eq!(a.cholesky().unwrap().log_det(), 6f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn indefinite_rejected() {
        let mut a = Matrix::<f64>::identity(2);
        a[(1, 1)] = -1.0;
        assert!(a.cholesky().is_err());
        assert!(a.sym_inverse_sqrt().is_err());
    }

    #[test]
    fn eigen_sorted_ascending() {
        let (vals, _) = spd(4).symmetric_eigen();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }
}
