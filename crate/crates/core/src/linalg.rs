//! Small dense linear algebra used by the QP solver and the MPC condensing.
//!
//! Problems in this crate have at most a few hundred rows, so a row-major
//! dense layout with textbook factorizations is sufficient.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

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

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Builds a matrix from row slices. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
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

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Appends a row, growing the matrix by one.
    pub fn push_row(&mut self, row: &[T]) {
        if self.rows == 0 && self.cols == 0 {
            self.cols = row.len();
        }
        assert_eq!(row.len(), self.cols, "row length mismatch");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `y = self * x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            *yi = acc;
        }
    }

    /// `y = selfᵀ * x`
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.cols];
        self.tr_mul_vec_into(x, &mut y);
        y
    }

    pub fn tr_mul_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        y.iter_mut().for_each(|v| *v = T::zero());
        for (i, xi) in x.iter().enumerate() {
            if *xi == T::zero() {
                continue;
            }
            for (yj, a) in y.iter_mut().zip(self.row(i)) {
                *yj += *a * *xi;
            }
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * *b;
                }
            }
        }
        out
    }

    /// Adds `Σ_i w_i a_iᵀ a_i` (weighted Gram matrix of the rows of `a`) to `self`.
    pub fn add_weighted_gram(&mut self, a: &Self, w: &[T]) {
        assert_eq!(self.rows, a.cols);
        assert_eq!(self.cols, a.cols);
        let n = a.cols;
        for (i, wi) in w.iter().enumerate() {
            if *wi == T::zero() {
                continue;
            }
            let r = a.row(i);
            for p in 0..n {
                let rp = r[p];
                if rp == T::zero() {
                    continue;
                }
                let s = *wi * rp;
                let dst = &mut self.data[p * n..(p + 1) * n];
                for (d, rq) in dst.iter_mut().zip(r) {
                    *d += s * *rq;
                }
            }
        }
    }

    pub fn add_diagonal(&mut self, value: T) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += value;
        }
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FactorError {
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("zero pivot in LDLᵀ factorization (pivot {0})")]
    ZeroPivot(usize),
}

/// Lower Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(m: &Matrix<T>) -> Result<Self, FactorError> {
        let n = m.rows();
        assert_eq!(n, m.cols(), "Cholesky needs a square matrix");
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(FactorError::NotPositiveDefinite(j));
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s -= l.data[ri + k] * l.data[rj + k];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.l.rows();
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_lt(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }
}

/// `M = L D Lᵀ` without pivoting. Valid for quasi-definite matrices such as
/// regularized KKT systems `[P + δI, Aᵀ; A, -δI]`.
#[derive(Debug, Clone)]
pub struct Ldlt<T> {
    l: Matrix<T>,
    d: Vec<T>,
}

impl<T: Scalar> Ldlt<T> {
    pub fn factor(m: &Matrix<T>) -> Result<Self, FactorError> {
        let n = m.rows();
        assert_eq!(n, m.cols(), "LDLᵀ needs a square matrix");
        let mut l = Matrix::identity(n);
        let mut d = vec![T::zero(); n];
        // scratch: l_jk * d_k
        let mut w = vec![T::zero(); n];
        for j in 0..n {
            let mut dj = m[(j, j)];
            for k in 0..j {
                w[k] = l[(j, k)] * d[k];
                dj -= l[(j, k)] * w[k];
            }
            if dj == T::zero() || !dj.is_finite() {
                return Err(FactorError::ZeroPivot(j));
            }
            d[j] = dj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                let ri = i * n;
                for k in 0..j {
                    s -= l.data[ri + k] * w[k];
                }
                l[(i, j)] = s / dj;
            }
        }
        Ok(Self { l, d })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.d.len();
        let mut x = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = x[i];
            for k in 0..i {
                s -= row[k] * x[k];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = ((i * 7 + j * 3) % 5) as f64 - 2.0;
            }
        }
        let mut m = a.transpose().matmul(&a);
        m.add_diagonal(1.0);
        m
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let m = spd(6);
        let x_true: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b = m.mul_vec(&x_true);
        let x = Cholesky::factor(&m).unwrap().solve(&b);
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            Cholesky::factor(&m),
            Err(FactorError::NotPositiveDefinite(1))
        ));
    }

    #[test]
    fn ldlt_solves_quasi_definite_kkt() {
        let p = spd(3);
        let a = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 2.0, -1.0]]);
        let mut k = Matrix::zeros(5, 5);
        for i in 0..3 {
            for j in 0..3 {
                k[(i, j)] = p[(i, j)];
            }
        }
        for r in 0..2 {
            for c in 0..3 {
                k[(3 + r, c)] = a[(r, c)];
                k[(c, 3 + r)] = a[(r, c)];
            }
            k[(3 + r, 3 + r)] = -1e-3;
        }
        let x_true = [1.0, -2.0, 0.5, 3.0, -1.0];
        let b = k.mul_vec(&x_true);
        let x = Ldlt::factor(&k).unwrap().solve(&b);
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn weighted_gram_matches_explicit_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 0.0]]);
        let w = [2.0, 1.0, 0.5];
        let mut g = Matrix::zeros(2, 2);
        g.add_weighted_gram(&a, &w);
        let explicit = a.transpose().matmul(&Matrix::from_diagonal(&w)).matmul(&a);
        assert!(g
            .as_slice()
            .iter()
            .zip(explicit.as_slice())
            .all(|(x, y): (&f64, &f64)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn works_in_single_precision() {
        let m = Matrix::<f32>::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let x = Cholesky::factor(&m).unwrap().solve(&[1.0, 2.0]);
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-5);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-5);
    }
}
