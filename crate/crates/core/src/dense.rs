//! Row-major dense matrices and the small linear-algebra kernels the
//! recommenders need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
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
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the listed rows in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// `self^T * self`, a `cols x cols` Gram matrix.
    pub fn gram(&self) -> Matrix<T> {
        let mut g = Matrix::zeros(self.cols, self.cols);
        gemm(T::one(), self, true, self, false, T::zero(), &mut g);
        g
    }

    /// `self * other^T`, i.e. all pairwise row inner products.
    pub fn mul_transpose(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(T::one(), self, false, other, true, T::zero(), &mut out);
        out
    }
}

/// `c = alpha op(a) op(b) + beta c`, where `op` transposes when the flag is
/// set.
pub fn gemm<T: Scalar>(alpha: T, a: &Matrix<T>, a_t: bool, b: &Matrix<T>, b_t: bool, beta: T, c: &mut Matrix<T>) {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if b_t { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert!(k == kb && c.rows == m && c.cols == n, "gemm shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    let strides = |mat: &Matrix<T>, t: bool| {
        let (r, c) = (mat.cols as isize, 1isize);
        if t {
            (c, r)
        } else {
            (r, c)
        }
    };
    let (rsa, csa) = strides(a, a_t);
    let (rsb, csb) = strides(b, b_t);
    // SAFETY: shapes were checked against the dense row-major buffers, and
    // `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_strided(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Cholesky factor `L` of a symmetric positive-definite matrix (`A = L L^T`).
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Dimension("Cholesky needs a square matrix".into()));
        }
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a.get(i, j);
                for k in 0..j {
                    sum = sum - l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if sum <= T::zero() || !sum.is_finite() {
                        return Err(Error::InvalidArgument(
                            "matrix is not positive definite".into(),
                        ));
                    }
                    l.set(i, i, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.get(j, j));
                }
            }
        }
        Ok(Self { lower: l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lower.rows();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l.get(k, i) * x[k];
            }
            x[i] = s / l.get(i, i);
        }
        x
    }
}

/// Solves the ridge system `(X^T X + lambda I) B = X^T Y` for `B`.
pub fn ridge_solve<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, lambda: T) -> Result<Matrix<T>> {
    if x.rows() != y.rows() {
        return Err(Error::Dimension(format!(
            "ridge design has {} rows, targets have {}",
            x.rows(),
            y.rows()
        )));
    }
    let mut gram = x.gram();
    for d in 0..gram.rows() {
        gram.set(d, d, gram.get(d, d) + lambda);
    }
    let chol = Cholesky::new(&gram)?;
    let mut coef = Matrix::zeros(x.cols(), y.cols());
    let mut rhs = vec![T::zero(); x.cols()];
    for out in 0..y.cols() {
        rhs.iter_mut().for_each(|v| *v = T::zero());
        for r in 0..x.rows() {
            let target = y.get(r, out);
            for (acc, &xv) in rhs.iter_mut().zip(x.row(r)) {
                *acc = *acc + xv * target;
            }
        }
        for (k, v) in chol.solve(&rhs).into_iter().enumerate() {
            coef.set(k, out, v);
        }
    }
    Ok(coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let x = Cholesky::new(&a).unwrap().solve(&[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0_f64).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0_f64).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(Cholesky::<f64>::new(&a).is_err());
    }

    #[test]
    fn gram_matches_naive() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![3.0, -1.0, 2.0]]).unwrap();
        let g = m.gram();
        for a in 0..3 {
            for b in 0..3 {
                let naive: f64 = (0..2).map(|r| m.get(r, a) * m.get(r, b)).sum();
                assert_eq!(g.get(a, b), naive);
            }
        }
    }

    #[test]
    fn ridge_recovers_exact_linear_map() {
        // y = 2 x0 - x1, tiny ridge
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![2.0, -1.0],
        ])
        .unwrap();
        let y = Matrix::from_fn(4, 1, |r, _| 2.0 * x.get(r, 0) - x.get(r, 1));
        let b = ridge_solve(&x, &y, 1e-12).unwrap();
        assert!((b.get(0, 0) - 2.0_f64).abs() < 1e-9);
        assert!((b.get(1, 0) + 1.0_f64).abs() < 1e-9);
    }
}
