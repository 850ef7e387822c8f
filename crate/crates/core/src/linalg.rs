//! Small dense row-major matrices.
//!
//! The systems handled here are a handful of coordinates wide, so plain
//! `Vec` storage with naive products is the right tool.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: cols,
                    found: r.len(),
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

    pub fn from_f64_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let converted: Vec<Vec<T>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&v| T::of(v)).collect())
            .collect();
        Self::from_rows(&converted)
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

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.f64()).collect())
            .collect()
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
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

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { data, ..*self }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Self { data, ..*self }
    }

    pub fn scale(&self, s: T) -> Self {
        let data = self.data.iter().map(|&a| a * s).collect();
        Self { data, ..*self }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn symmetrized(&self) -> Self {
        self.add(&self.transpose()).scale(T::half())
    }

    /// `self · diag · selfᵀ`-style congruence `self · m · selfᵀ`.
    pub fn congruence(&self, m: &Self) -> Self {
        self.matmul(m).matmul(&self.transpose())
    }

    pub fn without_row(&self, r: usize) -> Self {
        let mut data = Vec::with_capacity((self.rows - 1) * self.cols);
        for i in (0..self.rows).filter(|&i| i != r) {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: self.rows - 1,
            cols: self.cols,
            data,
        }
    }

    pub fn without_row_col(&self, r: usize, c: usize) -> Self {
        let mut data = Vec::with_capacity((self.rows - 1) * (self.cols - 1));
        for i in (0..self.rows).filter(|&i| i != r) {
            for j in (0..self.cols).filter(|&j| j != c) {
                data.push(self[(i, j)]);
            }
        }
        Self {
            rows: self.rows - 1,
            cols: self.cols - 1,
            data,
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(r0 + i)[c0..c0 + cols]);
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Self) {
        for i in 0..src.rows {
            self.row_mut(r0 + i)[c0..c0 + src.cols].copy_from_slice(src.row(i));
        }
    }

    pub fn lu(&self) -> Result<Lu<T>> {
        Lu::new(self)
    }

    pub fn inverse(&self) -> Result<Self> {
        let lu = self.lu()?;
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = lu.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    /// Solves `self · X = rhs` for a square `self`.
    pub fn solve_matrix(&self, rhs: &Self) -> Result<Self> {
        let lu = self.lu()?;
        let mut out = Self::zeros(rhs.rows, rhs.cols);
        let mut col = vec![T::zero(); rhs.rows];
        for j in 0..rhs.cols {
            for i in 0..rhs.rows {
                col[i] = rhs[(i, j)];
            }
            let x = lu.solve(&col);
            for i in 0..rhs.rows {
                out[(i, j)] = x[i];
            }
        }
        Ok(out)
    }

    /// One-norm condition number; infinite when singular.
    pub fn condition_one(&self) -> T {
        match self.inverse() {
            Ok(inv) if inv.is_finite() => self.norm_one() * inv.norm_one(),
            _ => T::infinity(),
        }
    }

    /// Symmetric eigendecomposition by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues sorted descending and the matching eigenvectors as
    /// columns; each column is sign-normalized so its first nonzero entry is
    /// nonnegative.
    pub fn symmetric_eigen(&self) -> (Vec<T>, Self) {
        assert!(self.is_square(), "eigendecomposition of a non-square matrix");
        let n = self.rows;
        let mut a = self.symmetrized();
        let mut v = Self::identity(n);
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let off: T = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            let scale: T = a.data.iter().map(|&x| x * x).sum();
            if off <= eps * eps * scale || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (apq + apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            a[(j, j)]
                .partial_cmp(&a[(i, i)])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Self::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            let first = (0..n).map(|k| v[(k, src)]).find(|x| *x != T::zero());
            let sign = match first {
                Some(x) if x < T::zero() => -T::one(),
                _ => T::one(),
            };
            for k in 0..n {
                vectors[(k, dst)] = sign * v[(k, src)];
            }
        }
        (values, vectors)
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

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    fn new(m: &Matrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                what: "LU factorization (columns)",
                expected: m.rows,
                found: m.cols,
            });
        }
        let n = m.rows;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, max) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if max == T::zero() || !max.is_finite() {
                return Err(Error::SingularMatrix);
            }
            if piv != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
                perm.swap(k, piv);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= f * u;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.perm.len();
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[(i, j)];
                x[i] = x[i] - l * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let u = self.lu[(i, j)];
                x[i] = x[i] - u * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_small_matrix() {
        let m = Matrix::<f64>::from_rows(&[[4.0, 7.0], [2.0, 6.0]]).unwrap();
        let inv = m.inverse().unwrap();
        let prod = m.matmul(&inv);
        assert!(prod.max_abs_diff(&Matrix::identity(2)) < 1e-14);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = Matrix::<f64>::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(matches!(m.inverse(), Err(Error::SingularMatrix)));
        assert!(m.condition_one().is_infinite());
    }

    #[test]
    fn jacobi_reconstructs_symmetric_matrix() {
        let m = Matrix::<f64>::from_rows(&[
            [4.0, 1.0, -2.0],
            [1.0, 2.0, 0.5],
            [-2.0, 0.5, 3.0],
        ])
        .unwrap();
        let (vals, vecs) = m.symmetric_eigen();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let back = vecs.congruence(&Matrix::from_diag(&vals));
        assert!(back.max_abs_diff(&m) < 1e-12);
        let orth = vecs.transpose().matmul(&vecs);
        assert!(orth.max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let m = Matrix::<f32>::from_f64_rows(&[[2.0, 1.0], [1.0, 3.0]]).unwrap();
        let inv = m.inverse().unwrap();
        assert!(m.matmul(&inv).max_abs_diff(&Matrix::identity(2)) < 1e-6);
    }
}
