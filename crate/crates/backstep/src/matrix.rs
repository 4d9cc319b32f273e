//! Dense row-major matrices over complex scalars of any precision.

use std::io::{self, Write};
use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::{Complex, Complex64};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{fmt_complex, fmt_f64};
use crate::precision::{cabs, lower, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> Matrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl<T: Send> Matrix<T> {
    /// Builds a matrix from a closure of `(row, col)`, rows in parallel.
    pub fn from_fn<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> T + Sync,
    {
        let data: Vec<T> = (0..rows * cols)
            .into_par_iter()
            .map(|idx| f(idx / cols, idx % cols))
            .collect();
        Self { rows, cols, data }
    }
}

impl<T> Matrix<T> {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<R: Real> Matrix<Complex<R>> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let z = Complex::new(R::zero(), R::zero());
        Self {
            rows,
            cols,
            data: vec![z; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(R::one(), R::zero());
        }
        m
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let n = self.cols;
        Ok(Self::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = Complex::new(R::zero(), R::zero());
            for k in 0..n {
                acc += self[(i, k)] * other[(k, j)];
            }
            acc
        }))
    }

    pub fn matvec(&self, v: &[Complex<R>]) -> Result<Vec<Complex<R>>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows)
            .into_par_iter()
            .map(|i| {
                let mut acc = Complex::new(R::zero(), R::zero());
                for (a, x) in self.row(i).iter().zip(v) {
                    acc += *a * *x;
                }
                acc
            })
            .collect())
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|z| cabs(*z).to_f64())
            .fold(0.0, f64::max)
    }

    /// Largest entry modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| cabs(*a - *b).to_f64())
            .fold(0.0, f64::max)
    }

    /// `max |self - I|` over all entries.
    pub fn identity_defect(&self) -> f64 {
        self.max_abs_diff(&Self::identity(self.rows))
    }

    /// Rounds every entry to `f64` components.
    pub fn lower(&self) -> Matrix<Complex64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| lower(*z)).collect(),
        }
    }
}

/// Inverse by Gaussian elimination with partial pivoting.
///
/// A pivot smaller than `1e-12` times the largest entry of its original row
/// is treated as singular.
pub fn lu_inverse<R: Real>(a: &Matrix<Complex<R>>) -> Result<Matrix<Complex<R>>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows,
            got: a.cols,
        });
    }
    let n = a.rows;
    let row_scale: Vec<f64> = (0..n)
        .map(|i| a.row(i).iter().map(|z| cabs(*z).to_f64()).fold(0.0, f64::max))
        .collect();
    let mut lu = a.clone();
    let mut inv = Matrix::<Complex<R>>::identity(n);
    let mut scale = row_scale;
    for col in 0..n {
        let (piv, piv_abs) = (col..n)
            .map(|r| (r, cabs(lu[(r, col)]).to_f64()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(piv_abs > 1e-12 * scale[piv]) {
            return Err(Error::Singular(col));
        }
        if piv != col {
            for j in 0..n {
                lu.data.swap(piv * n + j, col * n + j);
                inv.data.swap(piv * n + j, col * n + j);
            }
            scale.swap(piv, col);
        }
        let p = lu[(col, col)];
        for r in (col + 1)..n {
            let f = lu[(r, col)] / p;
            if f.re == R::zero() && f.im == R::zero() {
                continue;
            }
            for j in col..n {
                let v = lu[(col, j)];
                lu[(r, j)] -= f * v;
            }
            for j in 0..n {
                let v = inv[(col, j)];
                inv[(r, j)] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let p = lu[(col, col)];
        for j in 0..n {
            let mut acc = inv[(col, j)];
            for k in (col + 1)..n {
                acc -= lu[(col, k)] * inv[(k, j)];
            }
            inv[(col, j)] = acc / p;
        }
    }
    Ok(inv)
}

/// Largest singular value. Dense SVD up to 512 rows, power iteration on
/// `A^H A` above that.
pub fn spectral_norm(m: &Matrix<Complex64>) -> f64 {
    if m.rows == 0 || m.cols == 0 {
        return 0.0;
    }
    if m.rows.max(m.cols) > 512 {
        return power_norm(m);
    }
    if m.data.iter().all(|z| z.im == 0.0) {
        let dm = DMatrix::from_fn(m.rows, m.cols, |i, j| m[(i, j)].re);
        dm.singular_values().max()
    } else {
        let dm = DMatrix::from_fn(m.rows, m.cols, |i, j| m[(i, j)]);
        dm.singular_values().max()
    }
}

fn power_norm(m: &Matrix<Complex64>) -> f64 {
    let mut v = vec![Complex64::new(1.0, 0.0); m.cols];
    let mut last = 0.0;
    for _ in 0..10_000 {
        let w = m.matvec(&v).expect("square dimensions");
        let mut z = vec![Complex64::new(0.0, 0.0); m.cols];
        for (i, wi) in w.iter().enumerate() {
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += m[(i, j)].conj() * wi;
            }
        }
        let nz = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if nz == 0.0 {
            return 0.0;
        }
        let est = nz.sqrt();
        v = z.into_iter().map(|c| c / nz).collect();
        if (est - last).abs() <= 1e-10 * est {
            return est;
        }
        last = est;
    }
    last
}

/// Writes the matrix as CSV, one row per line, complex entries as `re+imi`.
pub fn write_csv<W: Write>(m: &Matrix<Complex64>, mut out: W) -> io::Result<()> {
    for i in 0..m.rows {
        let line: Vec<String> = m.row(i).iter().map(|z| fmt_complex(*z)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Writes a real matrix (imaginary parts dropped) as CSV.
pub fn write_csv_real<W: Write>(m: &Matrix<Complex64>, mut out: W) -> io::Result<()> {
    for i in 0..m.rows {
        let line: Vec<String> = m.row(i).iter().map(|z| fmt_f64(z.re)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
