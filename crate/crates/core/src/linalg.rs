//! Small dense linear algebra: row-major complex matrices, Hermitian solves
//! on the K x K Gram matrix, and a real Cholesky used by the barrier solver.

use num_complex::Complex;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{BeamError, Result};
use crate::scalar::Real;

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(BeamError::Shape {
                op: "CMatrix::from_vec",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<Complex<T>>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(BeamError::Shape {
                    op: "CMatrix::from_rows",
                    lhs: (rows.len(), cols),
                    rhs: (1, r.len()),
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
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

    #[inline]
    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [Complex<T>] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(BeamError::Shape {
                op: "CMatrix::matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                let src = rhs.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * *b;
                }
            }
        }
        Ok(out)
    }

    /// Reorders rows: output row `i` is input row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(perm.len(), self.cols);
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(p));
        }
        out
    }

    pub fn cast<U: Real>(&self) -> CMatrix<U> {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|z| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64())))
                .collect(),
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[r * self.cols + c]
    }
}

/// `a^H b` for two complex vectors.
#[inline]
pub fn inner<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter()
        .zip(b)
        .fold(Complex::zero(), |acc, (x, y)| acc + x.conj() * *y)
}

#[inline]
pub fn norm_sqr<T: Real>(a: &[Complex<T>]) -> T {
    a.iter().map(|z| z.norm_sqr()).sum()
}

#[inline]
pub fn norm<T: Real>(a: &[Complex<T>]) -> T {
    norm_sqr(a).sqrt()
}

/// Solution of a Hermitian system together with a cheap condition estimate.
#[derive(Debug, Clone)]
pub struct Solved<T> {
    pub x: CMatrix<T>,
    /// Ratio of extreme pivot magnitudes; a lower bound on the 2-norm
    /// condition number.
    pub cond_estimate: f64,
}

/// Solves `a x = b` for Hermitian positive-definite `a` by Cholesky, falling
/// back to partially pivoted LU when the factorization breaks down.
pub fn hermitian_solve<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<Solved<T>> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(BeamError::Shape {
            op: "hermitian_solve",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    match cholesky(a) {
        Some((l, cond)) => {
            let x = cholesky_solve(&l, b);
            Ok(Solved {
                x,
                cond_estimate: cond,
            })
        }
        None => lu_solve(a, b),
    }
}

fn cholesky<T: Real>(a: &CMatrix<T>) -> Option<(CMatrix<T>, f64)> {
    let n = a.rows();
    let mut l = CMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex::new(djj, T::zero());
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    let diag = (0..n).map(|i| l[(i, i)].re.as_f64());
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    Some((l, (hi / lo).powi(2)))
}

fn cholesky_solve<T: Real>(l: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)].re;
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)].re;
        }
    }
    x
}

fn lu_solve<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<Solved<T>> {
    let n = a.rows();
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut piv_lo = f64::INFINITY;
    let mut piv_hi = 0.0_f64;
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| {
                lu[(i, col)]
                    .norm_sqr()
                    .partial_cmp(&lu[(j, col)].norm_sqr())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        let pivot = lu[(p, col)];
        let mag = pivot.norm().as_f64();
        if !(mag > 0.0) {
            return Err(BeamError::Rank(format!("zero pivot at column {col}")));
        }
        piv_lo = piv_lo.min(mag);
        piv_hi = piv_hi.max(mag);
        if p != col {
            for c in 0..n {
                let tmp = lu[(p, c)];
                lu[(p, c)] = lu[(col, c)];
                lu[(col, c)] = tmp;
            }
            for c in 0..x.cols() {
                let tmp = x[(p, c)];
                x[(p, c)] = x[(col, c)];
                x[(col, c)] = tmp;
            }
        }
        for r in (col + 1)..n {
            let f = lu[(r, col)] / pivot;
            lu[(r, col)] = f;
            for c in (col + 1)..n {
                let v = lu[(col, c)];
                lu[(r, c)] -= f * v;
            }
            for c in 0..x.cols() {
                let v = x[(col, c)];
                x[(r, c)] -= f * v;
            }
        }
    }
    for c in 0..x.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= lu[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / lu[(i, i)];
        }
    }
    Ok(Solved {
        x,
        cond_estimate: piv_hi / piv_lo,
    })
}

/// In-place Cholesky of a dense symmetric matrix (row-major, `n x n`).
/// Only the lower triangle is referenced and written.
pub fn cholesky_real(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(BeamError::Numeric {
                cond: f64::INFINITY,
                limit: 0.0,
            });
        }
        let djj = d.sqrt();
        a[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / djj;
        }
    }
    Ok(())
}

/// Solves with a factor produced by [`cholesky_real`].
pub fn cholesky_real_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves the dense real system `a x = b` by LU with partial pivoting;
/// `a` is overwritten and `b` receives `x`.
pub fn lu_solve_real(a: &mut [f64], n: usize, b: &mut [f64]) -> Result<()> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .expect("non-empty range");
        if !(a[piv * n + c].abs() > scale * 1e-14) {
            return Err(BeamError::Rank(format!("singular real system at column {c}")));
        }
        if piv != c {
            for k in 0..n {
                a.swap(c * n + k, piv * n + k);
            }
            b.swap(c, piv);
        }
        for r in (c + 1)..n {
            let f = a[r * n + c] / a[c * n + c];
            if f != 0.0 {
                for k in c..n {
                    a[r * n + k] -= f * a[c * n + k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in (r + 1)..n {
            s -= a[r * n + k] * b[k];
        }
        b[r] = s / a[r * n + r];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_lu_solves_nonsymmetric() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let orig = a.clone();
        let mut b = vec![3.0, 2.0, 4.0];
        lu_solve_real(&mut a, 3, &mut b).unwrap();
        for r in 0..3 {
            let v: f64 = (0..3).map(|c| orig[r * 3 + c] * b[c]).sum();
            assert!((v - [3.0, 2.0, 4.0][r]).abs() < 1e-14);
        }
        let mut sing = vec![1.0, 2.0, 2.0, 4.0];
        assert!(lu_solve_real(&mut sing, 2, &mut [1.0, 1.0]).is_err());
    }

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn hermitian_solve_recovers_rhs() {
        let a = CMatrix::from_rows(&[
            vec![c(4.0, 0.0), c(1.0, 1.0), c(0.0, -0.5)],
            vec![c(1.0, -1.0), c(3.0, 0.0), c(0.2, 0.0)],
            vec![c(0.0, 0.5), c(0.2, 0.0), c(2.0, 0.0)],
        ])
        .unwrap();
        let b = CMatrix::from_rows(&[vec![c(1.0, 0.0)], vec![c(0.0, 1.0)], vec![c(-1.0, 2.0)]])
            .unwrap();
        let s = hermitian_solve(&a, &b).unwrap();
        let back = a.matmul(&s.x).unwrap();
        for i in 0..3 {
            assert!((back[(i, 0)] - b[(i, 0)]).norm() < 1e-12);
        }
        assert!(s.cond_estimate >= 1.0);
    }

    #[test]
    fn indefinite_matrix_falls_back_to_lu() {
        let a = CMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]])
            .unwrap();
        let b = CMatrix::from_rows(&[vec![c(2.0, 0.0)], vec![c(3.0, 0.0)]]).unwrap();
        let s = hermitian_solve(&a, &b).unwrap();
        assert!((s.x[(0, 0)] - c(3.0, 0.0)).norm() < 1e-14);
        assert!((s.x[(1, 0)] - c(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn real_cholesky_solves_spd() {
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        cholesky_real(&mut a, 2).unwrap();
        let mut b = vec![2.0, 1.0];
        cholesky_real_solve(&a, 2, &mut b);
        assert!((4.0 * b[0] + 2.0 * b[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * b[0] + 3.0 * b[1] - 1.0).abs() < 1e-14);
    }
}
