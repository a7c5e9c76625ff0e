//! Small dense complex matrices.
//!
//! Orders here are tiny (n ≤ 8), so a `Vec`-backed row-major matrix with
//! straightforward O(n³) kernels is the right tool; no external linear
//! algebra is pulled in.

use crate::scalar::Scalar;
use num_complex::Complex;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq)]
pub struct CMat<T> {
    n: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> CMat<T> {
    pub fn zeros(n: usize) -> Self {
        CMat {
            n,
            data: vec![Complex::new(T::zero(), T::zero()); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut m = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn diag(entries: &[Complex<T>]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, e) in entries.iter().enumerate() {
            m[(i, i)] = *e;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.n..(r + 1) * self.n]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        Self::from_fn(self.n, |r, c| self[(r, c)].conj())
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        let mut m = self.clone();
        for v in &mut m.data {
            *v = *v * s;
        }
        m
    }

    /// Largest entry modulus.
    pub fn max_norm(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    /// Row-sum operator norm (bound for ‖A x‖_∞ / ‖x‖_∞).
    pub fn row_sum_norm(&self) -> T {
        (0..self.n)
            .map(|r| {
                self.row(r)
                    .iter()
                    .map(|z| z.norm())
                    .fold(T::zero(), |a, b| a + b)
            })
            .fold(T::zero(), T::max)
    }

    pub fn mul_mat(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self[(r, k)];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                for c in 0..n {
                    out[(r, c)] = out[(r, c)] + a * other[(k, c)];
                }
            }
        }
        out
    }

    /// Determinant by LU with partial pivoting.
    pub fn det(&self) -> Complex<T> {
        let n = self.n;
        let mut a = self.clone();
        let mut det = Complex::new(T::one(), T::zero());
        for col in 0..n {
            let mut piv = col;
            let mut best = a[(col, col)].norm();
            for r in col + 1..n {
                let v = a[(r, col)].norm();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == T::zero() {
                return Complex::new(T::zero(), T::zero());
            }
            if piv != col {
                for c in 0..n {
                    let t = a[(col, c)];
                    a[(col, c)] = a[(piv, c)];
                    a[(piv, c)] = t;
                }
                det = -det;
            }
            let d = a[(col, col)];
            det = det * d;
            for r in col + 1..n {
                let f = a[(r, col)] / d;
                for c in col..n {
                    let sub = f * a[(col, c)];
                    a[(r, c)] = a[(r, c)] - sub;
                }
            }
        }
        det
    }

    /// Inverse by Gauss-Jordan with partial pivoting; `None` when singular
    /// to working precision.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[(col, col)].norm();
            for r in col + 1..n {
                let v = a[(r, col)].norm();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == T::zero() {
                return None;
            }
            if piv != col {
                for c in 0..n {
                    a.data.swap(col * n + c, piv * n + c);
                    inv.data.swap(col * n + c, piv * n + c);
                }
            }
            let d = a[(col, col)];
            for c in 0..n {
                a[(col, c)] = a[(col, c)] / d;
                inv[(col, c)] = inv[(col, c)] / d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f.re == T::zero() && f.im == T::zero() {
                    continue;
                }
                for c in 0..n {
                    let s1 = f * a[(col, c)];
                    a[(r, c)] = a[(r, c)] - s1;
                    let s2 = f * inv[(col, c)];
                    inv[(r, c)] = inv[(r, c)] - s2;
                }
            }
        }
        Some(inv)
    }

    /// Entrywise multiplication by a 0/1 mask.
    pub fn mask_with(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        Self::from_fn(self.n, |r, c| {
            if keep(r, c) {
                self[(r, c)]
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
    }

    /// Conjugate by a diagonal of unit phases: diag(d) · A · diag(d)^{-1}.
    pub fn phase_conjugate(&self, d: &[Complex<T>]) -> Self {
        Self::from_fn(self.n, |r, c| d[r] * self[(r, c)] / d[c])
    }
}

impl<T: Scalar> Index<(usize, usize)> for CMat<T> {
    type Output = Complex<T>;
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        &self.data[r * self.n + c]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for CMat<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[r * self.n + c]
    }
}

impl<T: Scalar> Add for &CMat<T> {
    type Output = CMat<T>;
    fn add(self, other: &CMat<T>) -> CMat<T> {
        CMat::from_fn(self.n, |r, c| self[(r, c)] + other[(r, c)])
    }
}

impl<T: Scalar> Sub for &CMat<T> {
    type Output = CMat<T>;
    fn sub(self, other: &CMat<T>) -> CMat<T> {
        CMat::from_fn(self.n, |r, c| self[(r, c)] - other[(r, c)])
    }
}

impl<T: Scalar> Mul for &CMat<T> {
    type Output = CMat<T>;
    fn mul(self, other: &CMat<T>) -> CMat<T> {
        self.mul_mat(other)
    }
}

impl<T: Scalar> Neg for &CMat<T> {
    type Output = CMat<T>;
    fn neg(self) -> CMat<T> {
        CMat::from_fn(self.n, |r, c| -self[(r, c)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn inverse_round_trip() {
        let a = CMat::from_fn(3, |r, c| c_entry(r, c));
        fn c_entry(r: usize, cc: usize) -> Complex<f64> {
            let t = (r * 3 + cc) as f64;
            Complex::new(
                (1.3 * t + 0.7).sin() + if r == cc { 2.0 } else { 0.0 },
                (0.9 * t).cos(),
            )
        }
        let inv = a.inverse().expect("nonsingular");
        let prod = a.mul_mat(&inv);
        let err = (&prod - &CMat::identity(3)).max_norm();
        assert!(err < 1e-12, "err = {err:e}");
    }

    #[test]
    fn det_of_triangular() {
        let mut a = CMat::zeros(3);
        a[(0, 0)] = c(2.0, 0.0);
        a[(1, 1)] = c(0.0, 1.0);
        a[(2, 2)] = c(3.0, 0.0);
        a[(0, 2)] = c(5.0, -1.0);
        let d = a.det();
        assert!((d - c(0.0, 6.0)).norm() < 1e-14);
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let mut a = CMat::zeros(2);
        a[(0, 0)] = c(1.0, 0.0);
        a[(0, 1)] = c(2.0, 0.0);
        a[(1, 0)] = c(2.0, 0.0);
        a[(1, 1)] = c(4.0, 0.0);
        assert!(a.inverse().is_none());
        assert!(a.det().norm() < 1e-14);
    }
}
