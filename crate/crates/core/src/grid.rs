//! Uniform spatial grid on [-X, X] plus finite-difference and quadrature
//! helpers shared by the solvers and the bracket engine.

use crate::scalar::{rl, Scalar};
use num_complex::Complex;

/// Uniform grid x_i = -X + i·h, i = 0..=m, with x_m = +X.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub x_max: T,
    pub h: T,
    pub len: usize,
}

impl<T: Scalar> Grid<T> {
    /// Builds the grid; the step is adjusted minimally so that 2X/h is an
    /// even integer (Simpson-friendly, symmetric about 0).
    pub fn new(x_max: T, h_request: T) -> Self {
        let span = rl::<T>(2.0) * x_max;
        let mut cells = (span / h_request).round().to_f64_lossy() as usize;
        if cells % 2 == 1 {
            cells += 1;
        }
        let cells = cells.max(2);
        let h = span / rl::<T>(cells as f64);
        Grid {
            x_max,
            h,
            len: cells + 1,
        }
    }

    pub fn x(&self, i: usize) -> T {
        -self.x_max + rl::<T>(i as f64) * self.h
    }

    pub fn points(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.len).map(|i| self.x(i))
    }

    /// Index of the grid point closest to x = 0.
    pub fn center_index(&self) -> usize {
        (self.len - 1) / 2
    }

    /// Simpson weights over the whole grid (len is odd by construction).
    pub fn simpson_weights(&self) -> Vec<T> {
        simpson_weights(self.len, self.h)
    }
}

/// Simpson weights for `len` uniformly spaced points with step `h`.
/// `len` must be odd; the composite rule is exact for cubics.
pub fn simpson_weights<T: Scalar>(len: usize, h: T) -> Vec<T> {
    assert!(
        len >= 3 && len % 2 == 1,
        "Simpson rule needs an odd point count"
    );
    let third = h / rl::<T>(3.0);
    let mut w = vec![T::zero(); len];
    w[0] = third;
    w[len - 1] = third;
    for (i, wi) in w.iter_mut().enumerate().take(len - 1).skip(1) {
        *wi = if i % 2 == 1 {
            rl::<T>(4.0) * third
        } else {
            rl::<T>(2.0) * third
        };
    }
    w
}

/// Simpson quadrature of complex samples.
pub fn simpson<T: Scalar>(samples: &[Complex<T>], h: T) -> Complex<T> {
    let w = simpson_weights(samples.len(), h);
    samples
        .iter()
        .zip(w.iter())
        .fold(Complex::new(T::zero(), T::zero()), |acc, (s, wi)| {
            acc + s.scale(*wi)
        })
}

/// Fourth-order centered first derivative of complex grid samples; one-sided
/// fourth-order stencils at the edges.
pub fn derivative<T: Scalar>(samples: &[Complex<T>], h: T) -> Vec<Complex<T>> {
    let m = samples.len();
    assert!(m >= 7);
    let inv12h = T::one() / (rl::<T>(12.0) * h);
    let mut out = vec![Complex::new(T::zero(), T::zero()); m];
    for i in 0..m {
        out[i] = if i >= 2 && i + 2 < m {
            (samples[i - 2] - samples[i + 2]).scale(inv12h)
                + (samples[i + 1] - samples[i - 1]).scale(rl::<T>(8.0) * inv12h)
        } else {
            // 5-point one-sided stencil, order 4.
            let (sgn, base) = if i < 2 { (T::one(), i) } else { (-T::one(), i) };
            let idx = |k: i64| -> usize {
                if i < 2 {
                    base + k as usize
                } else {
                    base - k as usize
                }
            };
            let c = [-25.0, 48.0, -36.0, 16.0, -3.0];
            let mut acc = Complex::new(T::zero(), T::zero());
            for (k, ck) in c.iter().enumerate() {
                acc = acc + samples[idx(k as i64)].scale(rl::<T>(*ck));
            }
            acc.scale(sgn * inv12h)
        };
    }
    out
}

/// m-th derivative by repeated application of [`derivative`].
pub fn derivative_n<T: Scalar>(samples: &[Complex<T>], h: T, order: usize) -> Vec<Complex<T>> {
    let mut cur = samples.to_vec();
    for _ in 0..order {
        cur = derivative(&cur, h);
    }
    cur
}

/// Smooth compactly supported bump on (center - half_width, center + half_width),
/// normalized to peak value 1. Infinitely differentiable; identically zero
/// outside the open interval.
pub fn bump<T: Scalar>(x: T, center: T, half_width: T) -> T {
    let s = (x - center) / half_width;
    let s2 = s * s;
    if s2 >= T::one() {
        return T::zero();
    }
    (T::one() - T::one() / (T::one() - s2)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex;

    #[test]
    fn grid_is_symmetric_and_odd() {
        let g = Grid::<f64>::new(20.0, 0.01);
        assert_eq!(g.len % 2, 1);
        assert!((g.x(0) + 20.0).abs() < 1e-12);
        assert!((g.x(g.len - 1) - 20.0).abs() < 1e-12);
        assert!(g.x(g.center_index()).abs() < 1e-12);
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        let g = Grid::<f64>::new(1.0, 0.05);
        let samples: Vec<Complex<f64>> = g
            .points()
            .map(|x| Complex::new(x * x * x + 2.0 * x * x + 1.0, x))
            .collect();
        let v = simpson(&samples, g.h);
        // ∫_{-1}^{1} (x^3 + 2x^2 + 1) dx = 4/3 + 2, ∫ x dx = 0
        assert!((v.re - (4.0 / 3.0 + 2.0)).abs() < 1e-13);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn derivative_fourth_order() {
        let mut errs = Vec::new();
        for &m in &[101usize, 201] {
            let h = 2.0 / (m - 1) as f64;
            let xs: Vec<f64> = (0..m).map(|i| -1.0 + i as f64 * h).collect();
            let f: Vec<Complex<f64>> = xs
                .iter()
                .map(|&x| Complex::new((3.0 * x).sin(), 0.0))
                .collect();
            let d = derivative(&f, h);
            let err = xs
                .iter()
                .zip(d.iter())
                .map(|(&x, di)| (di.re - 3.0 * (3.0 * x).cos()).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.5, "measured order {order}");
    }

    #[test]
    fn bump_is_compactly_supported() {
        assert_eq!(bump(2.0f64, 0.0, 1.0), 0.0);
        assert_eq!(bump(1.0f64, 0.0, 1.0), 0.0);
        assert!((bump(0.0f64, 0.0, 1.0) - 1.0).abs() < 1e-15);
        assert!(bump(0.5f64, 0.0, 1.0) > 0.0);
    }
}
