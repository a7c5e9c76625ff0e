//! Scalar abstraction: the numeric core is generic over the real float type.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Real scalar type for the numeric modules: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Debug + Display + LowerExp + Sum + Send + Sync + 'static
{
    /// Lossy conversion to `f64` for reporting and serialization.
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Shorthand for converting an `f64` literal into the working scalar.
pub fn rl<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert into the scalar type")
}

/// Complex number from a pair of `f64` literals.
pub fn cx<T: Scalar>(re: f64, im: f64) -> Complex<T> {
    Complex::new(rl(re), rl(im))
}

/// The imaginary unit.
pub fn iu<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::one())
}

/// e^{iθ} for a real phase θ.
pub fn cis<T: Scalar>(theta: T) -> Complex<T> {
    Complex::new(theta.cos(), theta.sin())
}

/// The primitive n-th root of unity exp(2πi/n) raised to the k-th power,
/// with k reduced mod n so the phase stays in [0, 2π).
pub fn root_of_unity<T: Scalar>(n: usize, k: i64) -> Complex<T> {
    let nn = n as i64;
    let k = k.rem_euclid(nn);
    // Exact values on the axes avoid spurious 1e-16 dust in frame matrices.
    if k == 0 {
        return Complex::new(T::one(), T::zero());
    }
    if 4 * k == nn {
        return Complex::new(T::zero(), T::one());
    }
    if 2 * k == nn {
        return Complex::new(-T::one(), T::zero());
    }
    if 4 * k == 3 * nn {
        return Complex::new(T::zero(), -T::one());
    }
    let theta = rl::<T>(2.0) * T::PI() * rl::<T>(k as f64) / rl::<T>(n as f64);
    cis(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_of_unity_cycle() {
        for n in 2..=8usize {
            let a = root_of_unity::<f64>(n, 1);
            let mut p = num_complex::Complex::new(1.0, 0.0);
            for _ in 0..n {
                p *= a;
            }
            assert!((p - num_complex::Complex::new(1.0, 0.0)).norm() < 1e-14);
            for k in 1..n {
                let w = root_of_unity::<f64>(n, k as i64);
                assert!((w - num_complex::Complex::new(1.0, 0.0)).norm() > 1e-3);
            }
        }
    }

    #[test]
    fn axis_roots_are_exact() {
        assert_eq!(
            root_of_unity::<f64>(4, 1),
            num_complex::Complex::new(0.0, 1.0)
        );
        assert_eq!(
            root_of_unity::<f64>(4, 2),
            num_complex::Complex::new(-1.0, 0.0)
        );
        assert_eq!(
            root_of_unity::<f64>(4, 3),
            num_complex::Complex::new(0.0, -1.0)
        );
        assert_eq!(
            root_of_unity::<f64>(2, 1),
            num_complex::Complex::new(-1.0, 0.0)
        );
        assert_eq!(
            root_of_unity::<f64>(8, 6),
            num_complex::Complex::new(0.0, -1.0)
        );
    }

    #[test]
    fn generic_over_f32() {
        let a = root_of_unity::<f32>(3, 1);
        assert!((a.norm() - 1.0f32).abs() < 1e-6);
    }
}
