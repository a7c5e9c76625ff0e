//! Direct scattering transform for n-th order scalar differential operators
//! on the line, together with the verification machinery for the associated
//! integrable hierarchy: scattering matrices, canonical action-angle
//! variables, Poisson-bracket kernels, self-adjoint symmetries, spectral
//! evolution laws, and Hamiltonian generating functions.
//!
//! Numeric modules are generic over the real scalar type through the
//! [`Scalar`] trait (`f32`/`f64`); the symbol engine works over exact
//! Gaussian rationals so that flow derivations are bit-reproducible.

pub mod analysis;
pub mod bracket;
pub mod diffpoly;
pub mod error;
pub mod flow;
pub mod grid;
pub mod mat;
pub mod potential;
pub mod report;
pub mod scalar;
pub mod sector;
pub mod symbol;
pub mod wave;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default real scalar used by the CLI and the acceptance suite.
pub type Real = f64;
/// Complex number over the default scalar.
pub type Cx = num_complex::Complex<Real>;
/// Complex matrix over the default scalar.
pub type CMat64 = mat::CMat<Real>;
