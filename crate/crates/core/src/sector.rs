//! Geometry of the spectral contour in the z-plane: rays, sectors, local
//! orderings of the n-th roots of unity, permutation matrices, Vandermonde
//! frames, projection masks, and the conjugation involution.
//!
//! Conventions. The contour Σ consists of the 2n rays where two of the
//! quantities Re(i α^k z) coincide; ray Σ_j points in the direction
//! e^{i(-π/2 + jπ/n)} with Σ_0 the negative imaginary axis and the index
//! increasing counterclockwise. The open sector Ω_j sits between Σ_{j-1}
//! and Σ_j, and a point on ray Σ_j is framed with the Ω_j ordering.
//!
//! For n = 2 the contour degenerates to the real axis: Σ_0 is the positive
//! real axis, Σ_1 the negative one, and both carry a single 2×2 block.
//!
//! All ordering and tie decisions are made in exact integer arithmetic:
//! on the bisector of Ω_j the value Re(i α^k z) equals cos(π e / (2n)) with
//! e = (2j - 1 + 4k) mod 4n, so sorting by the folded key min(e, 4n - e)
//! reproduces the descending ordering without floating-point comparisons.

use crate::error::{Error, Result};
use crate::mat::CMat;
use crate::scalar::{cis, rl, root_of_unity, Scalar};
use num_complex::Complex;

/// The root system of order n: primitive root, ray directions, sector count.
#[derive(Debug, Clone)]
pub struct RootSystem<T> {
    n: usize,
    alpha: Complex<T>,
}

/// A point on a ray of Σ, stored as (ray index, radius) so that the origin
/// is unrepresentable and rotation-orbit bookkeeping stays exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPoint<T> {
    pub ray: usize,
    pub radius: T,
}

/// Spectral point: either off the contour (sector interior) or on a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralPoint<T> {
    Sector(Complex<T>),
    Ray(RayPoint<T>),
}

impl<T: Scalar> RootSystem<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidOrder(n));
        }
        Ok(RootSystem {
            n,
            alpha: root_of_unity(n, 1),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Primitive n-th root of unity.
    pub fn alpha(&self) -> Complex<T> {
        self.alpha
    }

    /// α^k with exact axis values.
    pub fn alpha_pow(&self, k: i64) -> Complex<T> {
        root_of_unity(self.n, k)
    }

    pub fn ray_count(&self) -> usize {
        2 * self.n
    }

    /// Direction angle of ray Σ_j. For n = 2 this places Σ_0 on the positive
    /// real axis and Σ_1 on the negative real axis.
    pub fn ray_angle(&self, j: usize) -> T {
        if self.n == 2 {
            return if j % 2 == 0 { T::zero() } else { T::PI() };
        }
        let n = rl::<T>(self.n as f64);
        -T::FRAC_PI_2() + rl::<T>(j as f64) * T::PI() / n
    }

    /// Unit vector along ray Σ_j.
    pub fn ray_direction(&self, j: usize) -> Complex<T> {
        if self.n == 2 {
            return if j % 2 == 0 {
                Complex::new(T::one(), T::zero())
            } else {
                Complex::new(-T::one(), T::zero())
            };
        }
        cis(self.ray_angle(j))
    }

    pub fn ray_to_complex(&self, p: RayPoint<T>) -> Complex<T> {
        self.ray_direction(p.ray).scale(p.radius)
    }

    /// Exponent order key on the bisector of Ω_j: position of root α^k in the
    /// descending ordering of Re(i α^k z). Smaller key = earlier position.
    fn bisector_key(&self, j: usize, k: usize) -> usize {
        if self.n == 2 {
            // Lower half plane orders (1, -1); upper half plane (-1, 1).
            return if j % 2 == 0 { k } else { 1 - k };
        }
        let four_n = 4 * self.n;
        // Angle of i α^k z at the Ω_j bisector is π(2j - 1 + 4k)/(2n).
        let e = (2 * (j as i64) - 1 + 4 * (k as i64)).rem_euclid(four_n as i64) as usize;
        e.min(four_n - e)
    }

    /// Whether roots α^{k1} and α^{k2} satisfy Re(i ξ α^{k1}) = Re(i ξ α^{k2})
    /// for ξ on ray Σ_j (exact integer test).
    fn tied_on_ray(&self, j: usize, k1: usize, k2: usize) -> bool {
        if self.n == 2 {
            // Re(i ξ (±1)) = 0 on the real axis: everything ties.
            return true;
        }
        let two_n = 2 * self.n;
        // Angle of i α^k ξ on Σ_j is π(j + 2k)/n; cosines agree iff the
        // integers j + 2k agree up to sign mod 2n.
        let e1 = (j + 2 * k1) % two_n;
        let e2 = (j + 2 * k2) % two_n;
        e1 == e2 || e1 == (two_n - e2) % two_n
    }

    /// Exponents of the roots of unity in the ordering of sector Ω_j:
    /// returned[pos] = k means the (pos+1)-st root of the ordering is α^k.
    pub fn ordering_exponents(&self, j: usize) -> Result<Vec<usize>> {
        if j >= self.ray_count() {
            return Err(Error::InvalidSectorIndex {
                n: self.n,
                index: j,
            });
        }
        let mut ks: Vec<usize> = (0..self.n).collect();
        ks.sort_by_key(|&k| self.bisector_key(j, k));
        Ok(ks)
    }

    /// The ordered roots (α_1, …, α_n) of sector Ω_j.
    pub fn local_ordering(&self, j: usize) -> Result<Vec<Complex<T>>> {
        Ok(self
            .ordering_exponents(j)?
            .into_iter()
            .map(|k| self.alpha_pow(k as i64))
            .collect())
    }

    /// Permutation taking the j-th ordering to the (j+1)-st: perm[pos_j] =
    /// pos_{j+1} of the same root. Always an involution (disjoint
    /// transpositions of the pairs that tie on Σ_j).
    pub fn permutation(&self, j: usize) -> Result<Vec<usize>> {
        let from = self.ordering_exponents(j)?;
        let to = self.ordering_exponents((j + 1) % self.ray_count())?;
        let mut pos_in_to = vec![0usize; self.n];
        for (pos, &k) in to.iter().enumerate() {
            pos_in_to[k] = pos;
        }
        Ok(from.iter().map(|&k| pos_in_to[k]).collect())
    }

    /// Permutation matrix π_j (orthogonal 0/1 matrix realizing
    /// `permutation`): conjugating a matrix in the j-th ordering by π_j
    /// yields the (j+1)-st ordering.
    pub fn permutation_matrix(&self, j: usize) -> Result<CMat<T>> {
        let perm = self.permutation(j)?;
        let mut p = CMat::zeros(self.n);
        for (src, &dst) in perm.iter().enumerate() {
            p[(dst, src)] = Complex::new(T::one(), T::zero());
        }
        Ok(p)
    }

    /// Sector index of a point off the contour; errors when z is on (or
    /// numerically indistinguishable from) a ray.
    pub fn sector_of(&self, z: Complex<T>) -> Result<usize> {
        if z.norm() == T::zero() {
            return Err(Error::ZeroSpectralPoint);
        }
        let theta = z.im.atan2(z.re);
        if self.n == 2 {
            // Contour = real axis; Ω_0 is the lower half plane.
            if (z.im / z.norm()).abs() < rl::<T>(1e-9) {
                return Err(Error::AmbiguousFrame);
            }
            return Ok(if z.im < T::zero() { 0 } else { 1 });
        }
        let step = T::PI() / rl::<T>(self.n as f64);
        // Fractional ray coordinate: ray Σ_j sits at s = j.
        let s = (theta + T::FRAC_PI_2()) / step;
        let nearest = s.round();
        if (s - nearest).abs() < rl::<T>(1e-9) {
            return Err(Error::AmbiguousFrame);
        }
        let j = s.ceil().to_f64_lossy() as i64;
        Ok(j.rem_euclid(self.ray_count() as i64) as usize)
    }

    /// Local frame for a spectral point. Points off Σ get the frame of their
    /// sector; ray points get the Ω_j frame of their ray index.
    pub fn frame_at(&self, point: &SpectralPoint<T>) -> Result<SectorFrame<T>> {
        match point {
            SpectralPoint::Sector(z) => {
                let j = self.sector_of(*z)?;
                SectorFrame::build(self, j, *z, None)
            }
            SpectralPoint::Ray(p) => {
                if !(p.radius > T::zero()) {
                    return Err(Error::ZeroSpectralPoint);
                }
                if p.ray >= self.ray_count() {
                    return Err(Error::InvalidSectorIndex {
                        n: self.n,
                        index: p.ray,
                    });
                }
                let z = self.ray_to_complex(*p);
                SectorFrame::build(self, p.ray, z, Some(p.ray))
            }
        }
    }

    /// Projection mask on ray Σ_j: keep[(r,c)] is true when the roots at
    /// positions r, c of the Ω_j ordering tie on the ray. In the local
    /// ordering the kept pattern is block diagonal with 1×1 and 2×2 blocks.
    pub fn projection_mask(&self, j: usize) -> Result<ProjectionMask> {
        let ks = self.ordering_exponents(j)?;
        let n = self.n;
        let mut keep = vec![false; n * n];
        for r in 0..n {
            for c in 0..n {
                keep[r * n + c] = self.tied_on_ray(j, ks[r], ks[c]);
            }
        }
        Ok(ProjectionMask { n, ray: j, keep })
    }

    /// Ray index of α·Σ_j: rotation by the primitive root advances two rays
    /// for n ≥ 3 (rays are spaced at half the rotation angle) and maps each
    /// half-axis to the other for n = 2.
    pub fn rotated_ray(&self, j: usize) -> usize {
        if self.n == 2 {
            (j + 1) % 2
        } else {
            (j + 2) % (2 * self.n)
        }
    }

    /// The involution ξ ↦ ξ* on Σ_0 ∪ Σ_1: the unique point of Σ_0 ∪ Σ_1 on
    /// the rotation orbit of the complex conjugate. Fixed point for even n;
    /// swaps the two rays for odd n.
    pub fn star(&self, p: RayPoint<T>) -> Result<RayPoint<T>> {
        if p.ray > 1 {
            return Err(Error::OffContour(format!(
                "star is defined on rays 0 and 1; got ray {} (rotate into the fundamental pair first)",
                p.ray
            )));
        }
        if self.n % 2 == 0 {
            Ok(p)
        } else {
            Ok(RayPoint {
                ray: 1 - p.ray,
                radius: p.radius,
            })
        }
    }

    /// Order-reversing matrix Σ_k e_{k, n-k+1}; an involution.
    pub fn reversal_matrix(&self) -> CMat<T> {
        CMat::from_fn(self.n, |r, c| {
            if r + c == self.n - 1 {
                Complex::new(T::one(), T::zero())
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
    }

    /// The antiholomorphic map σ(z) = -conj(z).
    pub fn sigma(&self, z: Complex<T>) -> Complex<T> {
        -z.conj()
    }
}

/// Local frame at a spectral point: ordering, diagonal J(z), permutation to
/// the next ordering, Vandermonde matrices, and the ray mask when on Σ.
#[derive(Debug, Clone)]
pub struct SectorFrame<T> {
    pub n: usize,
    /// Sector (or ray) index whose ordering is in force.
    pub index: usize,
    /// The spectral point itself.
    pub z: Complex<T>,
    /// Exponents k of the ordered roots α_1 = α^{k_1}, ….
    pub exponents: Vec<usize>,
    /// Ordered roots (α_1, …, α_n).
    pub ordering: Vec<Complex<T>>,
    /// Diagonal matrix J(z) = diag(α_1, …, α_n).
    pub j_local: CMat<T>,
    /// Permutation matrix π_j to the next ordering.
    pub pi: CMat<T>,
    /// Vandermonde matrix Λ_j in the local ordering.
    pub lambda: CMat<T>,
    /// d(z) Λ_j with d(z) = diag(1, z, …, z^{n-1}).
    pub lambda_z: CMat<T>,
    /// Λ_z^{-1} (explicit: Λ_j^* d(z)^{-1} / n).
    pub lambda_z_inv: CMat<T>,
    /// Projection mask when the point lies on a ray.
    pub mask: Option<ProjectionMask>,
}

impl<T: Scalar> SectorFrame<T> {
    fn build(sys: &RootSystem<T>, index: usize, z: Complex<T>, ray: Option<usize>) -> Result<Self> {
        if z.norm() == T::zero() {
            return Err(Error::ZeroSpectralPoint);
        }
        let n = sys.n();
        let exponents = sys.ordering_exponents(index)?;
        let ordering: Vec<Complex<T>> =
            exponents.iter().map(|&k| sys.alpha_pow(k as i64)).collect();
        let j_local = CMat::diag(&ordering);
        let pi = sys.permutation_matrix(index)?;
        let lambda = CMat::from_fn(n, |r, c| ordering[c].powu(r as u32));
        let dz: Vec<Complex<T>> = (0..n).map(|r| z.powu(r as u32)).collect();
        let lambda_z = CMat::from_fn(n, |r, c| dz[r] * lambda[(r, c)]);
        // Λ_j^{-1} = Λ_j^*/n, hence Λ_z^{-1} = (Λ_j^*/n) d(z)^{-1}.
        let ninv = T::one() / rl::<T>(n as f64);
        let lambda_z_inv = CMat::from_fn(n, |r, c| lambda[(c, r)].conj().scale(ninv) / dz[c]);
        let mask = match ray {
            Some(j) => Some(sys.projection_mask(j)?),
            None => None,
        };
        Ok(SectorFrame {
            n,
            index,
            z,
            exponents,
            ordering,
            j_local,
            pi,
            lambda,
            lambda_z,
            lambda_z_inv,
            mask,
        })
    }

    /// Companion matrix J_z: superdiagonal of ones, z^n in the lower-left
    /// corner.
    pub fn companion_j(&self) -> CMat<T> {
        let mut m = CMat::zeros(self.n);
        for r in 0..self.n - 1 {
            m[(r, r + 1)] = Complex::new(T::one(), T::zero());
        }
        m[(self.n - 1, 0)] = self.z.powu(self.n as u32);
        m
    }

    /// diag(1, z, …, z^{n-1}).
    pub fn d_of_z(&self) -> CMat<T> {
        CMat::from_fn(self.n, |r, c| {
            if r == c {
                self.z.powu(r as u32)
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
    }

    /// Phases e^{i x ξ α_k} of the free evolution at position x.
    pub fn phases(&self, x: T) -> Vec<Complex<T>> {
        self.ordering
            .iter()
            .map(|&a| ((self.z * a).scale(x) * Complex::new(T::zero(), T::one())).exp())
            .collect()
    }
}

/// Boolean n×n mask of the projection onto entries whose root pair ties on
/// the ray.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMask {
    n: usize,
    pub ray: usize,
    keep: Vec<bool>,
}

impl ProjectionMask {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn keeps(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.n + c]
    }

    /// Apply the projection to a matrix: zero out off-pattern entries.
    pub fn project<T: Scalar>(&self, a: &CMat<T>) -> CMat<T> {
        a.mask_with(|r, c| self.keeps(r, c))
    }

    /// Largest modulus among entries outside the pattern.
    pub fn leakage<T: Scalar>(&self, a: &CMat<T>) -> T {
        let mut worst = T::zero();
        for r in 0..self.n {
            for c in 0..self.n {
                if !self.keeps(r, c) {
                    worst = worst.max(a[(r, c)].norm());
                }
            }
        }
        worst
    }

    /// Diagonal block layout: each class is either a singleton {p} or an
    /// adjacent pair {p, p+1} (positions are 0-based).
    pub fn block_starts(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut p = 0;
        while p < self.n {
            if p + 1 < self.n && self.keeps(p, p + 1) {
                out.push((p, 2));
                p += 2;
            } else {
                out.push((p, 1));
                p += 1;
            }
        }
        out
    }

    /// Checks the mask is symmetric and exactly block diagonal with 1×1 and
    /// 2×2 adjacent blocks.
    pub fn is_block_diagonal(&self) -> bool {
        for r in 0..self.n {
            for c in 0..self.n {
                if self.keeps(r, c) != self.keeps(c, r) {
                    return false;
                }
            }
        }
        let blocks = self.block_starts();
        let mut class = vec![usize::MAX; self.n];
        for (b, (start, len)) in blocks.iter().enumerate() {
            for p in *start..start + len {
                class[p] = b;
            }
        }
        for r in 0..self.n {
            for c in 0..self.n {
                if self.keeps(r, c) != (class[r] == class[c]) {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;
    use num_complex::Complex;

    type C = Complex<f64>;

    fn sys(n: usize) -> RootSystem<f64> {
        RootSystem::new(n).unwrap()
    }

    /// Independent oracle: sort the roots by descending Re(i α^k z) at a
    /// sampled interior point of the sector.
    fn sort_oracle(n: usize, z: C) -> Vec<usize> {
        let mut ks: Vec<usize> = (0..n).collect();
        let val = |k: usize| {
            let a = root_of_unity::<f64>(n, k as i64);
            (C::new(0.0, 1.0) * a * z).re
        };
        ks.sort_by(|&a, &b| val(b).partial_cmp(&val(a)).unwrap());
        ks
    }

    #[test]
    fn ordering_matches_stated_small_cases() {
        let s3 = sys(3);
        // Ω_0 ordering (1, α, α^{-1}); Ω_1 ordering (1, α^{-1}, α).
        assert_eq!(s3.ordering_exponents(0).unwrap(), vec![0, 1, 2]);
        assert_eq!(s3.ordering_exponents(1).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn ordering_matches_sort_oracle_at_interior_points() {
        for n in [2usize, 3, 4, 5, 6, 7, 8] {
            let s = sys(n);
            for j in 0..2 * n {
                let ord = s.ordering_exponents(j).unwrap();
                for frac in [0.17, 0.5, 0.83] {
                    let theta = s.ray_angle(j) - std::f64::consts::PI / n as f64 * (1.0 - frac);
                    let z = C::from_polar(1.3, theta);
                    assert_eq!(ord, sort_oracle(n, z), "n={n} j={j} frac={frac}");
                }
            }
        }
    }

    #[test]
    fn permutations_match_stated_structure() {
        // n = 3: π_0 = (23), π_1 = (12).
        let s3 = sys(3);
        assert_eq!(s3.permutation(0).unwrap(), vec![0, 2, 1]);
        assert_eq!(s3.permutation(1).unwrap(), vec![1, 0, 2]);
        // n = 4: π_0 = (23), π_1 = (12)(34).
        let s4 = sys(4);
        assert_eq!(s4.permutation(0).unwrap(), vec![0, 2, 1, 3]);
        assert_eq!(s4.permutation(1).unwrap(), vec![1, 0, 3, 2]);
        // n = 2: π_0 = π_1 = (12).
        let s2 = sys(2);
        assert_eq!(s2.permutation(0).unwrap(), vec![1, 0]);
        assert_eq!(s2.permutation(1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn permutations_are_involutions_and_periodic() {
        for n in 2..=8usize {
            let s = sys(n);
            for j in 0..2 * n {
                let p = s.permutation(j).unwrap();
                for (i, &pi) in p.iter().enumerate() {
                    assert_eq!(p[pi], i, "π_j² = id fails n={n} j={j}");
                }
                let p2 = s.permutation((j + 2) % (2 * n)).unwrap();
                assert_eq!(p, p2, "π_j = π_(j+2) fails n={n} j={j}");
            }
        }
    }

    #[test]
    fn permutation_conjugation_relabels_orderings() {
        for n in 2..=6usize {
            let s = sys(n);
            for j in 0..2 * n {
                let pi = s.permutation_matrix(j).unwrap();
                let dj = CMat::diag(&s.local_ordering(j).unwrap());
                let dj1 = CMat::diag(&s.local_ordering((j + 1) % (2 * n)).unwrap());
                let conj = &(&pi * &dj) * &pi.adjoint();
                let err = (&conj - &dj1).max_norm();
                assert!(err < 1e-12, "n={n} j={j} err={err:e}");
            }
        }
    }

    #[test]
    fn vandermonde_unitarity() {
        for n in 2..=8usize {
            let s = sys(n);
            for j in 0..2 * n {
                let z = C::from_polar(0.7, s.ray_angle(j) - 0.3 * std::f64::consts::PI / n as f64);
                let f = s.frame_at(&SpectralPoint::Sector(z)).unwrap();
                let prod = f.lambda.mul_mat(&f.lambda.adjoint());
                let err = (&prod - &CMat::identity(n).scale(cx(n as f64, 0.0))).max_norm();
                assert!(err < 1e-12, "ΛΛ* = nI fails: n={n} j={j} err={err:e}");
            }
        }
    }

    #[test]
    fn companion_intertwines_frame() {
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in [2usize, 3, 4, 5] {
            let s = sys(n);
            for _ in 0..25 {
                let theta = (next() - 0.5) * 2.0 * std::f64::consts::PI;
                let r = 0.2 + 2.0 * next();
                let z = C::from_polar(r, theta);
                let f = match s.frame_at(&SpectralPoint::Sector(z)) {
                    Ok(f) => f,
                    Err(_) => continue, // landed on a ray
                };
                let lhs = f.companion_j().mul_mat(&f.lambda_z);
                let rhs = f.lambda_z.mul_mat(&f.j_local).scale(z);
                let err = (&lhs - &rhs).max_norm();
                assert!(
                    err < 1e-12 * (1.0 + z.norm().powi(n as i32)),
                    "n={n} err={err:e}"
                );
            }
        }
    }

    #[test]
    fn lambda_z_inverse_is_exact() {
        let s = sys(4);
        let z = C::new(0.8, -1.1);
        let f = s.frame_at(&SpectralPoint::Sector(z)).unwrap();
        let prod = f.lambda_z.mul_mat(&f.lambda_z_inv);
        assert!((&prod - &CMat::identity(4)).max_norm() < 1e-12);
    }

    #[test]
    fn frame_rotation_invariance() {
        // J_z, Λ_z and z·J(z) computed at α z coincide with those at z.
        for n in [3usize, 4, 5] {
            let s = sys(n);
            let z = C::from_polar(1.1, -1.2);
            let az = s.alpha() * z;
            let (f1, f2) = match (
                s.frame_at(&SpectralPoint::Sector(z)),
                s.frame_at(&SpectralPoint::Sector(az)),
            ) {
                (Ok(a), Ok(b)) => (a, b),
                _ => panic!("sample landed on a ray"),
            };
            assert!((&f1.companion_j() - &f2.companion_j()).max_norm() < 1e-12);
            assert!((&f1.lambda_z - &f2.lambda_z).max_norm() < 1e-12, "n={n}");
            let zj1 = f1.j_local.scale(z);
            let zj2 = f2.j_local.scale(az);
            assert!((&zj1 - &zj2).max_norm() < 1e-12);
        }
    }

    #[test]
    fn mask_patterns_match_block_layout() {
        // n = 3: Σ_0 → {1}, {2,3}; Σ_1 → {1,2}, {3}.
        let s3 = sys(3);
        let m0 = s3.projection_mask(0).unwrap();
        assert!(m0.is_block_diagonal());
        assert_eq!(m0.block_starts(), vec![(0, 1), (1, 2)]);
        let m1 = s3.projection_mask(1).unwrap();
        assert_eq!(m1.block_starts(), vec![(0, 2), (2, 1)]);
        // n = 4: Σ_0 → {1},{2,3},{4}; Σ_1 → {1,2},{3,4}.
        let s4 = sys(4);
        assert_eq!(
            s4.projection_mask(0).unwrap().block_starts(),
            vec![(0, 1), (1, 2), (3, 1)]
        );
        assert_eq!(
            s4.projection_mask(1).unwrap().block_starts(),
            vec![(0, 2), (2, 2)]
        );
        // n = 2: one full block on both rays.
        let s2 = sys(2);
        assert_eq!(s2.projection_mask(0).unwrap().block_starts(), vec![(0, 2)]);
        assert_eq!(s2.projection_mask(1).unwrap().block_starts(), vec![(0, 2)]);
        // The tie condition evaluated directly in floating point agrees.
        for n in 2..=7usize {
            let s = sys(n);
            for j in 0..2 * n {
                let mask = s.projection_mask(j).unwrap();
                assert!(mask.is_block_diagonal(), "n={n} j={j}");
                let ord = s.local_ordering(j).unwrap();
                let xi = s.ray_direction(j) * 1.7;
                for r in 0..n {
                    for c in 0..n {
                        let v = (C::new(0.0, 1.0) * xi * (ord[r] - ord[c])).re;
                        assert_eq!(mask.keeps(r, c), v.abs() < 1e-12, "n={n} j={j} r={r} c={c}");
                    }
                }
            }
        }
    }

    #[test]
    fn mask_commutes_with_permutation() {
        // π_j and Π_ξ share a block structure, so conjugation by π_j maps
        // the kept pattern onto itself.
        for n in 2..=7usize {
            let s = sys(n);
            for j in 0..2 * n {
                let mask = s.projection_mask(j).unwrap();
                let pi = s.permutation_matrix(j).unwrap();
                let a = CMat::from_fn(n, |r, c| cx((1 + r * n + c) as f64, (r + 2 * c) as f64));
                let lhs = mask.project(&(&(&pi * &a) * &pi.adjoint()));
                let rhs = &(&pi * &mask.project(&a)) * &pi.adjoint();
                assert!((&lhs - &rhs).max_norm() < 1e-13, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn star_involution() {
        let s2 = sys(2);
        let p = RayPoint {
            ray: 0,
            radius: 1.5,
        };
        assert_eq!(s2.star(p).unwrap(), p);
        let s3 = sys(3);
        let q = s3.star(p).unwrap();
        assert_eq!(q.ray, 1);
        assert_eq!(q.radius, 1.5);
        assert_eq!(s3.star(q).unwrap(), p);
        assert!(s3
            .star(RayPoint {
                ray: 2,
                radius: 1.0
            })
            .is_err());
    }

    #[test]
    fn star_is_rotation_orbit_of_conjugate() {
        // conj(ξ) and ξ* lie on the same rotation orbit: conj(ξ) = α^k ξ*.
        for n in 2..=7usize {
            let s = sys(n);
            for ray in 0..2usize.min(2) {
                let p = RayPoint { ray, radius: 2.0 };
                let xi = s.ray_to_complex(p);
                let star = s.ray_to_complex(s.star(p).unwrap());
                let mut hit = false;
                for k in 0..n {
                    if (xi.conj() - s.alpha_pow(k as i64) * star).norm() < 1e-12 {
                        hit = true;
                    }
                }
                assert!(hit, "n={n} ray={ray}");
                assert!((xi.norm() - star.norm()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reversal_matrix_is_involution() {
        for n in 2..=6usize {
            let s = sys(n);
            let r = s.reversal_matrix();
            assert!((&r.mul_mat(&r) - &CMat::identity(n)).max_norm() < 1e-15);
        }
    }

    #[test]
    fn frame_errors() {
        let s = sys(3);
        assert!(matches!(
            s.frame_at(&SpectralPoint::Sector(C::new(0.0, 0.0))),
            Err(Error::ZeroSpectralPoint)
        ));
        // Exactly on Σ_0 (negative imaginary axis) without a ray index.
        assert!(matches!(
            s.frame_at(&SpectralPoint::Sector(C::new(0.0, -1.0))),
            Err(Error::AmbiguousFrame)
        ));
        assert!(s
            .frame_at(&SpectralPoint::Ray(RayPoint {
                ray: 0,
                radius: 1.0
            }))
            .is_ok());
        assert!(s
            .frame_at(&SpectralPoint::Ray(RayPoint {
                ray: 9,
                radius: 1.0
            }))
            .is_err());
    }

    #[test]
    fn ray_frames_satisfy_identities_too() {
        for n in 2..=6usize {
            let s = sys(n);
            for j in 0..2 * n {
                let f = s
                    .frame_at(&SpectralPoint::Ray(RayPoint {
                        ray: j,
                        radius: 1.3,
                    }))
                    .unwrap();
                let z = f.z;
                let lhs = f.companion_j().mul_mat(&f.lambda_z);
                let rhs = f.lambda_z.mul_mat(&f.j_local).scale(z);
                assert!((&lhs - &rhs).max_norm() < 1e-12);
            }
        }
    }

    #[test]
    fn d_of_one_is_identity() {
        let s = sys(3);
        // At z = 1 (inside a sector for n = 3 since rays avoid the positive
        // real axis when n is odd... it is on Σ for n=3? Ray angles are
        // -90°, -30°, 30°, 90°, 150°, 210°: z = 1 at angle 0 is interior.)
        let f = s
            .frame_at(&SpectralPoint::Sector(C::new(1.0, 0.0)))
            .unwrap();
        assert!((&f.d_of_z() - &CMat::identity(3)).max_norm() < 1e-15);
        assert!((&f.lambda_z - &f.lambda).max_norm() < 1e-15);
    }
}
