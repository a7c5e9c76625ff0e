//! Block extraction from the scattering matrix, canonical action-angle
//! variables, triangular factorization of the blocks, and the symmetry
//! checks for self-adjoint operators.

use crate::error::{Error, Result};
use crate::mat::CMat;
use crate::scalar::{rl, Scalar};
use crate::sector::{RayPoint, RootSystem};
use crate::wave::{PointRecord, ScatteringRecord};
use num_complex::Complex;

/// One diagonal block of a(ξ) in the local ordering: either a scalar entry
/// or a 2×2 block labelled by ν (1-based position of its first row).
#[derive(Debug, Clone)]
pub struct Block<T> {
    /// 0-based starting position on the diagonal.
    pub start: usize,
    pub len: usize,
    pub m: CMat<T>,
}

impl<T: Scalar> Block<T> {
    /// Label ν of a 2×2 block.
    pub fn nu(&self) -> usize {
        self.start + 1
    }

    pub fn det(&self) -> Complex<T> {
        self.m.det()
    }
}

#[derive(Debug, Clone)]
pub struct BlockData<T> {
    pub ray: usize,
    pub radius: T,
    pub blocks: Vec<Block<T>>,
    /// |Π_blocks det - det a| over the raw matrix (determinant ladder).
    pub det_ladder_err: T,
}

/// Split the projected scattering matrix at a ray point into its diagonal
/// blocks and check the layout against the ray parity.
pub fn extract_blocks<T: Scalar>(
    system: &RootSystem<T>,
    point: &PointRecord<T>,
) -> Result<BlockData<T>> {
    let n = system.n();
    let mask = system.projection_mask(point.ray)?;
    let starts = mask.block_starts();
    let mut blocks = Vec::with_capacity(starts.len());
    for (start, len) in starts {
        let mut m = CMat::zeros(len);
        for r in 0..len {
            for c in 0..len {
                m[(r, c)] = point.a[(start + r, start + c)];
            }
        }
        let b = Block { start, len, m };
        if len == 2 && n >= 3 && b.nu() % 2 != point.ray % 2 {
            return Err(Error::LayoutMismatch { n, ray: point.ray });
        }
        blocks.push(b);
    }
    let mut prod = Complex::new(T::one(), T::zero());
    for b in &blocks {
        prod = prod * b.det();
    }
    let det_ladder_err = (prod - point.a_raw.det()).norm();
    Ok(BlockData {
        ray: point.ray,
        radius: point.radius,
        blocks,
        det_ladder_err,
    })
}

/// One row of the canonical-variable table.
#[derive(Debug, Clone)]
pub struct CanonRow<T> {
    pub ray: usize,
    pub radius: T,
    pub nu: usize,
    pub p: Complex<T>,
    /// Undefined (not zero) when an off-diagonal entry degenerates.
    pub q: Option<Complex<T>>,
    pub wind_p: i64,
    pub wind_q: i64,
    /// Set when unwrapping saw a phase step larger than π between adjacent
    /// grid points (resolution warning).
    pub jump_flag: bool,
}

#[derive(Debug, Clone)]
pub struct CanonicalTable<T> {
    pub n: usize,
    pub rows: Vec<CanonRow<T>>,
}

/// Degeneracy guards for the canonical map.
#[derive(Debug, Clone)]
pub struct CanonParams<T> {
    /// Off-diagonal magnitude below which the angle is undefined.
    pub deg_tol: T,
    /// Block determinant magnitude below which the data is treated as
    /// adjacent to the discrete regime and the computation aborts.
    pub det_floor: T,
}

impl<T: Scalar> Default for CanonParams<T> {
    fn default() -> Self {
        CanonParams {
            deg_tol: rl(1e-12),
            det_floor: rl(1e-8),
        }
    }
}

struct Unwrapper<T> {
    prev_im: Option<T>,
    wind: i64,
    jumped: bool,
}

impl<T: Scalar> Unwrapper<T> {
    fn new() -> Self {
        Unwrapper {
            prev_im: None,
            wind: 0,
            jumped: false,
        }
    }

    /// Continue the branch of a log imaginary part; returns the unwrapped
    /// value and updates the winding count.
    fn feed(&mut self, principal_im: T) -> T {
        let two_pi = rl::<T>(2.0) * T::PI();
        match self.prev_im {
            None => {
                self.prev_im = Some(principal_im + rl::<T>(self.wind as f64) * two_pi);
                self.prev_im.unwrap()
            }
            Some(prev) => {
                let k = ((prev - principal_im) / two_pi).round();
                self.wind += k.to_f64_lossy() as i64;
                let val = principal_im + rl::<T>(self.wind as f64) * two_pi;
                if (val - prev).abs() > T::PI() {
                    self.jumped = true;
                }
                self.prev_im = Some(val);
                val
            }
        }
    }
}

/// Canonical variables over a scattering record. Branches are unwrapped
/// along each ray starting from the outermost radius, where a → I anchors
/// the action log at zero.
pub fn canonical_table<T: Scalar>(
    system: &RootSystem<T>,
    record: &ScatteringRecord<T>,
    params: &CanonParams<T>,
) -> Result<CanonicalTable<T>> {
    let n = system.n();
    let alpha = system.alpha();
    let count = record.spec.count;
    let mut rows: Vec<CanonRow<T>> = Vec::new();
    for &ray in &record.rays {
        let mask = system.projection_mask(ray)?;
        let nus: Vec<usize> = mask
            .block_starts()
            .into_iter()
            .filter(|(_, len)| *len == 2)
            .map(|(s, _)| s + 1)
            .collect();
        for nu in nus {
            let mut unwrap_p = Unwrapper::<T>::new();
            let mut unwrap_q = Unwrapper::<T>::new();
            let mut ray_rows: Vec<CanonRow<T>> = Vec::new();
            // Outermost first: a → I there, fixing log = 0.
            for idx in (0..count).rev() {
                let point = record.point(ray, idx);
                let xi = system.ray_to_complex(RayPoint {
                    ray,
                    radius: point.radius,
                });
                let (r, c) = (nu - 1, nu); // 0-based positions
                let a_rr = point.a[(r, r)];
                let a_cc = point.a[(c, c)];
                let a_rc = point.a[(r, c)];
                let a_cr = point.a[(c, r)];
                let delta = a_rr * a_cc - a_rc * a_cr;
                if delta.norm() < params.det_floor {
                    return Err(Error::NearDiscreteData {
                        point: format!("ray {ray}, radius {}", point.radius.to_f64_lossy()),
                        value: delta.norm().to_f64_lossy(),
                    });
                }
                let scale = (-xi).powu(n as u32).scale(rl::<T>(n as f64));
                let ratio_p = a_rr * a_cc / delta;
                let lp = ratio_p.ln();
                let im_p = unwrap_p.feed(lp.im);
                let p = scale * Complex::new(lp.re, im_p);
                let q = if a_rc.norm() < params.deg_tol || a_cr.norm() < params.deg_tol {
                    None
                } else {
                    let phase = alpha.powu(nu as u32);
                    let ratio_q = phase * a_cr / a_rc;
                    let lq = ratio_q.ln();
                    let im_q = unwrap_q.feed(lq.im);
                    let four_pi_i = Complex::new(T::zero(), rl::<T>(4.0) * T::PI());
                    Some(Complex::new(lq.re, im_q) / four_pi_i)
                };
                ray_rows.push(CanonRow {
                    ray,
                    radius: point.radius,
                    nu,
                    p,
                    q,
                    wind_p: unwrap_p.wind,
                    wind_q: unwrap_q.wind,
                    jump_flag: unwrap_p.jumped || unwrap_q.jumped,
                });
            }
            ray_rows.reverse();
            rows.extend(ray_rows);
        }
    }
    Ok(CanonicalTable { n, rows })
}

impl<T: Scalar> CanonicalTable<T> {
    pub fn row(&self, ray: usize, nu: usize, radius: T) -> Option<&CanonRow<T>> {
        self.rows
            .iter()
            .find(|r| r.ray == ray && r.nu == nu && (r.radius - radius).abs() < rl::<T>(1e-12))
    }

    pub fn rows_for(&self, ray: usize, nu: usize) -> Vec<&CanonRow<T>> {
        self.rows
            .iter()
            .filter(|r| r.ray == ray && r.nu == nu)
            .collect()
    }
}

impl CanonicalTable<f64> {
    /// CSV: ray, radius, nu, Re/Im p, Re/Im q (empty when undefined),
    /// winding integers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ray,radius,nu,re_p,im_p,re_q,im_q,wind_p,wind_q\n");
        for r in &self.rows {
            let (re_q, im_q) = match r.q {
                Some(q) => (format!("{}", q.re), format!("{}", q.im)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.ray, r.radius, r.nu, r.p.re, r.p.im, re_q, im_q, r.wind_p, r.wind_q
            ));
        }
        out
    }
}

/// Triangular factorization of one 2×2 block B: B·V₊ = A₊ (upper) with V₊
/// unit lower, and B·V₋ = A₋ (lower) with V₋ unit upper. The diagonal
/// ratio diag(A₋)⁻¹·diag(A₊) = (Δ/(ad), ad/Δ) encodes the action.
#[derive(Debug, Clone)]
pub struct BlockFactorization<T> {
    pub start: usize,
    pub len: usize,
    pub v_plus: CMat<T>,
    pub a_plus: CMat<T>,
    pub v_minus: CMat<T>,
    pub a_minus: CMat<T>,
}

#[derive(Debug, Clone)]
pub struct FactorizationData<T> {
    pub ray: usize,
    pub radius: T,
    pub blocks: Vec<BlockFactorization<T>>,
    /// diag(δ₋⁻¹ δ₊) assembled over the full matrix (1 at scalar slots).
    pub diag_ratio: Vec<Complex<T>>,
}

pub fn factorize<T: Scalar>(data: &BlockData<T>, pivot_tol: T) -> Result<FactorizationData<T>> {
    let one = Complex::new(T::one(), T::zero());
    let mut blocks = Vec::new();
    let mut diag_ratio: Vec<Complex<T>> = Vec::new();
    for b in &data.blocks {
        if b.len == 1 {
            let m = CMat::from_fn(1, |_, _| b.m[(0, 0)]);
            blocks.push(BlockFactorization {
                start: b.start,
                len: 1,
                v_plus: CMat::identity(1),
                a_plus: m.clone(),
                v_minus: CMat::identity(1),
                a_minus: m,
            });
            diag_ratio.push(one);
            continue;
        }
        let (a, bb, c, d) = (b.m[(0, 0)], b.m[(0, 1)], b.m[(1, 0)], b.m[(1, 1)]);
        if d.norm() < pivot_tol || a.norm() < pivot_tol {
            return Err(Error::FactorizationPivot(format!(
                "block at {} on ray {} (radius {})",
                b.start,
                data.ray,
                data.radius.to_f64_lossy()
            )));
        }
        let delta = a * d - bb * c;
        let mut v_plus = CMat::identity(2);
        v_plus[(1, 0)] = -c / d;
        let a_plus = b.m.mul_mat(&v_plus);
        let mut v_minus = CMat::identity(2);
        v_minus[(0, 1)] = -bb / a;
        let a_minus = b.m.mul_mat(&v_minus);
        diag_ratio.push(delta / (a * d));
        diag_ratio.push(a * d / delta);
        blocks.push(BlockFactorization {
            start: b.start,
            len: 2,
            v_plus,
            a_plus,
            v_minus,
            a_minus,
        });
    }
    Ok(FactorizationData {
        ray: data.ray,
        radius: data.radius,
        blocks,
        diag_ratio,
    })
}

/// Rotation-invariance report: compares the local representations of a(ξ)
/// and a(αξ) (two independent solves) and returns the largest deviation.
pub struct RotationReport<T> {
    pub max_deviation: T,
    pub samples: usize,
}

pub fn rotation_report<T: Scalar>(
    system: &RootSystem<T>,
    base: &[PointRecord<T>],
    rotated: &[PointRecord<T>],
) -> RotationReport<T> {
    let _ = system;
    let mut worst = T::zero();
    let mut count = 0usize;
    for (a, b) in base.iter().zip(rotated.iter()) {
        worst = worst.max((&a.a - &b.a).max_norm());
        count += 1;
    }
    RotationReport {
        max_deviation: worst,
        samples: count,
    }
}

/// Residuals of the self-adjoint symmetry identities, evaluated over a
/// record that carries both fundamental rays with a shared radius grid.
#[derive(Debug, Clone)]
pub struct SelfAdjointReport<T> {
    /// |conj(a_11(ξ)) a_nn(ξ*) - 1|
    pub corner: T,
    /// |conj(Δ_ν(ξ)) Δ_{n-ν}(ξ*) - 1|
    pub dets: T,
    /// |conj(p_ν(ξ)) - p_{n-ν}(ξ*)|
    pub actions: T,
    /// |X_{n-ν}(ξ*) conj(X_ν(ξ)) - 1| with X_ν = α^ν a_{ν+1,ν}/a_{ν,ν+1}
    /// (winding-free form of the angle identity)
    pub angles: T,
    /// Entrywise residual of the block restatement.
    pub block_form: T,
    /// |Im p| on blocks where the involution fixes ξ and ν (reality).
    pub action_reality: T,
}

impl<T: Scalar> SelfAdjointReport<T> {
    pub fn worst(&self) -> T {
        self.corner
            .max(self.dets)
            .max(self.actions)
            .max(self.angles)
            .max(self.block_form)
            .max(self.action_reality)
    }
}

pub fn check_selfadjoint<T: Scalar>(
    system: &RootSystem<T>,
    record: &ScatteringRecord<T>,
    table: &CanonicalTable<T>,
) -> Result<SelfAdjointReport<T>> {
    let n = system.n();
    let alpha = system.alpha();
    let count = record.spec.count;
    let mut rep = SelfAdjointReport {
        corner: T::zero(),
        dets: T::zero(),
        actions: T::zero(),
        angles: T::zero(),
        block_form: T::zero(),
        action_reality: T::zero(),
    };
    let one = Complex::new(T::one(), T::zero());
    for &ray in &record.rays {
        if ray > 1 {
            continue;
        }
        for idx in 0..count {
            let point = record.point(ray, idx);
            let star = system.star(RayPoint {
                ray,
                radius: point.radius,
            })?;
            if !record.rays.contains(&star.ray) {
                return Err(Error::Config(
                    "record must contain both fundamental rays".into(),
                ));
            }
            let spoint = record.point(star.ray, idx);
            let mask = system.projection_mask(ray)?;
            let star_mask = system.projection_mask(star.ray)?;
            // Corner identity: applies to the scalar corner blocks (first
            // position singleton here, last position singleton at ξ*).
            let first_scalar = mask.block_starts().first() == Some(&(0, 1));
            let last_scalar = star_mask.block_starts().last() == Some(&(n - 1, 1));
            if first_scalar && last_scalar {
                let corner = (point.a[(0, 0)].conj() * spoint.a[(n - 1, n - 1)] - one).norm();
                rep.corner = rep.corner.max(corner);
            }
            // Per-block identities: blocks B_ν on this ray map to B_{n-ν}
            // at the starred point.
            for (start, len) in mask.block_starts() {
                if len != 2 {
                    continue;
                }
                let nu = start + 1;
                let nu_s = n - nu;
                let (r, c) = (start, start + 1);
                let (rs, cs) = (nu_s - 1, nu_s);
                let b = &point.a;
                let bs = &spoint.a;
                let delta = b[(r, r)] * b[(c, c)] - b[(r, c)] * b[(c, r)];
                let delta_s = bs[(rs, rs)] * bs[(cs, cs)] - bs[(rs, cs)] * bs[(cs, rs)];
                rep.dets = rep.dets.max((delta.conj() * delta_s - one).norm());
                // Block restatement: B_{n-ν}(ξ*) = conj(Δ_ν)⁻¹ ·
                // [[conj a_{ν+1,ν+1}, -α^{-ν} conj a_{ν+1,ν}],
                //  [-α^{ν} conj a_{ν,ν+1}, conj a_{νν}]].
                let am = alpha.powu(nu as u32).finv(); // α^{-ν}
                let ap = alpha.powu(nu as u32);
                let pred = [
                    b[(c, c)].conj() / delta.conj(),
                    -(am * b[(c, r)].conj()) / delta.conj(),
                    -(ap * b[(r, c)].conj()) / delta.conj(),
                    b[(r, r)].conj() / delta.conj(),
                ];
                let got = [bs[(rs, rs)], bs[(rs, cs)], bs[(cs, rs)], bs[(cs, cs)]];
                for (p, g) in pred.iter().zip(got.iter()) {
                    rep.block_form = rep.block_form.max((*p - *g).norm());
                }
                // Angle identity, winding-free.
                let x_nu = ap * b[(c, r)] / b[(r, c)];
                let x_nus = alpha.powu(nu_s as u32) * bs[(cs, rs)] / bs[(rs, cs)];
                rep.angles = rep.angles.max((x_nus * x_nu.conj() - one).norm());
                // Action identity from the unwrapped table.
                if let (Some(row), Some(srow)) = (
                    table.row(ray, nu, point.radius),
                    table.row(star.ray, nu_s, point.radius),
                ) {
                    rep.actions = rep.actions.max((row.p.conj() - srow.p).norm());
                    if ray == star.ray && nu == nu_s {
                        rep.action_reality = rep.action_reality.max(row.p.im.abs());
                    }
                }
            }
        }
    }
    Ok(rep)
}

/// Real canonical variables in the self-adjoint case: for ν < n/2 the four
/// combinations √2·Re/Im of p_ν, q_ν; for n = 2m the variables p_m, q_m are
/// real and appended directly.
#[derive(Debug, Clone)]
pub struct RealCanonRow<T> {
    pub ray: usize,
    pub radius: T,
    pub nu: usize,
    pub values: Vec<(String, T)>,
}

pub fn real_canonical<T: Scalar>(
    table: &CanonicalTable<T>,
    n: usize,
    reality_tol: T,
) -> Result<Vec<RealCanonRow<T>>> {
    let sqrt2 = rl::<T>(2.0).sqrt();
    let mut out = Vec::new();
    for row in &table.rows {
        let nu = row.nu;
        let mut values: Vec<(String, T)> = Vec::new();
        if 2 * nu < n {
            values.push((format!("sqrt2_re_p{nu}"), sqrt2 * row.p.re));
            values.push((format!("sqrt2_im_p{nu}"), sqrt2 * row.p.im));
            if let Some(q) = row.q {
                values.push((format!("sqrt2_re_q{nu}"), sqrt2 * q.re));
                values.push((format!("sqrt2_im_q{nu}"), sqrt2 * q.im));
            }
        } else if 2 * nu == n {
            // Middle block: p and q are real; enforce it.
            if row.p.im.abs() > reality_tol {
                return Err(Error::NotSelfAdjoint(format!(
                    "Im p_{nu} = {:e} at radius {}",
                    row.p.im.to_f64_lossy(),
                    row.radius.to_f64_lossy()
                )));
            }
            values.push((format!("p{nu}"), row.p.re));
            if let Some(q) = row.q {
                if q.im.abs() > reality_tol {
                    return Err(Error::NotSelfAdjoint(format!(
                        "Im q_{nu} = {:e} at radius {}",
                        q.im.to_f64_lossy(),
                        row.radius.to_f64_lossy()
                    )));
                }
                values.push((format!("q{nu}"), q.re));
            }
        } else {
            // ν > n/2 rows replicate the ν < n/2 data via the involution.
            continue;
        }
        out.push(RealCanonRow {
            ray: row.ray,
            radius: row.radius,
            nu,
            values,
        });
    }
    Ok(out)
}

/// Conjugate a point's matrix into the adjacent ordering (by π_j) and
/// recompute the canonical pair for the same block: the action must be
/// invariant and the angle maps to (const - q). Returns (p', q').
pub fn canonical_in_adjacent_rep<T: Scalar>(
    system: &RootSystem<T>,
    point: &PointRecord<T>,
    nu: usize,
) -> Result<(Complex<T>, Complex<T>)> {
    let n = system.n();
    let pi = system.permutation_matrix(point.ray)?;
    let conj = pi.mul_mat(&point.a).mul_mat(&pi.adjoint());
    let xi = system.ray_to_complex(RayPoint {
        ray: point.ray,
        radius: point.radius,
    });
    let (r, c) = (nu - 1, nu);
    let a_rr = conj[(r, r)];
    let a_cc = conj[(c, c)];
    let a_rc = conj[(r, c)];
    let a_cr = conj[(c, r)];
    let delta = a_rr * a_cc - a_rc * a_cr;
    let scale = (-xi).powu(n as u32).scale(rl::<T>(n as f64));
    let p = scale * (a_rr * a_cc / delta).ln();
    let phase = system.alpha().powu(nu as u32);
    let four_pi_i = Complex::new(T::zero(), rl::<T>(4.0) * T::PI());
    let q = (phase * a_cr / a_rc).ln() / four_pi_i;
    Ok((p, q))
}
