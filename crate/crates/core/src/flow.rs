//! Physical-space time evolution under the derived flow equations, the
//! linear spectral-evolution law, action conservation and angle linearity,
//! the Hamiltonian ladder from the triangular factorization, and the
//! generating-function checks.
//!
//! The evolver is an integrating-factor RK4 on a periodic Fourier grid: the
//! full linear part is propagated exactly per mode (small matrix
//! exponentials for coupled components), the nonlinear remainder explicitly.
//! Flows whose linearization carries real growth (the second flow of the
//! third-order hierarchy behaves like the linearly ill-posed long-wave
//! equation) get a spectral cutoff chosen so that amplified roundoff stays
//! far below the data's own spectral tail.

use crate::analysis::{canonical_table, extract_blocks, factorize, CanonParams};
use crate::error::{Error, Result};
use crate::grid::simpson_weights;
use crate::mat::CMat;
use crate::potential::Potential;
use crate::scalar::{rl, Scalar};
use crate::sector::{RayPoint, RootSystem, SpectralPoint};
use crate::symbol::FlowEquation;
use crate::wave::{
    compute_record, delta_of_z, Method, RayGridSpec, ScatteringRecord, SolverParams,
};
use num_complex::Complex;
use rustfft::{FftNum, FftPlanner};

/// The physical time scaling between the derived commutator coefficients
/// and the evolution actually integrated: du/dt = anchor · (commutator
/// right-hand side). Fixed by the translation flow (k = 1 moves the profile
/// leftward at unit speed) and verified, with no refitting, by the phase
/// laws of the higher flows.
pub fn time_anchor<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::one())
}

#[derive(Debug, Clone)]
pub struct EvolveParams<T> {
    pub t_final: T,
    pub dt: T,
    /// Number of stored snapshots (including t = 0 and t = T).
    pub snapshots: usize,
    pub blowup_threshold: T,
    /// Spectral cutoff |κ| above which modes are dropped; `None` picks one
    /// automatically from the linear growth rates.
    pub spectral_cutoff: Option<T>,
}

impl<T: Scalar> Default for EvolveParams<T> {
    fn default() -> Self {
        EvolveParams {
            t_final: rl(0.1),
            dt: rl(1e-3),
            snapshots: 6,
            blowup_threshold: rl(1e3),
            spectral_cutoff: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionRun<T> {
    pub flow: FlowEquation,
    pub times: Vec<T>,
    pub snapshots: Vec<Potential<T>>,
    /// Largest linear growth factor e^{Re λ · T} among retained modes.
    pub retained_growth: T,
    pub cutoff: T,
}

fn wavenumbers<T: Scalar>(m: usize, span: T) -> Vec<T> {
    let base = rl::<T>(2.0) * T::PI() / span;
    (0..m)
        .map(|i| {
            let f = if i <= m / 2 {
                i as f64
            } else {
                i as f64 - m as f64
            };
            base * rl::<T>(f)
        })
        .collect()
}

/// exp(M) for a small complex matrix by scaling and squaring.
fn expm<T: Scalar>(m: &CMat<T>) -> CMat<T> {
    let n = m.n();
    if n == 1 {
        let mut out = CMat::zeros(1);
        out[(0, 0)] = m[(0, 0)].exp();
        return out;
    }
    let norm = m.row_sum_norm();
    let s = if norm > rl::<T>(0.5) {
        (norm / rl::<T>(0.5)).log2().ceil().to_f64_lossy() as usize
    } else {
        0
    };
    let scale = T::one() / rl::<T>(2f64.powi(s as i32));
    let b = m.scale(Complex::new(scale, T::zero()));
    let mut term = CMat::<T>::identity(n);
    let mut acc = CMat::<T>::identity(n);
    for k in 1..30 {
        term = term
            .mul_mat(&b)
            .scale(Complex::new(T::one() / rl::<T>(k as f64), T::zero()));
        acc = &acc + &term;
        if term.max_norm() < rl::<T>(1e-20) {
            break;
        }
    }
    let mut out = acc;
    for _ in 0..s {
        out = out.mul_mat(&out);
    }
    out
}

struct SpectralOps<T> {
    fft: std::sync::Arc<dyn rustfft::Fft<T>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<T>>,
    m: usize,
}

impl<T: Scalar + FftNum> SpectralOps<T> {
    fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        SpectralOps {
            fft: planner.plan_fft_forward(m),
            ifft: planner.plan_fft_inverse(m),
            m,
        }
    }

    fn forward(&self, data: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = data.to_vec();
        self.fft.process(&mut buf);
        buf
    }

    fn inverse(&self, data: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = data.to_vec();
        self.ifft.process(&mut buf);
        let inv = T::one() / rl::<T>(self.m as f64);
        for v in &mut buf {
            *v = v.scale(inv);
        }
        buf
    }
}

/// Method-of-lines evolution of the coefficients under a derived flow.
pub fn evolve<T: Scalar + FftNum>(
    potential: &Potential<T>,
    flow: &FlowEquation,
    params: &EvolveParams<T>,
) -> Result<EvolutionRun<T>> {
    let n = potential.n();
    assert_eq!(flow.n, n, "flow order must match the potential");
    let comps = n - 1;
    let grid = potential.grid().clone();
    let m = grid.len - 1; // periodic: drop the duplicated right endpoint
    let span = rl::<T>(2.0) * grid.x_max;
    let kappa = wavenumbers::<T>(m, span);
    let ops = SpectralOps::<T>::new(m);
    let anchor = time_anchor::<T>();

    // Per-mode linear matrices A(κ) = anchor · Σ c (iκ)^m, and their step
    // propagators.
    let linear = flow.linear_part();
    let a_of = |k: T| -> CMat<T> {
        let ik = Complex::new(T::zero(), k);
        let mut a = CMat::zeros(comps);
        for j in 0..comps {
            for jp in 0..comps {
                for (order, c) in &linear[j][jp] {
                    let mut p = Complex::new(T::one(), T::zero());
                    for _ in 0..*order {
                        p = p * ik;
                    }
                    let cc = Complex::new(rl::<T>(c.re), rl::<T>(c.im));
                    a[(j, jp)] = a[(j, jp)] + anchor * cc * p;
                }
            }
        }
        a
    };

    // Growth rates determine the automatic spectral cutoff: keep modes whose
    // amplification over the whole run stays below 1e8 (roundoff then stays
    // near 1e-8 while the smooth data's tail at the cutoff is far smaller).
    let growth_rate = |k: T| -> T {
        let a = a_of(k);
        // For the 1x1 and trace-free 2x2 blocks in play, the spectral
        // abscissa is available in closed form.
        if comps == 1 {
            a[(0, 0)].re
        } else if comps == 2 {
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let half_tr = tr.scale(rl::<T>(0.5));
            let disc = (half_tr * half_tr - det).sqrt();
            (half_tr + disc).re.max((half_tr - disc).re)
        } else {
            // Row-sum bound; adequate to pick a conservative cutoff.
            a.row_sum_norm()
        }
    };
    let cutoff = match params.spectral_cutoff {
        Some(c) => c,
        None => {
            // e^{growth·T} ≤ 1e3 keeps amplified roundoff near 1e-13, far
            // below the boundary-decay allowance, while the smooth data's
            // own spectrum at the resulting cutoff is ~e^{-30} or smaller.
            let budget = rl::<T>(3.0) * rl::<T>(10.0).ln();
            let mut best = kappa.iter().fold(T::zero(), |acc, &k| acc.max(k.abs()));
            let mut ks: Vec<T> = kappa.iter().map(|k| k.abs()).collect();
            ks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &k in &ks {
                if growth_rate(k) * params.t_final > budget {
                    best = k;
                    break;
                }
            }
            best
        }
    };
    let keep: Vec<bool> = kappa.iter().map(|k| k.abs() <= cutoff).collect();
    let retained_growth = kappa
        .iter()
        .zip(keep.iter())
        .filter(|(_, &kp)| kp)
        .map(|(&k, _)| growth_rate(k) * params.t_final)
        .fold(T::zero(), T::max)
        .exp();

    // Distinct derivative variables needed by the nonlinear terms.
    let nonlinear = flow.nonlinear_part();
    let mut needed: Vec<(u8, u16)> = Vec::new();
    for p in &nonlinear {
        for (mono, _) in p.terms() {
            for (v, _) in mono.factors() {
                if !needed.contains(&(v.coeff_index, v.deriv_order)) {
                    needed.push((v.coeff_index, v.deriv_order));
                }
            }
        }
    }

    let dt = params.dt;
    let steps_total = (params.t_final / dt).round().to_f64_lossy() as usize;
    let steps_total = steps_total.max(1);
    let dt = params.t_final / rl::<T>(steps_total as f64);
    let snapshots = params.snapshots.max(2);
    // Snapshot step indices (deduplicated, always including 0 and the end).
    let snap_at: Vec<usize> = (0..snapshots)
        .map(|i| ((i as f64 / (snapshots - 1) as f64) * steps_total as f64).round() as usize)
        .collect();

    // Propagators for dt and dt/2 per retained mode.
    let zero_mat = CMat::<T>::zeros(comps);
    let e_full: Vec<CMat<T>> = kappa
        .iter()
        .zip(keep.iter())
        .map(|(&k, &kp)| {
            if kp {
                expm(&a_of(k).scale(Complex::new(dt, T::zero())))
            } else {
                zero_mat.clone()
            }
        })
        .collect();
    let e_half: Vec<CMat<T>> = kappa
        .iter()
        .zip(keep.iter())
        .map(|(&k, &kp)| {
            if kp {
                expm(&a_of(k).scale(Complex::new(dt / rl::<T>(2.0), T::zero())))
            } else {
                zero_mat.clone()
            }
        })
        .collect();

    // State in Fourier space, per component.
    let mut state: Vec<Vec<Complex<T>>> = (0..comps)
        .map(|j| {
            let samples = potential.samples(j);
            let mut hat = ops.forward(&samples[..m]);
            for (i, h) in hat.iter_mut().enumerate() {
                if !keep[i] {
                    *h = Complex::new(T::zero(), T::zero());
                }
            }
            hat
        })
        .collect();

    let apply = |mats: &[CMat<T>], v: &[Vec<Complex<T>>]| -> Vec<Vec<Complex<T>>> {
        let mut out = vec![vec![Complex::new(T::zero(), T::zero()); m]; comps];
        for i in 0..m {
            for j in 0..comps {
                let mut acc = Complex::new(T::zero(), T::zero());
                for jp in 0..comps {
                    acc = acc + mats[i][(j, jp)] * v[jp][i];
                }
                out[j][i] = acc;
            }
        }
        out
    };

    // Nonlinear RHS in Fourier space (dealiased with the 2/3 rule and the
    // stability cutoff).
    let dealias: Vec<bool> = kappa
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let idx = if i <= m / 2 { i } else { m - i };
            keep[i] && idx <= m / 3 && k.abs() <= cutoff
        })
        .collect();
    let nonlinear_hat = |state: &[Vec<Complex<T>>]| -> Vec<Vec<Complex<T>>> {
        if nonlinear.iter().all(|p| p.is_zero()) {
            return vec![vec![Complex::new(T::zero(), T::zero()); m]; comps];
        }
        // Physical samples of every needed derivative variable.
        let mut vars: Vec<((u8, u16), Vec<Complex<T>>)> = Vec::with_capacity(needed.len());
        for &(j, d) in &needed {
            let mut hat = state[j as usize].clone();
            for (i, h) in hat.iter_mut().enumerate() {
                let ik = Complex::new(T::zero(), kappa[i]);
                let mut p = Complex::new(T::one(), T::zero());
                for _ in 0..d {
                    p = p * ik;
                }
                *h = *h * p;
            }
            vars.push(((j, d), ops.inverse(&hat)));
        }
        let lookup_at = |i: usize, j: u8, d: u16| -> Complex<T> {
            vars.iter()
                .find(|((jj, dd), _)| *jj == j && *dd == d)
                .map(|(_, arr)| arr[i])
                .unwrap_or_else(|| Complex::new(T::zero(), T::zero()))
        };
        (0..comps)
            .map(|j| {
                if nonlinear[j].is_zero() {
                    return vec![Complex::new(T::zero(), T::zero()); m];
                }
                let phys: Vec<Complex<T>> = (0..m)
                    .map(|i| {
                        let mut look = |jj: u8, dd: u16| lookup_at(i, jj, dd);
                        anchor * nonlinear[j].eval(&mut look)
                    })
                    .collect();
                let mut hat = ops.forward(&phys);
                for (i, h) in hat.iter_mut().enumerate() {
                    if !dealias[i] {
                        *h = Complex::new(T::zero(), T::zero());
                    }
                }
                hat
            })
            .collect()
    };

    let to_potential = |state: &[Vec<Complex<T>>]| -> Vec<Vec<Complex<T>>> {
        (0..comps)
            .map(|j| {
                let mut phys = ops.inverse(&state[j]);
                phys.push(phys[0]); // restore the duplicated endpoint
                phys
            })
            .collect()
    };

    let mut times = Vec::new();
    let mut snaps = Vec::new();
    let mut t = T::zero();
    let record_snapshot = |snaps: &mut Vec<Potential<T>>,
                           times: &mut Vec<T>,
                           state: &[Vec<Complex<T>>],
                           t: T|
     -> Result<()> {
        let samples = to_potential(state);
        // Boundary decay must survive the evolution.
        for (j, s) in samples.iter().enumerate() {
            let edge = s[0].norm();
            if edge >= potential.decay_tol() * rl::<T>(10.0) {
                return Err(Error::EvolutionDecay {
                    t: t.to_f64_lossy(),
                    value: edge.to_f64_lossy(),
                    tol: (potential.decay_tol() * rl::<T>(10.0)).to_f64_lossy(),
                });
            }
            let _ = j;
        }
        snaps.push(potential.resample(samples));
        times.push(t);
        Ok(())
    };
    record_snapshot(&mut snaps, &mut times, &state, t)?;

    for step in 1..=steps_total {
        // Integrating-factor RK4.
        let n1 = nonlinear_hat(&state);
        let s2: Vec<Vec<Complex<T>>> = (0..comps)
            .map(|j| {
                (0..m)
                    .map(|i| state[j][i] + n1[j][i].scale(dt / rl::<T>(2.0)))
                    .collect()
            })
            .collect();
        let s2 = apply(&e_half, &s2);
        let n2 = nonlinear_hat(&s2);
        let eh_state = apply(&e_half, &state);
        let s3: Vec<Vec<Complex<T>>> = (0..comps)
            .map(|j| {
                (0..m)
                    .map(|i| eh_state[j][i] + n2[j][i].scale(dt / rl::<T>(2.0)))
                    .collect()
            })
            .collect();
        let n3 = nonlinear_hat(&s3);
        let s4: Vec<Vec<Complex<T>>> = {
            let en3: Vec<Vec<Complex<T>>> = apply(&e_half, &n3);
            let ef_state = apply(&e_full, &state);
            (0..comps)
                .map(|j| {
                    (0..m)
                        .map(|i| ef_state[j][i] + en3[j][i].scale(dt))
                        .collect()
                })
                .collect()
        };
        let n4 = nonlinear_hat(&s4);
        let ef_state = apply(&e_full, &state);
        let en1 = apply(&e_full, &n1);
        let eh_n2 = apply(&e_half, &n2);
        let eh_n3 = apply(&e_half, &n3);
        let sixth = dt / rl::<T>(6.0);
        for j in 0..comps {
            for i in 0..m {
                state[j][i] = ef_state[j][i]
                    + (en1[j][i]
                        + eh_n2[j][i].scale(rl::<T>(2.0))
                        + eh_n3[j][i].scale(rl::<T>(2.0))
                        + n4[j][i])
                        .scale(sixth);
            }
        }
        t = t + dt;
        // Blow-up monitor in physical space at snapshot cadence.
        if snap_at.contains(&step) {
            let phys = to_potential(&state);
            let sup = phys
                .iter()
                .flat_map(|s| s.iter().map(|v| v.norm()))
                .fold(T::zero(), T::max);
            if sup > params.blowup_threshold {
                return Err(Error::BlowUp {
                    t: t.to_f64_lossy(),
                    value: sup.to_f64_lossy(),
                    threshold: params.blowup_threshold.to_f64_lossy(),
                });
            }
            record_snapshot(&mut snaps, &mut times, &state, t)?;
        }
    }

    Ok(EvolutionRun {
        flow: flow.clone(),
        times,
        snapshots: snaps,
        retained_growth,
        cutoff,
    })
}

/// Scattering records at every snapshot of a run.
pub fn records_along_run<T: Scalar>(
    run: &EvolutionRun<T>,
    system: &RootSystem<T>,
    spec: &RayGridSpec<T>,
    rays: &[usize],
    params: &SolverParams<T>,
) -> Result<Vec<ScatteringRecord<T>>> {
    run.snapshots
        .iter()
        .map(|p| compute_record(p, system, spec, rays, Method::Auto, params))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SpectralLawReport<T> {
    /// Max relative error of the off-diagonal phase law over healthy
    /// entries.
    pub offdiag_rel: T,
    /// Max absolute drift of diagonal entries.
    pub diag_drift: T,
    /// Number of (point, entry) pairs measured.
    pub samples: usize,
}

/// Entrywise comparison a_{lm}(ξ, t) vs e^{iθ} a_{lm}(ξ, 0) with
/// θ = ξ^k (α_l^k - α_m^k) t in the local ordering.
pub fn spectral_evolution_check<T: Scalar>(
    system: &RootSystem<T>,
    run: &EvolutionRun<T>,
    records: &[ScatteringRecord<T>],
    floor: T,
) -> Result<SpectralLawReport<T>> {
    let k = run.flow.k as u32;
    let mut offdiag_rel = T::zero();
    let mut diag_drift = T::zero();
    let mut samples = 0usize;
    let base = &records[0];
    for (snap, rec) in records.iter().enumerate() {
        let t = run.times[snap];
        if snap == 0 {
            continue;
        }
        for (p0, pt) in base.points.iter().zip(rec.points.iter()) {
            let frame = system.frame_at(&SpectralPoint::Ray(RayPoint {
                ray: p0.ray,
                radius: p0.radius,
            }))?;
            let xi = frame.z;
            let mask = system.projection_mask(p0.ray)?;
            let n = system.n();
            for r in 0..n {
                for c in 0..n {
                    if !mask.keeps(r, c) {
                        continue;
                    }
                    if r == c {
                        diag_drift = diag_drift.max((pt.a[(r, c)] - p0.a[(r, c)]).norm());
                        continue;
                    }
                    let a0 = p0.a[(r, c)];
                    if a0.norm() < floor {
                        continue;
                    }
                    let phase = (Complex::new(T::zero(), T::one())
                        * xi.powu(k)
                        * (frame.ordering[r].powu(k) - frame.ordering[c].powu(k)))
                    .scale(t)
                    .exp();
                    let predicted = phase * a0;
                    offdiag_rel = offdiag_rel.max((pt.a[(r, c)] - predicted).norm() / a0.norm());
                    samples += 1;
                }
            }
        }
    }
    Ok(SpectralLawReport {
        offdiag_rel,
        diag_drift,
        samples,
    })
}

#[derive(Debug, Clone)]
pub struct ActionAngleReport<T> {
    /// Max |p(t) - p(0)| / max(|p(0)|, floor).
    pub action_drift_rel: T,
    /// Max relative error of the fitted angle slope against
    /// ξ^k (α_{ν+1}^k - α_ν^k) / 2π.
    pub angle_slope_rel: T,
    pub fitted: usize,
}

/// Actions stay fixed; angles move linearly with the predicted slope.
pub fn action_angle_check<T: Scalar>(
    system: &RootSystem<T>,
    run: &EvolutionRun<T>,
    records: &[ScatteringRecord<T>],
    canon: &CanonParams<T>,
    fit_radius_max: T,
    min_offdiag: T,
) -> Result<ActionAngleReport<T>> {
    let k = run.flow.k as u32;
    let tables: Result<Vec<_>> = records
        .iter()
        .map(|rec| canonical_table(system, rec, canon))
        .collect();
    let tables = tables?;
    let base = &tables[0];
    let mut action_drift_rel = T::zero();
    let mut angle_slope_rel = T::zero();
    let mut fitted = 0usize;
    let p_scale = base
        .rows
        .iter()
        .map(|r| r.p.norm())
        .fold(T::zero(), T::max)
        .max(rl::<T>(1e-8));
    for row0 in &base.rows {
        // Action drift across every snapshot.
        for table in tables.iter().skip(1) {
            if let Some(rt) = table.row(row0.ray, row0.nu, row0.radius) {
                action_drift_rel = action_drift_rel.max((rt.p - row0.p).norm() / p_scale);
            }
        }
        // Angle slope fit on healthy, moderate-radius rows.
        if row0.radius > fit_radius_max {
            continue;
        }
        let q0 = match row0.q {
            Some(q) => q,
            None => continue,
        };
        let frame = system.frame_at(&SpectralPoint::Ray(RayPoint {
            ray: row0.ray,
            radius: row0.radius,
        }))?;
        let point0 = records[0]
            .points
            .iter()
            .find(|p| p.ray == row0.ray && (p.radius - row0.radius).abs() < rl::<T>(1e-12));
        if let Some(p0) = point0 {
            if p0.a[(row0.nu - 1, row0.nu)].norm() < min_offdiag {
                continue;
            }
        }
        let xi = frame.z;
        let predicted_slope = (xi.powu(k)
            * (frame.ordering[row0.nu].powu(k) - frame.ordering[row0.nu - 1].powu(k)))
            / Complex::new(rl::<T>(2.0) * T::PI(), T::zero());
        // Unwrap q(t) through the snapshots and fit a line.
        let mut ts = Vec::new();
        let mut qs = Vec::new();
        let mut prev = q0;
        for (snap, table) in tables.iter().enumerate() {
            if let Some(rt) = table.row(row0.ray, row0.nu, row0.radius) {
                if let Some(mut qt) = rt.q {
                    // Continuity in t: the angle changes by multiples of
                    // 1/2 per winding of the underlying log.
                    let half = rl::<T>(0.5);
                    let k_wind = ((prev.re - qt.re) / half).round();
                    qt = Complex::new(qt.re + k_wind * half, qt.im);
                    ts.push(run.times[snap]);
                    qs.push(qt);
                    prev = qt;
                }
            }
        }
        if ts.len() < 3 {
            continue;
        }
        // Least-squares slope.
        let nn = rl::<T>(ts.len() as f64);
        let tbar = ts.iter().copied().fold(T::zero(), |a, b| a + b) / nn;
        let qbar = qs
            .iter()
            .fold(Complex::new(T::zero(), T::zero()), |a, b| a + *b)
            .scale(T::one() / nn);
        let mut num = Complex::new(T::zero(), T::zero());
        let mut den = T::zero();
        for (t, q) in ts.iter().zip(qs.iter()) {
            num = num + (*q - qbar).scale(*t - tbar);
            den = den + (*t - tbar) * (*t - tbar);
        }
        let slope = num.scale(T::one() / den);
        let rel = (slope - predicted_slope).norm() / predicted_slope.norm();
        angle_slope_rel = angle_slope_rel.max(rel);
        fitted += 1;
    }
    Ok(ActionAngleReport {
        action_drift_rel,
        angle_slope_rel,
        fitted,
    })
}

/// Unwrapped log of the triangular-factorization diagonal ratio along one
/// ray, anchored at zero from the outer tail.
fn log_diag_ratio<T: Scalar>(
    system: &RootSystem<T>,
    record: &ScatteringRecord<T>,
    ray: usize,
    pivot_tol: T,
) -> Result<Vec<Vec<Complex<T>>>> {
    let n = system.n();
    let count = record.spec.count;
    let mut per_radius = vec![vec![Complex::new(T::zero(), T::zero()); n]; count];
    let two_pi = rl::<T>(2.0) * T::PI();
    let mut winds = vec![T::zero(); n];
    let mut prev_im: Vec<Option<T>> = vec![None; n];
    for idx in (0..count).rev() {
        let point = record.point(ray, idx);
        let blocks = extract_blocks(system, point)?;
        let fact = factorize(&blocks, pivot_tol)?;
        for (pos, ratio) in fact.diag_ratio.iter().enumerate() {
            let l = ratio.ln();
            let im = match prev_im[pos] {
                None => l.im,
                Some(p) => {
                    let kw = ((p - l.im) / two_pi).round();
                    winds[pos] = winds[pos] + kw;
                    l.im + winds[pos] * two_pi
                }
            };
            prev_im[pos] = Some(im);
            per_radius[idx][pos] = Complex::new(l.re, im);
        }
    }
    Ok(per_radius)
}

#[derive(Debug, Clone)]
pub struct HamiltonianTable<T> {
    pub ks: Vec<i64>,
    pub values: Vec<Complex<T>>,
    /// Magnitude of the integrand at the outer grid end (tail bound).
    pub tail_bound: T,
}

/// Conserved functionals by quadrature of the factorization logs over the
/// fundamental ray pair: H_k = (n/2πi) ∫ (-ξ)^n tr[(ξJ)^k log δ₋⁻¹δ₊] dξ/ξ.
/// The radius grid is logarithmic, so the invariant measure turns into a
/// uniform one in log-radius.
pub fn hamiltonians<T: Scalar>(
    system: &RootSystem<T>,
    record: &ScatteringRecord<T>,
    ks: &[i64],
    pivot_tol: T,
) -> Result<HamiltonianTable<T>> {
    let n = system.n();
    let count = record.spec.count;
    let s0 = record.spec.r_min.ln();
    let s1 = record.spec.r_max.ln();
    let hs = (s1 - s0) / rl::<T>((count - 1) as f64);
    let weights: Vec<T> = if count % 2 == 1 {
        simpson_weights(count, hs)
    } else {
        // Trapezoid fallback for even node counts.
        let mut w = vec![hs; count];
        w[0] = hs / rl::<T>(2.0);
        w[count - 1] = hs / rl::<T>(2.0);
        w
    };
    let mut values = vec![Complex::new(T::zero(), T::zero()); ks.len()];
    let mut tail_bound = T::zero();
    for &ray in &[0usize, 1] {
        if !record.rays.contains(&ray) {
            return Err(Error::Config("record must contain rays 0 and 1".into()));
        }
        let logs = log_diag_ratio(system, record, ray, pivot_tol)?;
        let frame = system.frame_at(&SpectralPoint::Ray(RayPoint {
            ray,
            radius: record.spec.r_max,
        }))?;
        for idx in 0..count {
            let point = record.point(ray, idx);
            let xi = system.ray_to_complex(RayPoint {
                ray,
                radius: point.radius,
            });
            for (ki, &k) in ks.iter().enumerate() {
                // tr[(ξJ)^k log ratio] = ξ^k Σ_i α_i^k log_i.
                let mut tr = Complex::new(T::zero(), T::zero());
                for (pos, l) in logs[idx].iter().enumerate() {
                    tr = tr + frame.ordering[pos].powi(k as i32) * *l;
                }
                let xik = if k >= 0 {
                    xi.powu(k as u32)
                } else {
                    xi.powu((-k) as u32).finv()
                };
                let integrand = (-xi).powu(n as u32) * xik * tr;
                values[ki] = values[ki] + integrand.scale(weights[idx]);
                if idx == count - 1 {
                    tail_bound = tail_bound.max(integrand.norm());
                }
            }
        }
    }
    let prefactor = Complex::new(T::zero(), rl::<T>(2.0) * T::PI())
        .finv()
        .scale(rl::<T>(n as f64));
    for v in &mut values {
        *v = *v * prefactor;
    }
    Ok(HamiltonianTable {
        ks: ks.to_vec(),
        values,
        tail_bound,
    })
}

/// Residual of the rational identity
/// Σ_{j=0}^{n-1} α^{jk}/(ξ - α^j z) = n ξ^{k-1} z^{n-k} / (ξ^n - z^n).
pub fn partial_fraction_residual<T: Scalar>(
    system: &RootSystem<T>,
    k: u32,
    xi: Complex<T>,
    z: Complex<T>,
) -> T {
    let n = system.n();
    let mut lhs = Complex::new(T::zero(), T::zero());
    for j in 0..n {
        let aj = system.alpha_pow(j as i64);
        let ajk = system.alpha_pow((j * k as usize) as i64);
        lhs = lhs + ajk / (xi - aj * z);
    }
    let rhs = xi.powu(k - 1) * z.powu((n as u32) - k) / (xi.powu(n as u32) - z.powu(n as u32));
    (lhs - rhs.scale(rl::<T>(n as f64))).norm()
}

/// Sectionally analytic trace Φ_k(z) = tr[J^k(z) log δ(z)] recovered from
/// the ray data by boundary-value quadrature of the jump over the whole
/// contour (the fundamental pair rotated through all sectors).
pub fn plemelj_phi_k<T: Scalar>(
    system: &RootSystem<T>,
    record: &ScatteringRecord<T>,
    k: u32,
    z: Complex<T>,
    pivot_tol: T,
) -> Result<Complex<T>> {
    let n = system.n();
    let count = record.spec.count;
    let s0 = record.spec.r_min.ln();
    let s1 = record.spec.r_max.ln();
    let hs = (s1 - s0) / rl::<T>((count - 1) as f64);
    let weights: Vec<T> = if count % 2 == 1 {
        simpson_weights(count, hs)
    } else {
        let mut w = vec![hs; count];
        w[0] = hs / rl::<T>(2.0);
        w[count - 1] = hs / rl::<T>(2.0);
        w
    };
    // Keep z comfortably away from every ray.
    let step = if n == 2 {
        T::PI()
    } else {
        T::PI() / rl::<T>(n as f64)
    };
    let theta = z.im.atan2(z.re);
    let s = (theta + T::FRAC_PI_2()) / step;
    if (s - s.round()).abs() < rl::<T>(0.1) && n != 2 {
        return Err(Error::NearContour(format!("z = {z:?}")));
    }
    let mut total = Complex::new(T::zero(), T::zero());
    for &ray in &[0usize, 1] {
        let logs = log_diag_ratio(system, record, ray, pivot_tol)?;
        let frame = system.frame_at(&SpectralPoint::Ray(RayPoint {
            ray,
            radius: record.spec.r_max,
        }))?;
        let omega = system.ray_direction(ray);
        let rotations = if n == 2 { 1usize } else { n };
        for rot in 0..rotations {
            let phase = system.alpha_pow(rot as i64);
            for idx in 0..count {
                let point = record.point(ray, idx);
                let rho = point.radius;
                let xi = omega.scale(rho) * phase;
                let mut tr = Complex::new(T::zero(), T::zero());
                for (pos, l) in logs[idx].iter().enumerate() {
                    tr = tr + frame.ordering[pos].powu(k) * *l;
                }
                // dξ = phase·ω dρ = ξ d(log ρ) on the log grid.
                total = total + tr * xi / (xi - z) * Complex::new(weights[idx], T::zero());
            }
        }
    }
    Ok(total / Complex::new(T::zero(), rl::<T>(2.0) * T::PI()))
}

/// Direct route for order 2: Φ_k(z) = tr[J^k(z) log δ(z)] from the
/// sector-interior wave solution.
pub fn direct_phi_k_order2<T: Scalar>(
    potential: &Potential<T>,
    system: &RootSystem<T>,
    k: u32,
    z: Complex<T>,
    params: &SolverParams<T>,
) -> Result<Complex<T>> {
    let d = delta_of_z(potential, system, z, params)?;
    let frame = system.frame_at(&SpectralPoint::Sector(z))?;
    let mut tr = Complex::new(T::zero(), T::zero());
    for (pos, di) in d.iter().enumerate() {
        tr = tr + frame.ordering[pos].powu(k) * di.ln();
    }
    Ok(tr)
}

/// Coefficient of the large-z expansion: c_{j,k} =
/// (1/2πi) ∫_Σ ξ^{nj+k} tr[J^k log δ₋⁻¹δ₊] dξ/ξ, so that
/// tr[J^k log δ(z)] ~ -Σ_j z^{-nj-k} c_{j,k}.
pub fn series_coefficient<T: Scalar>(
    system: &RootSystem<T>,
    record: &ScatteringRecord<T>,
    j: u32,
    k: u32,
    pivot_tol: T,
) -> Result<Complex<T>> {
    let n = system.n();
    let count = record.spec.count;
    let s0 = record.spec.r_min.ln();
    let s1 = record.spec.r_max.ln();
    let hs = (s1 - s0) / rl::<T>((count - 1) as f64);
    let weights: Vec<T> = if count % 2 == 1 {
        simpson_weights(count, hs)
    } else {
        let mut w = vec![hs; count];
        w[0] = hs / rl::<T>(2.0);
        w[count - 1] = hs / rl::<T>(2.0);
        w
    };
    let power = (n as u32) * j + k;
    let mut total = Complex::new(T::zero(), T::zero());
    for &ray in &[0usize, 1] {
        let logs = log_diag_ratio(system, record, ray, pivot_tol)?;
        let frame = system.frame_at(&SpectralPoint::Ray(RayPoint {
            ray,
            radius: record.spec.r_max,
        }))?;
        let omega = system.ray_direction(ray);
        let rotations = if n == 2 { 1usize } else { n };
        for rot in 0..rotations {
            let phase = system.alpha_pow(rot as i64);
            for idx in 0..count {
                let point = record.point(ray, idx);
                let xi = omega.scale(point.radius) * phase;
                let mut tr = Complex::new(T::zero(), T::zero());
                for (pos, l) in logs[idx].iter().enumerate() {
                    tr = tr + frame.ordering[pos].powu(k) * *l;
                }
                total = total + tr * xi.powu(power) * Complex::new(weights[idx], T::zero());
            }
        }
    }
    Ok(total / Complex::new(T::zero(), rl::<T>(2.0) * T::PI()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::potential::CoeffSpec;
    use crate::symbol::derive_flow;
    use num_complex::Complex;

    type C = Complex<f64>;

    fn grid() -> Grid<f64> {
        Grid::new(20.0, 0.01)
    }

    fn gaussian(n: usize, amp: f64) -> Potential<f64> {
        let mut coeffs = vec![CoeffSpec::Zero; n - 1];
        coeffs[0] = CoeffSpec::Gaussian {
            amp: C::new(amp, 0.0),
            sigma: 0.7,
            center: 0.0,
        };
        if n >= 3 {
            coeffs[1] = CoeffSpec::Gaussian {
                amp: C::new(amp * 0.5, 0.0),
                sigma: 0.9,
                center: 0.2,
            };
        }
        Potential::new(n, grid(), coeffs, 1e-12).unwrap()
    }

    #[test]
    fn zero_potential_stays_zero() {
        let p = Potential::<f64>::zero(2, grid(), 1e-12);
        let flow = derive_flow(2, 3, None).unwrap();
        let run = evolve(
            &p,
            &flow,
            &EvolveParams {
                t_final: 0.05,
                ..Default::default()
            },
        )
        .unwrap();
        for snap in &run.snapshots {
            for x in [-3.0, 0.0, 2.0] {
                assert_eq!(snap.eval(0, x).norm(), 0.0);
            }
        }
    }

    #[test]
    fn translation_flow_translates() {
        // k = 1: du/dt = u_x, so u(x, t) = u_0(x + t).
        let p = gaussian(2, 0.1);
        let flow = derive_flow(2, 1, None).unwrap();
        let run = evolve(
            &p,
            &flow,
            &EvolveParams {
                t_final: 1.0,
                dt: 2e-3,
                snapshots: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let last = run.snapshots.last().unwrap();
        let mut worst = 0.0f64;
        for x in [-4.0, -1.0, 0.0, 0.7, 3.0] {
            let got = last.eval(0, x);
            let expected = p.eval(0, x + 1.0);
            worst = worst.max((got - expected).norm());
        }
        assert!(worst < 1e-6, "translation error {worst:e}");
    }

    #[test]
    fn kdv_flow_preserves_reality_and_mass() {
        let p = gaussian(2, 0.1);
        let flow = derive_flow(2, 3, None).unwrap();
        let run = evolve(
            &p,
            &flow,
            &EvolveParams {
                t_final: 0.1,
                dt: 1e-3,
                snapshots: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let g = p.grid();
        let w = g.simpson_weights();
        let mass0: C = p
            .samples(0)
            .iter()
            .zip(w.iter())
            .map(|(v, wi)| v * wi)
            .sum();
        let last = run.snapshots.last().unwrap();
        let mass1: C = last
            .samples(0)
            .iter()
            .zip(w.iter())
            .map(|(v, wi)| v * wi)
            .sum();
        assert!(
            (mass0 - mass1).norm() < 1e-8,
            "mass drift {:e}",
            (mass0 - mass1).norm()
        );
        let im_max = last
            .samples(0)
            .iter()
            .map(|v| v.im.abs())
            .fold(0.0f64, f64::max);
        assert!(im_max < 1e-8, "imaginary leakage {im_max:e}");
    }

    #[test]
    fn spectral_law_translation_anchor() {
        let p = gaussian(2, 0.1);
        let flow = derive_flow(2, 1, None).unwrap();
        let run = evolve(
            &p,
            &flow,
            &EvolveParams {
                t_final: 1.0,
                dt: 2e-3,
                snapshots: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let sys = RootSystem::<f64>::new(2).unwrap();
        let spec = RayGridSpec {
            r_min: 0.4,
            r_max: 2.5,
            count: 7,
        };
        let records =
            records_along_run(&run, &sys, &spec, &[0, 1], &SolverParams::default()).unwrap();
        let rep = spectral_evolution_check(&sys, &run, &records, 1e-8).unwrap();
        assert!(
            rep.offdiag_rel < 1e-9,
            "translation phase law {:e}",
            rep.offdiag_rel
        );
        assert!(rep.diag_drift < 1e-9, "diagonal drift {:e}", rep.diag_drift);
    }

    #[test]
    fn hamiltonians_vanish_for_zero_potential() {
        let sys = RootSystem::<f64>::new(2).unwrap();
        let p = Potential::<f64>::zero(2, grid(), 1e-12);
        let spec = RayGridSpec {
            r_min: 0.4,
            r_max: 3.0,
            count: 9,
        };
        let rec = compute_record(
            &p,
            &sys,
            &spec,
            &[0, 1],
            Method::Auto,
            &SolverParams::default(),
        )
        .unwrap();
        let table = hamiltonians(&sys, &rec, &[0, 1, 3], 1e-14).unwrap();
        for v in &table.values {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn partial_fraction_identity_examples() {
        let sys = RootSystem::<f64>::new(3).unwrap();
        // Exact rational point: both sides equal 3/7.
        let xi = C::new(2.0, 0.0);
        let z = C::new(1.0, 0.0);
        let res = partial_fraction_residual(&sys, 1, xi, z);
        assert!(res < 1e-14, "residual {res:e}");
        let mut lhs = C::new(0.0, 0.0);
        for j in 0..3 {
            let aj = sys.alpha_pow(j);
            lhs += sys.alpha_pow(j) / (xi - aj * z);
        }
        assert!((lhs - C::new(3.0 / 7.0, 0.0)).norm() < 1e-14);
        // Random points, several orders.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for n in 2..=5usize {
            let s = RootSystem::<f64>::new(n).unwrap();
            for k in 1..n as u32 {
                for _ in 0..20 {
                    let xi = C::new(2.0 * next() + 2.5, 2.0 * next());
                    let z = C::new(next(), next());
                    if (xi.powu(n as u32) - z.powu(n as u32)).norm() < 1e-3 {
                        continue;
                    }
                    let r = partial_fraction_residual(&s, k, xi, z);
                    assert!(r < 1e-12, "n={n} k={k} residual {r:e}");
                }
            }
        }
    }

    /// Deep logarithmic grid for boundary-value quadratures: the jump data
    /// carries a logarithmic singularity at the origin (when ∫u ≠ 0 the
    /// off-diagonal entries blow up like 1/ξ there), so the grid must reach
    /// far smaller radii than the scattering checks need.
    fn deep_spec() -> RayGridSpec<f64> {
        RayGridSpec {
            r_min: 1e-7,
            r_max: 12.0,
            count: 257,
        }
    }

    #[test]
    fn plemelj_route_matches_direct_route_order2() {
        let sys = RootSystem::<f64>::new(2).unwrap();
        let p = gaussian(2, 0.12);
        let rec = compute_record(
            &p,
            &sys,
            &deep_spec(),
            &[0, 1],
            Method::Auto,
            &SolverParams::default(),
        )
        .unwrap();
        // k = 0 is trivial for order 2 (the trace of log δ vanishes with
        // the determinant); k = 1 carries the content.
        for z in [C::new(0.0, -3.0), C::new(0.0, 3.0), C::new(1.2, -2.6)] {
            let via_jump = plemelj_phi_k(&sys, &rec, 1, z, 1e-14).unwrap();
            let direct = direct_phi_k_order2(&p, &sys, 1, z, &SolverParams::default()).unwrap();
            let err = (via_jump - direct).norm();
            assert!(err < 1e-5, "z={z}: {via_jump} vs {direct} err={err:e}");
        }
    }

    #[test]
    fn series_partial_sums_tail_is_monotone() {
        let sys = RootSystem::<f64>::new(2).unwrap();
        let p = gaussian(2, 0.12);
        let rec = compute_record(
            &p,
            &sys,
            &deep_spec(),
            &[0, 1],
            Method::Auto,
            &SolverParams::default(),
        )
        .unwrap();
        for z in [C::new(0.0, -6.0), C::new(2.0, -5.5), C::new(0.0, 7.0)] {
            let k = 1u32;
            let direct = direct_phi_k_order2(&p, &sys, k, z, &SolverParams::default()).unwrap();
            let mut errs = Vec::new();
            let mut acc = C::new(0.0, 0.0);
            for j in 0..3u32 {
                let c = series_coefficient(&sys, &rec, j, k, 1e-14).unwrap();
                acc -= c * z.powu(2 * j + k).finv();
                errs.push((acc - direct).norm());
            }
            assert!(
                errs[0] > errs[1] && errs[1] > errs[2],
                "z={z}: tail not monotone: {errs:?}"
            );
        }
    }
}
