//! Wave-function solvers and the scattering matrix.
//!
//! The conjugated left wave m(x) = φ e^{-ixξJ} satisfies
//!     m' = iξ(Jm - mJ) + i q_ξ m,      m → I as x → -∞,
//! and the right wave w(x) = e^{ixξJ} ψ satisfies
//!     w' = iξ(Jw - wJ) - i w q_ξ,      w → I as x → +∞,
//! both bounded on the whole line. Entry (j,k) of either system carries the
//! difference frequency ζ = ξ(α_j - α_k); whenever Re(iζ) ≠ 0 the entry has
//! an exponential dichotomy, so plain initial-value integration is unstable
//! for n ≥ 3 on the rays and for sector points generally. The primary solver
//! therefore marches the equivalent integral equation: every entry is
//! integrated from the end where its exponential kernel decays (or is
//! neutral), with a quartic-accuracy oscillatory quadrature, and the whole
//! map is iterated to a fixed point. The bounded solution is its unique
//! fixed point. An adaptive Runge-Kutta integrator covers the order-2 ray
//! case (all entries neutral there) and serves as an independent
//! cross-check.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mat::CMat;
use crate::potential::{GaugedSystem, Potential};
use crate::scalar::{rl, Scalar};
use crate::sector::{RayPoint, RootSystem, SectorFrame, SpectralPoint};
use num_complex::Complex;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Solver tolerances.
#[derive(Debug, Clone)]
pub struct SolverParams<T> {
    pub picard_tol: T,
    pub picard_max_iter: usize,
    pub rk_rtol: T,
    pub rk_atol: T,
}

impl<T: Scalar> Default for SolverParams<T> {
    fn default() -> Self {
        SolverParams {
            picard_tol: rl(1e-13),
            picard_max_iter: 400,
            rk_rtol: rl(1e-11),
            rk_atol: rl(1e-13),
        }
    }
}

/// A solved wave function: matrix samples on the spatial grid.
#[derive(Debug, Clone)]
pub struct WaveFunction<T> {
    pub frame: SectorFrame<T>,
    pub side: Side,
    pub grid: Grid<T>,
    pub samples: Vec<CMat<T>>,
    pub residual: T,
    pub iterations: usize,
}

impl<T: Scalar> WaveFunction<T> {
    pub fn at(&self, i: usize) -> &CMat<T> {
        &self.samples[i]
    }

    pub fn sup_norm(&self) -> T {
        self.samples
            .iter()
            .map(|m| m.max_norm())
            .fold(T::zero(), T::max)
    }

    fn n(&self) -> usize {
        self.frame.n
    }

    /// D^l φ_k at grid node i (left waves): the l-th companion row of
    /// Φ = Λ_ξ m e^{ixξJ} provides derivatives without differencing.
    pub fn d_phi(&self, l: usize, k: usize, i: usize) -> Complex<T> {
        assert_eq!(self.side, Side::Left);
        let n = self.n();
        let xi = self.frame.z;
        let x = self.grid.x(i);
        let m = &self.samples[i];
        let mut acc = Complex::new(T::zero(), T::zero());
        for c in 0..n {
            acc = acc + self.frame.ordering[c].powu(l as u32) * m[(c, k)];
        }
        let phase = (Complex::new(T::zero(), T::one()) * xi * self.frame.ordering[k])
            .scale(x)
            .exp();
        xi.powu(l as u32) * acc * phase
    }

    /// Component Ψ_{j,p} (1-based p) of the adjoint companion row at grid
    /// node i (right waves): Ψ = e^{-ixξJ} w Λ_ξ^{-1}.
    pub fn psi_component(&self, p: usize, j: usize, i: usize) -> Complex<T> {
        assert_eq!(self.side, Side::Right);
        let n = self.n();
        let xi = self.frame.z;
        let x = self.grid.x(i);
        let w = &self.samples[i];
        // (Λ_ξ^{-1})_{c,p} = α_c^{1-p} / (n ξ^{p-1}).
        let denom = xi.powu(p as u32 - 1).scale(rl::<T>(n as f64));
        let mut acc = Complex::new(T::zero(), T::zero());
        for c in 0..n {
            acc = acc + w[(j, c)] * self.frame.ordering[c].powu((n + 1 - p) as u32);
        }
        let phase =
            (-(Complex::new(T::zero(), T::one()) * xi * self.frame.ordering[j]).scale(x)).exp();
        acc / denom * phase
    }

    /// ψ_j at node i (the last adjoint companion component).
    pub fn psi(&self, j: usize, i: usize) -> Complex<T> {
        self.psi_component(self.n(), j, i)
    }

    /// (-D) ψ_j at node i; valid directly from the companion structure
    /// (higher derivatives pick up coefficient terms — see
    /// `bracket::psi_derivatives`).
    pub fn psi_minus_d1(&self, j: usize, i: usize) -> Complex<T> {
        self.psi_component(self.n() - 1, j, i)
    }
}

/// Direction from which an entry's integral is anchored.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Anchor {
    Forward,
    Backward,
}

/// Entry classification: tied entries are neutral and their frequency is
/// projected onto the real axis; untied entries go with the end where the
/// kernel decays. On rays the decision uses the exact mask and the ordering
/// (positions are sorted by descending Re(iξα)), never floating-point signs.
fn classify<T: Scalar>(
    frame: &SectorFrame<T>,
    side: Side,
) -> (Vec<Vec<Complex<T>>>, Vec<Vec<Anchor>>) {
    let n = frame.n;
    let xi = frame.z;
    let mut zeta = vec![vec![Complex::new(T::zero(), T::zero()); n]; n];
    let mut anchor = vec![vec![Anchor::Forward; n]; n];
    for j in 0..n {
        for k in 0..n {
            let mut z = xi * (frame.ordering[j] - frame.ordering[k]);
            let tied = match &frame.mask {
                Some(mask) => mask.keeps(j, k),
                None => j == k,
            };
            if tied {
                z = Complex::new(z.re, T::zero());
                // Neutral: anchored with the normalization end.
                anchor[j][k] = match side {
                    Side::Left => Anchor::Forward,
                    Side::Right => Anchor::Backward,
                };
            } else {
                let grows_forward = match &frame.mask {
                    // Ordering is descending, so position j above k means
                    // the (j,k) mode grows toward +∞.
                    Some(_) => j < k,
                    None => z.im < T::zero(),
                };
                anchor[j][k] = if grows_forward {
                    Anchor::Backward
                } else {
                    Anchor::Forward
                };
            }
            zeta[j][k] = z;
        }
    }
    (zeta, anchor)
}

/// ∫_0^1 e^{w(1-σ)} σ^m dσ for m = 0..3.
fn moments_forward<T: Scalar>(w: Complex<T>) -> [Complex<T>; 4] {
    let mut out = [Complex::new(T::zero(), T::zero()); 4];
    if w.norm() < rl::<T>(0.8) {
        // I_m = m! Σ_q w^q / (m+q+1)!
        for (m, slot) in out.iter_mut().enumerate() {
            let mut term = Complex::new(T::one(), T::zero());
            // q = 0 term: m!/(m+1)!
            let mut fact_ratio = T::one() / rl::<T>((m + 1) as f64);
            let mut acc = Complex::new(fact_ratio, T::zero());
            for q in 1..25 {
                term = term * w;
                fact_ratio = fact_ratio / rl::<T>((m + q + 1) as f64);
                let add = term.scale(fact_ratio);
                acc = acc + add;
                if add.norm() < rl::<T>(1e-20) {
                    break;
                }
            }
            *slot = acc;
        }
    } else {
        out[0] = (w.exp() - Complex::new(T::one(), T::zero())) / w;
        for m in 1..4 {
            out[m] = (out[m - 1].scale(rl::<T>(m as f64)) - Complex::new(T::one(), T::zero())) / w;
        }
    }
    out
}

/// ∫_0^1 e^{-wσ} σ^m dσ for m = 0..3.
fn moments_backward<T: Scalar>(w: Complex<T>) -> [Complex<T>; 4] {
    let mut out = [Complex::new(T::zero(), T::zero()); 4];
    if w.norm() < rl::<T>(0.8) {
        // J_m = Σ_q (-w)^q / (q! (m+q+1))
        for (m, slot) in out.iter_mut().enumerate() {
            let mut term = Complex::new(T::one(), T::zero());
            let mut acc = Complex::new(T::one() / rl::<T>((m + 1) as f64), T::zero());
            let mut factq = T::one();
            for q in 1..25 {
                term = term * (-w);
                factq = factq * rl::<T>(q as f64);
                let add = term.scale(T::one() / (factq * rl::<T>((m + q + 1) as f64)));
                acc = acc + add;
                if add.norm() < rl::<T>(1e-20) {
                    break;
                }
            }
            *slot = acc;
        }
    } else {
        let emw = (-w).exp();
        out[0] = (Complex::new(T::one(), T::zero()) - emw) / w;
        for m in 1..4 {
            out[m] = (out[m - 1].scale(rl::<T>(m as f64)) - emw) / w;
        }
    }
    out
}

/// Coefficients of the cubic Lagrange basis polynomials (in σ) for 4 nodes
/// at the given offsets: returns c[r][m] with L_r(σ) = Σ_m c[r][m] σ^m.
fn lagrange_coeffs(offsets: [f64; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0f64; 4]; 4];
    for r in 0..4 {
        // Product of (σ - o_l)/(o_r - o_l) over l ≠ r.
        let mut poly = [1.0f64, 0.0, 0.0, 0.0];
        let mut deg = 0usize;
        let mut denom = 1.0f64;
        for l in 0..4 {
            if l == r {
                continue;
            }
            denom *= offsets[r] - offsets[l];
            let mut next = [0.0f64; 4];
            for d in 0..=deg {
                next[d + 1] += poly[d];
                next[d] -= offsets[l] * poly[d];
            }
            poly = next;
            deg += 1;
        }
        for m in 0..4 {
            out[r][m] = poly[m] / denom;
        }
    }
    out
}

/// Per-entry quadrature data for the fixed-point march.
struct EntryScheme<T> {
    anchor: Anchor,
    /// Multiplier per cell step: e^{iζh} (forward) or e^{-iζh} (backward).
    step_mul: Complex<T>,
    /// Cell weights for the three stencil variants (first, interior, last).
    weights: [[Complex<T>; 4]; 3],
}

fn build_scheme<T: Scalar>(zeta: Complex<T>, anchor: Anchor, h: T) -> EntryScheme<T> {
    let i_unit = Complex::new(T::zero(), T::one());
    let w = i_unit * zeta.scale(h);
    let stencils = [
        lagrange_coeffs([0.0, 1.0, 2.0, 3.0]),
        lagrange_coeffs([-1.0, 0.0, 1.0, 2.0]),
        lagrange_coeffs([-2.0, -1.0, 0.0, 1.0]),
    ];
    let moments = match anchor {
        Anchor::Forward => moments_forward(w),
        Anchor::Backward => moments_backward(w),
    };
    let mut weights = [[Complex::new(T::zero(), T::zero()); 4]; 3];
    for (s, st) in stencils.iter().enumerate() {
        for r in 0..4 {
            let mut acc = Complex::new(T::zero(), T::zero());
            for m in 0..4 {
                acc = acc + moments[m].scale(rl::<T>(st[r][m]));
            }
            weights[s][r] = acc.scale(h);
        }
    }
    let step_mul = match anchor {
        Anchor::Forward => w.exp(),
        Anchor::Backward => (-w).exp(),
    };
    EntryScheme {
        anchor,
        step_mul,
        weights,
    }
}

/// Fixed-point solver for the bounded wave function on the grid.
fn solve_picard<T: Scalar>(
    potential: &Potential<T>,
    frame: &SectorFrame<T>,
    side: Side,
    params: &SolverParams<T>,
) -> Result<WaveFunction<T>> {
    let n = frame.n;
    let g = potential.grid().clone();
    let len = g.len;
    let h = g.h;
    let gauged = GaugedSystem::new(potential, frame);
    let rows: Vec<Vec<Complex<T>>> = g.points().map(|x| gauged.row_at(x)).collect();
    let col = gauged.col_factor().to_vec();
    let (zeta, anchors) = classify(frame, side);
    let schemes: Vec<Vec<EntryScheme<T>>> = (0..n)
        .map(|j| {
            (0..n)
                .map(|k| build_scheme(zeta[j][k], anchors[j][k], h))
                .collect()
        })
        .collect();
    let zero = Complex::new(T::zero(), T::zero());
    let one = Complex::new(T::one(), T::zero());
    let i_unit = Complex::new(T::zero(), T::one());

    // State: samples[i][(j,k)], initialized to the free solution.
    let mut cur: Vec<CMat<T>> = (0..len).map(|_| CMat::identity(n)).collect();
    let mut residual = T::infinity();
    let mut iterations = 0usize;
    // Forcing values g_{jk}(y): for the left system i·colfac_j·dot_k(y) with
    // dot_k = Σ_c row_c m_{ck}; for the right system -i·dotw_j(y)·row_k with
    // dotw_j = Σ_c w_{jc} colfac_c.
    let mut dots: Vec<Vec<Complex<T>>> = vec![vec![zero; n]; len];
    let mut next: Vec<CMat<T>> = cur.clone();
    while iterations < params.picard_max_iter {
        iterations += 1;
        for (i, d) in dots.iter_mut().enumerate() {
            let m = &cur[i];
            match side {
                Side::Left => {
                    for k in 0..n {
                        let mut acc = zero;
                        for c in 0..n {
                            acc = acc + rows[i][c] * m[(c, k)];
                        }
                        d[k] = acc * i_unit;
                    }
                }
                Side::Right => {
                    for j in 0..n {
                        let mut acc = zero;
                        for c in 0..n {
                            acc = acc + m[(j, c)] * col[c];
                        }
                        d[j] = acc * (-i_unit);
                    }
                }
            }
        }
        // Forcing for entry (j,k) at node i.
        let force = |j: usize, k: usize, i: usize, dots: &Vec<Vec<Complex<T>>>| -> Complex<T> {
            match side {
                Side::Left => col[j] * dots[i][k],
                Side::Right => dots[i][j] * rows[i][k],
            }
        };
        let mut worst = T::zero();
        for j in 0..n {
            for k in 0..n {
                let scheme = &schemes[j][k];
                let base = if j == k { one } else { zero };
                match scheme.anchor {
                    Anchor::Forward => {
                        let mut s = zero;
                        let new0 = base + s;
                        worst = worst.max((new0 - next[0][(j, k)]).norm());
                        next[0][(j, k)] = new0;
                        for i in 0..len - 1 {
                            let stencil = if i == 0 {
                                0usize
                            } else if i + 2 >= len {
                                2
                            } else {
                                1
                            };
                            let b = match stencil {
                                0 => 0,
                                1 => i - 1,
                                _ => len - 4,
                            };
                            let wts = &scheme.weights[stencil];
                            let mut local = zero;
                            for r in 0..4 {
                                local = local + wts[r] * force(j, k, b + r, &dots);
                            }
                            s = scheme.step_mul * s + local;
                            let val = base + s;
                            let d = (val - next[i + 1][(j, k)]).norm();
                            if d > worst {
                                worst = d;
                            }
                            next[i + 1][(j, k)] = val;
                        }
                    }
                    Anchor::Backward => {
                        let mut s = zero;
                        let new_last = base + s;
                        worst = worst.max((new_last - next[len - 1][(j, k)]).norm());
                        next[len - 1][(j, k)] = new_last;
                        for i in (0..len - 1).rev() {
                            let stencil = if i == 0 {
                                0usize
                            } else if i + 2 >= len {
                                2
                            } else {
                                1
                            };
                            let b = match stencil {
                                0 => 0,
                                1 => i - 1,
                                _ => len - 4,
                            };
                            let wts = &scheme.weights[stencil];
                            let mut local = zero;
                            for r in 0..4 {
                                local = local + wts[r] * force(j, k, b + r, &dots);
                            }
                            s = scheme.step_mul * s - local;
                            let val = base + s;
                            let d = (val - next[i][(j, k)]).norm();
                            if d > worst {
                                worst = d;
                            }
                            next[i][(j, k)] = val;
                        }
                    }
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        residual = worst;
        if worst < params.picard_tol {
            break;
        }
    }
    if residual >= params.picard_tol && residual > rl::<T>(1e-10) {
        return Err(Error::SolverNonConvergence {
            point: format!("{:?} (index {})", frame.z, frame.index),
            residual: residual.to_f64_lossy(),
            iterations,
        });
    }
    Ok(WaveFunction {
        frame: frame.clone(),
        side,
        grid: g,
        samples: cur,
        residual,
        iterations,
    })
}

/// Dormand-Prince 5(4) with PI step control on the matrix equation,
/// recording samples at every grid node. Integration runs node to node
/// (splitting at potential breakpoints), adaptively inside each span.
fn solve_rk<T: Scalar>(
    potential: &Potential<T>,
    frame: &SectorFrame<T>,
    side: Side,
    params: &SolverParams<T>,
) -> Result<WaveFunction<T>> {
    let n = frame.n;
    let g = potential.grid().clone();
    let gauged = GaugedSystem::new(potential, frame);
    let xi = frame.z;
    let i_unit = Complex::new(T::zero(), T::one());
    let ord = frame.ordering.clone();
    let rhs = |x: T, y: &CMat<T>, out: &mut CMat<T>| {
        // iξ(Jy - yJ) ± i q_ξ y (left) / ∓ i y q_ξ (right)
        let row = gauged.row_at(x);
        match side {
            Side::Left => gauged.apply_left(&row, y, out),
            Side::Right => gauged.apply_right(&row, y, out),
        }
        for r in 0..n {
            for c in 0..n {
                let comm = xi * (ord[r] - ord[c]) * y[(r, c)];
                let v = match side {
                    Side::Left => out[(r, c)] + comm,
                    Side::Right => -out[(r, c)] + comm,
                };
                out[(r, c)] = v * i_unit;
            }
        }
    };

    // Waypoints in integration order.
    let forward = matches!(side, Side::Left);
    let mut nodes: Vec<T> = g.points().collect();
    if !forward {
        nodes.reverse();
    }
    let breaks = potential.breakpoints();

    let a: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    let c_nodes: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    let b5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    let b4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let mut samples: Vec<CMat<T>> = Vec::with_capacity(nodes.len());
    let mut y = CMat::<T>::identity(n);
    samples.push(y.clone());
    let mut h_try = g.h;
    let mut total_steps = 0usize;
    for span in nodes.windows(2) {
        let (x0, x1) = (span[0], span[1]);
        // Split the span at interior breakpoints.
        let mut cuts: Vec<T> = vec![x0];
        let mut interior: Vec<T> = breaks
            .iter()
            .copied()
            .filter(|&b| (b - x0) * (x1 - b) > T::zero())
            .collect();
        if !forward {
            interior.reverse();
        }
        cuts.extend(interior);
        cuts.push(x1);
        for seg in cuts.windows(2) {
            let (mut x, xe) = (seg[0], seg[1]);
            let dir = if xe > x { T::one() } else { -T::one() };
            while (xe - x) * dir > rl::<T>(1e-14) {
                let mut h = h_try.min((xe - x).abs()).max(rl::<T>(1e-12));
                loop {
                    total_steps += 1;
                    if total_steps > 80_000_000 {
                        return Err(Error::StepSizeUnderflow(x.to_f64_lossy()));
                    }
                    let hs = h * dir;
                    let mut k: Vec<CMat<T>> = Vec::with_capacity(7);
                    let mut tmp = CMat::zeros(n);
                    rhs(x, &y, &mut tmp);
                    k.push(tmp);
                    for stage in 0..6 {
                        let mut ys = y.clone();
                        for (s, ks) in k.iter().enumerate() {
                            let coeff = rl::<T>(a[stage][s]);
                            if coeff != T::zero() {
                                for r in 0..n {
                                    for cc in 0..n {
                                        ys[(r, cc)] = ys[(r, cc)] + ks[(r, cc)].scale(coeff * hs);
                                    }
                                }
                            }
                        }
                        let xs = x + rl::<T>(c_nodes[stage]) * hs;
                        let mut out = CMat::zeros(n);
                        rhs(xs, &ys, &mut out);
                        k.push(out);
                    }
                    // 5th-order solution and embedded error.
                    let mut y5 = y.clone();
                    let mut err = T::zero();
                    for r in 0..n {
                        for cc in 0..n {
                            let mut acc5 = Complex::new(T::zero(), T::zero());
                            let mut acce = Complex::new(T::zero(), T::zero());
                            for s in 0..7 {
                                let ks = k[s][(r, cc)];
                                acc5 = acc5 + ks.scale(rl::<T>(b5[s]));
                                acce = acce + ks.scale(rl::<T>(b5[s] - b4[s]));
                            }
                            y5[(r, cc)] = y5[(r, cc)] + acc5.scale(hs);
                            let scale = params.rk_atol
                                + params.rk_rtol * y[(r, cc)].norm().max(y5[(r, cc)].norm());
                            err = err.max(acce.scale(hs).norm() / scale);
                        }
                    }
                    if err <= T::one() {
                        x = x + hs;
                        y = y5;
                        let grow = rl::<T>(0.9) * err.max(rl::<T>(1e-10)).powf(rl::<T>(-0.2));
                        h_try = h * grow.min(rl::<T>(5.0)).max(rl::<T>(0.2));
                        break;
                    }
                    let shrink = rl::<T>(0.9) * err.powf(rl::<T>(-0.2));
                    h = h * shrink.min(rl::<T>(0.9)).max(rl::<T>(0.1));
                    if h < rl::<T>(1e-13) {
                        return Err(Error::StepSizeUnderflow(x.to_f64_lossy()));
                    }
                }
                h_try = h_try.min((xe - x).abs().max(rl::<T>(1e-12)));
            }
            h_try = h_try.max(rl::<T>(1e-6));
        }
        samples.push(y.clone());
    }
    if !forward {
        samples.reverse();
    }
    Ok(WaveFunction {
        frame: frame.clone(),
        side,
        grid: g,
        samples,
        residual: T::zero(),
        iterations: total_steps,
    })
}

/// Which integrator a solve used (or should use).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Fixed-point integral-equation march (bounded solution, any point).
    Bounded,
    /// Adaptive Runge-Kutta initial-value integration (neutral systems only).
    RungeKutta,
    /// Bounded march except on order-2 rays, where the initial-value
    /// integration is exact in method and faster.
    Auto,
}

fn pick_method<T: Scalar>(frame: &SectorFrame<T>, method: Method) -> Method {
    match method {
        Method::Auto => {
            if frame.n == 2 && frame.mask.is_some() {
                Method::RungeKutta
            } else {
                Method::Bounded
            }
        }
        m => m,
    }
}

pub fn solve_side<T: Scalar>(
    potential: &Potential<T>,
    frame: &SectorFrame<T>,
    side: Side,
    method: Method,
    params: &SolverParams<T>,
) -> Result<WaveFunction<T>> {
    match pick_method(frame, method) {
        Method::RungeKutta => solve_rk(potential, frame, side, params),
        _ => solve_picard(potential, frame, side, params),
    }
}

/// Left-normalized wave m(x) = φ e^{-ixξJ}, m(-X) = I.
pub fn solve_left<T: Scalar>(
    potential: &Potential<T>,
    frame: &SectorFrame<T>,
    params: &SolverParams<T>,
) -> Result<WaveFunction<T>> {
    solve_side(potential, frame, Side::Left, Method::Auto, params)
}

/// Right-normalized wave w(x) = e^{ixξJ} ψ, w(+X) = I.
pub fn solve_right<T: Scalar>(
    potential: &Potential<T>,
    frame: &SectorFrame<T>,
    params: &SolverParams<T>,
) -> Result<WaveFunction<T>> {
    solve_side(potential, frame, Side::Right, Method::Auto, params)
}

/// Scattering diagnostics attached to each spectral point.
#[derive(Debug, Clone)]
pub struct ScatterDiagnostics<T> {
    /// max over evaluation points of ‖ψφ(x) - ψφ(0)‖.
    pub x_dependence: T,
    /// Largest off-pattern entry of the raw product.
    pub leakage: T,
    /// ‖projected(ψφ) - limit-form s‖.
    pub limit_diff: T,
    /// |det a - 1| of the raw product.
    pub det_err: T,
}

/// a(ξ) = ψφ evaluated at the domain center, with consistency checks at
/// off-center points. Returns the raw product and the x-dependence of its
/// tied entries (phase conjugation makes off-pattern roundoff explode
/// exponentially in x, so those entries are diagnosed by the center
/// leakage instead).
pub fn scattering_product<T: Scalar>(
    left: &WaveFunction<T>,
    right: &WaveFunction<T>,
) -> (CMat<T>, T) {
    let g = &left.grid;
    let c = g.center_index();
    let eval = |i: usize| -> CMat<T> {
        let wm = right.samples[i].mul_mat(&left.samples[i]);
        let x = g.x(i);
        let phases: Vec<Complex<T>> = left
            .frame
            .ordering
            .iter()
            .map(|&a| (-(Complex::new(T::zero(), T::one()) * left.frame.z * a).scale(x)).exp())
            .collect();
        wm.phase_conjugate(&phases)
    };
    let project = |m: CMat<T>| -> CMat<T> {
        match &left.frame.mask {
            Some(mask) => mask.project(&m),
            None => m,
        }
    };
    let a0 = eval(c);
    let a0_tied = project(a0.clone());
    let mut xdep = T::zero();
    for frac in [0.25f64, 0.5, 0.75] {
        for sgn in [-1.0f64, 1.0] {
            let i = ((c as f64) + sgn * frac * (c as f64)).round() as usize;
            let ai = project(eval(i.min(g.len - 1)));
            xdep = xdep.max((&ai - &a0_tied).max_norm());
        }
    }
    (a0, xdep)
}

/// The limit form: project e^{-ixξJ} m(x) e^{ixξJ} at the right edge onto
/// the tied pattern. Exact for decayed potentials; an independent pipeline
/// from the product form.
pub fn scattering_via_limit<T: Scalar>(left: &WaveFunction<T>) -> Result<CMat<T>> {
    let mask = left
        .frame
        .mask
        .as_ref()
        .ok_or_else(|| Error::OffContour("limit form needs a ray point".into()))?;
    let g = &left.grid;
    let i = g.len - 1;
    let x = g.x(i);
    let phases: Vec<Complex<T>> = left
        .frame
        .ordering
        .iter()
        .map(|&a| (-(Complex::new(T::zero(), T::one()) * left.frame.z * a).scale(x)).exp())
        .collect();
    Ok(mask.project(&left.samples[i].phase_conjugate(&phases)))
}

/// Full per-point scattering data.
#[derive(Debug, Clone)]
pub struct PointRecord<T> {
    pub ray: usize,
    pub radius: T,
    /// Raw product ψφ at the center.
    pub a_raw: CMat<T>,
    /// Projection onto the tied block pattern; downstream modules use this.
    pub a: CMat<T>,
    pub diagnostics: ScatterDiagnostics<T>,
}

/// Solve both waves at a ray point and assemble the scattering matrix.
pub fn scatter_at<T: Scalar>(
    potential: &Potential<T>,
    system: &RootSystem<T>,
    point: RayPoint<T>,
    method: Method,
    params: &SolverParams<T>,
) -> Result<PointRecord<T>> {
    let frame = system.frame_at(&SpectralPoint::Ray(point))?;
    let left = solve_side(potential, &frame, Side::Left, method, params)?;
    let right = solve_side(potential, &frame, Side::Right, method, params)?;
    let (a_raw, x_dependence) = scattering_product(&left, &right);
    let mask = frame.mask.as_ref().expect("ray frame has a mask");
    let leakage = mask.leakage(&a_raw);
    let a = mask.project(&a_raw);
    let s = scattering_via_limit(&left)?;
    let limit_diff = (&s - &a).max_norm();
    let det_err = (a_raw.det() - Complex::new(T::one(), T::zero())).norm();
    Ok(PointRecord {
        ray: point.ray,
        radius: point.radius,
        a_raw,
        a,
        diagnostics: ScatterDiagnostics {
            x_dependence,
            leakage,
            limit_diff,
            det_err,
        },
    })
}

/// Sector-boundary values for order 2: δ(z) = diag of m(+X), holomorphic in
/// the open sectors. The bounded march keeps the dynamic range tame at any
/// Im z; non-convergence of the fixed point is the practical stability
/// limit.
pub fn delta_of_z<T: Scalar>(
    potential: &Potential<T>,
    system: &RootSystem<T>,
    z: Complex<T>,
    params: &SolverParams<T>,
) -> Result<Vec<Complex<T>>> {
    if potential.n() != 2 {
        return Err(Error::InvalidOrder(potential.n()));
    }
    let frame = system.frame_at(&SpectralPoint::Sector(z))?;
    let left = solve_picard(potential, &frame, Side::Left, params)?;
    let last = &left.samples[left.grid.len - 1];
    Ok((0..2).map(|r| last[(r, r)]).collect())
}

/// Log-spaced radius grid on each ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGridSpec<T> {
    pub r_min: T,
    pub r_max: T,
    pub count: usize,
}

impl<T: Scalar> Default for RayGridSpec<T> {
    fn default() -> Self {
        RayGridSpec {
            r_min: rl(0.3),
            r_max: rl(8.0),
            count: 64,
        }
    }
}

impl<T: Scalar> RayGridSpec<T> {
    pub fn radii(&self) -> Vec<T> {
        let lo = self.r_min.ln();
        let hi = self.r_max.ln();
        (0..self.count)
            .map(|i| {
                let t = if self.count == 1 {
                    T::zero()
                } else {
                    rl::<T>(i as f64) / rl::<T>((self.count - 1) as f64)
                };
                (lo + (hi - lo) * t).exp()
            })
            .collect()
    }
}

/// Scattering data over the fundamental ray pair (plus any extra rays).
#[derive(Debug, Clone)]
pub struct ScatteringRecord<T> {
    pub n: usize,
    pub spec: RayGridSpec<T>,
    pub rays: Vec<usize>,
    pub points: Vec<PointRecord<T>>,
    pub potential_hash: u64,
}

/// Compute the record over the given rays, in parallel over spectral points,
/// merged back in deterministic grid order.
pub fn compute_record<T: Scalar>(
    potential: &Potential<T>,
    system: &RootSystem<T>,
    spec: &RayGridSpec<T>,
    rays: &[usize],
    method: Method,
    params: &SolverParams<T>,
) -> Result<ScatteringRecord<T>> {
    let radii = spec.radii();
    let tasks: Vec<(usize, T)> = rays
        .iter()
        .flat_map(|&ray| radii.iter().map(move |&r| (ray, r)))
        .collect();
    let points: Result<Vec<PointRecord<T>>> = tasks
        .par_iter()
        .map(|&(ray, radius)| {
            scatter_at(potential, system, RayPoint { ray, radius }, method, params)
        })
        .collect();
    Ok(ScatteringRecord {
        n: potential.n(),
        spec: spec.clone(),
        rays: rays.to_vec(),
        points: points?,
        potential_hash: potential.content_hash(),
    })
}

impl<T: Scalar> ScatteringRecord<T> {
    pub fn point(&self, ray: usize, idx: usize) -> &PointRecord<T> {
        let per_ray = self.spec.count;
        let ray_pos = self
            .rays
            .iter()
            .position(|&r| r == ray)
            .expect("ray present");
        &self.points[ray_pos * per_ray + idx]
    }

    pub fn worst_diagnostics(&self) -> ScatterDiagnostics<T> {
        let mut d = ScatterDiagnostics {
            x_dependence: T::zero(),
            leakage: T::zero(),
            limit_diff: T::zero(),
            det_err: T::zero(),
        };
        for p in &self.points {
            d.x_dependence = d.x_dependence.max(p.diagnostics.x_dependence);
            d.leakage = d.leakage.max(p.diagnostics.leakage);
            d.limit_diff = d.limit_diff.max(p.diagnostics.limit_diff);
            d.det_err = d.det_err.max(p.diagnostics.det_err);
        }
        d
    }
}

impl ScatteringRecord<f64> {
    /// CSV: one row per ξ — ray index, radius, n² projected entries as
    /// re,im. Uses shortest round-trip float formatting, so writing and
    /// re-reading is bit exact.
    pub fn to_csv(&self) -> String {
        let n = self.n;
        let mut out = String::new();
        out.push_str("ray,radius");
        for r in 0..n {
            for c in 0..n {
                out.push_str(&format!(",re_a{}{},im_a{}{}", r + 1, c + 1, r + 1, c + 1));
            }
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{},{}", p.ray, p.radius));
            for r in 0..n {
                for c in 0..n {
                    let v = p.a[(r, c)];
                    out.push_str(&format!(",{},{}", v.re, v.im));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, n: usize) -> Result<Vec<(usize, f64, CMat<f64>)>> {
        let mut out = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + 2 * n * n {
                return Err(Error::Parse(format!("row {ln}: wrong field count")));
            }
            let ray: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("row {ln}: bad ray")))?;
            let radius: f64 = fields[1]
                .parse()
                .map_err(|_| Error::Parse(format!("row {ln}: bad radius")))?;
            let mut a = CMat::zeros(n);
            for r in 0..n {
                for c in 0..n {
                    let base = 2 + 2 * (r * n + c);
                    let re: f64 = fields[base]
                        .parse()
                        .map_err(|_| Error::Parse(format!("row {ln}: bad entry")))?;
                    let im: f64 = fields[base + 1]
                        .parse()
                        .map_err(|_| Error::Parse(format!("row {ln}: bad entry")))?;
                    a[(r, c)] = Complex::new(re, im);
                }
            }
            out.push((ray, radius, a));
        }
        Ok(out)
    }
}

/// Grönwall-type bound for neutral (purely Volterra) systems:
/// sup‖m‖ ≤ exp(∫‖q_ξ‖ dy) in the row-sum norm.
pub fn volterra_bound<T: Scalar>(potential: &Potential<T>, frame: &SectorFrame<T>) -> T {
    let gauged = GaugedSystem::new(potential, frame);
    let g = potential.grid();
    let mut acc = T::zero();
    let mut prev: Option<T> = None;
    for x in g.points() {
        let v = gauged.q_gauged(x).row_sum_norm();
        if let Some(p) = prev {
            acc = acc + (p + v) * g.h / rl::<T>(2.0);
        }
        prev = Some(v);
    }
    acc.exp()
}

pub use crate::sector::SpectralPoint as Point;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::potential::CoeffSpec;
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
                center: 0.3,
            };
        }
        Potential::new(n, grid(), coeffs, 1e-12).unwrap()
    }

    fn params() -> SolverParams<f64> {
        SolverParams::default()
    }

    #[test]
    fn zero_potential_waves_are_identity() {
        for n in [2usize, 3, 4] {
            let sys = RootSystem::<f64>::new(n).unwrap();
            let p = Potential::<f64>::zero(n, grid(), 1e-12);
            let frame = sys
                .frame_at(&SpectralPoint::Ray(RayPoint {
                    ray: 0,
                    radius: 1.1,
                }))
                .unwrap();
            let left = solve_left(&p, &frame, &params()).unwrap();
            let right = solve_right(&p, &frame, &params()).unwrap();
            assert!(left
                .samples
                .iter()
                .all(|m| (m - &CMat::identity(n)).max_norm() < 1e-14));
            assert!(right
                .samples
                .iter()
                .all(|m| (m - &CMat::identity(n)).max_norm() < 1e-14));
        }
    }

    /// Closed-form plane-wave-matching oracle for the order-2 barrier:
    /// transfer matrix across the interfaces, in the (e^{iξx}, e^{-iξx})
    /// basis. Independent of any ODE machinery.
    fn square_well_oracle(amp: f64, width: f64, xi: C) -> CMat<f64> {
        let half = width / 2.0;
        let k = xi;
        let kappa = (xi * xi - C::new(amp, 0.0)).sqrt();
        // Interface matrix from basis with wavenumber p to basis with
        // wavenumber q at position x: coefficients (A, B) of
        // A e^{ipx} + B e^{-ipx} map to matching value and derivative.
        let interface = |p: C, q: C, x: f64| -> CMat<f64> {
            // M = W_q(x)^{-1} W_p(x) with W_p(x) = [[e^{ipx}, e^{-ipx}],
            // [ip e^{ipx}, -ip e^{-ipx}]].
            let e_p = (C::i() * p * x).exp();
            let e_q = (C::i() * q * x).exp();
            let mut m = CMat::<f64>::zeros(2);
            let two_q = q * 2.0;
            m[(0, 0)] = (q + p) / two_q * e_p / e_q;
            m[(0, 1)] = (q - p) / two_q / (e_p * e_q);
            m[(1, 0)] = (q - p) / two_q * e_p * e_q;
            m[(1, 1)] = (q + p) / two_q * e_q / e_p;
            m
        };
        let m1 = interface(k, kappa, -half);
        let m2 = interface(kappa, k, half);
        m2.mul_mat(&m1)
    }

    #[test]
    fn order2_square_well_matches_oracle() {
        let width = 2.0;
        let amp = 0.35;
        let p = Potential::new(
            2,
            grid(),
            vec![CoeffSpec::SquareWell {
                amp: C::new(amp, 0.0),
                width,
            }],
            1e-12,
        )
        .unwrap();
        p.check_no_bound_state().unwrap();
        let sys = RootSystem::<f64>::new(2).unwrap();
        for radius in [0.4, 1.0, 2.7, 6.0] {
            let rec = scatter_at(
                &p,
                &sys,
                RayPoint { ray: 0, radius },
                Method::Auto,
                &params(),
            )
            .unwrap();
            let oracle = square_well_oracle(amp, width, C::new(radius, 0.0));
            let err = (&rec.a - &oracle).max_norm();
            assert!(err < 1e-6, "radius={radius} err={err:e}");
        }
    }

    #[test]
    fn bounded_and_rk_agree_on_order2_rays() {
        let p = gaussian(2, 0.12);
        let sys = RootSystem::<f64>::new(2).unwrap();
        let frame = sys
            .frame_at(&SpectralPoint::Ray(RayPoint {
                ray: 0,
                radius: 1.7,
            }))
            .unwrap();
        let a = solve_side(&p, &frame, Side::Left, Method::Bounded, &params()).unwrap();
        let b = solve_side(&p, &frame, Side::Left, Method::RungeKutta, &params()).unwrap();
        let last = a.grid.len - 1;
        let err = (a.at(last) - b.at(last)).max_norm();
        assert!(err < 5e-9, "err={err:e}");
        let aw = solve_side(&p, &frame, Side::Right, Method::Bounded, &params()).unwrap();
        let bw = solve_side(&p, &frame, Side::Right, Method::RungeKutta, &params()).unwrap();
        let err_w = (aw.at(0) - bw.at(0)).max_norm();
        assert!(err_w < 5e-9, "err_w={err_w:e}");
    }

    #[test]
    fn scattering_structure_order3() {
        let p = gaussian(3, 0.08);
        let sys = RootSystem::<f64>::new(3).unwrap();
        for ray in [0usize, 1] {
            for radius in [0.5, 1.3, 3.0] {
                let rec = scatter_at(&p, &sys, RayPoint { ray, radius }, Method::Auto, &params())
                    .unwrap();
                let d = &rec.diagnostics;
                assert!(
                    d.x_dependence < 1e-8,
                    "xdep {:e} at ray {ray} r {radius}",
                    d.x_dependence
                );
                assert!(
                    d.leakage < 1e-8,
                    "leakage {:e} at ray {ray} r {radius}",
                    d.leakage
                );
                assert!(d.limit_diff < 1e-8, "limit {:e}", d.limit_diff);
                assert!(d.det_err < 1e-9, "det {:e}", d.det_err);
            }
        }
    }

    #[test]
    fn rotation_invariance_order3() {
        let p = gaussian(3, 0.08);
        let sys = RootSystem::<f64>::new(3).unwrap();
        for (ray, radius) in [(0usize, 0.8), (1, 1.9)] {
            let a =
                scatter_at(&p, &sys, RayPoint { ray, radius }, Method::Auto, &params()).unwrap();
            let b = scatter_at(
                &p,
                &sys,
                RayPoint {
                    ray: ray + 2,
                    radius,
                },
                Method::Auto,
                &params(),
            )
            .unwrap();
            let err = (&a.a - &b.a).max_norm();
            assert!(err < 1e-9, "ray={ray} err={err:e}");
        }
    }

    #[test]
    fn volterra_bound_holds_on_order2() {
        let p = gaussian(2, 0.3);
        let sys = RootSystem::<f64>::new(2).unwrap();
        let frame = sys
            .frame_at(&SpectralPoint::Ray(RayPoint {
                ray: 0,
                radius: 0.6,
            }))
            .unwrap();
        let left = solve_left(&p, &frame, &params()).unwrap();
        let bound = volterra_bound(&p, &frame);
        assert!(left.sup_norm() <= bound, "{} vs {}", left.sup_norm(), bound);
    }

    #[test]
    fn delta_of_z_zero_potential() {
        let p = Potential::<f64>::zero(2, grid(), 1e-12);
        let sys = RootSystem::<f64>::new(2).unwrap();
        let d = delta_of_z(&p, &sys, C::new(0.4, -1.2), &params()).unwrap();
        assert!((d[0] - C::new(1.0, 0.0)).norm() < 1e-13);
        assert!((d[1] - C::new(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn delta_matches_analytic_continuation_of_oracle() {
        // δ_1(z) continues a_11 off the axis; compare with the closed-form
        // transfer matrix evaluated at complex wavenumber.
        let width = 2.0;
        let amp = 0.3;
        let p = Potential::new(
            2,
            grid(),
            vec![CoeffSpec::SquareWell {
                amp: C::new(amp, 0.0),
                width,
            }],
            1e-12,
        )
        .unwrap();
        let sys = RootSystem::<f64>::new(2).unwrap();
        // The march loses a few digits in the two cells straddling the
        // discontinuity; smooth potentials reach ~1e-10.
        for z in [C::new(1.0, -0.4), C::new(0.0, -3.0), C::new(-0.7, -1.1)] {
            let d = delta_of_z(&p, &sys, z, &params()).unwrap();
            let oracle = square_well_oracle(amp, width, z);
            let err = (d[0] - oracle[(0, 0)]).norm();
            assert!(err < 2e-6, "z={z} err={err:e}");
        }
    }

    #[test]
    fn single_precision_instantiation_works() {
        // The solvers are generic over the scalar; f32 needs tolerances
        // above its precision floor.
        let g32 = Grid::<f32>::new(20.0, 0.02);
        let p = Potential::<f32>::new(
            2,
            g32,
            vec![CoeffSpec::Gaussian {
                amp: Complex::new(0.1f32, 0.0),
                sigma: 0.7,
                center: 0.0,
            }],
            1e-6,
        )
        .unwrap();
        let sys = RootSystem::<f32>::new(2).unwrap();
        let params = SolverParams::<f32> {
            picard_tol: 1e-6,
            picard_max_iter: 200,
            rk_rtol: 1e-6,
            rk_atol: 1e-7,
        };
        let rec = scatter_at(
            &p,
            &sys,
            RayPoint {
                ray: 0,
                radius: 1.0f32,
            },
            Method::Bounded,
            &params,
        );
        match rec {
            Ok(r) => {
                assert!((r.a_raw.det() - Complex::new(1.0f32, 0.0)).norm() < 1e-4);
            }
            Err(e) => panic!("f32 solve failed: {e}"),
        }
    }

    #[test]
    fn record_csv_round_trip_is_bit_exact() {
        let p = gaussian(2, 0.1);
        let sys = RootSystem::<f64>::new(2).unwrap();
        let spec = RayGridSpec {
            r_min: 0.4,
            r_max: 3.0,
            count: 5,
        };
        let rec = compute_record(&p, &sys, &spec, &[0, 1], Method::Auto, &params()).unwrap();
        let csv = rec.to_csv();
        let rows = ScatteringRecord::from_csv(&csv, 2).unwrap();
        assert_eq!(rows.len(), rec.points.len());
        for (row, p) in rows.iter().zip(rec.points.iter()) {
            assert_eq!(row.0, p.ray);
            assert_eq!(row.1, p.radius);
            for r in 0..2 {
                for c in 0..2 {
                    assert_eq!(row.2[(r, c)], p.a[(r, c)], "bit-exact round trip");
                }
            }
        }
    }
}
