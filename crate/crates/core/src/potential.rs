//! Operator coefficients u_0 … u_{n-2}, the companion first-order system,
//! the gauge transform to sector frames, and built-in test potentials.
//!
//! The leading conventions u_n = 1 and u_{n-1} = 0 are implicit and never
//! stored. Coefficients are complex-valued in general; reality is a property
//! of particular inputs, not of the data model.

use crate::error::{Error, Result};
use crate::grid::{self, Grid};
use crate::mat::CMat;
use crate::scalar::{rl, Scalar};
use crate::sector::SectorFrame;
use num_complex::Complex;

/// One coefficient function: analytic built-in or grid samples.
#[derive(Debug, Clone)]
pub enum CoeffSpec<T> {
    Zero,
    Gaussian {
        amp: Complex<T>,
        sigma: T,
        center: T,
    },
    /// amp · sech²((x - center)/scale)
    Sech2 {
        amp: Complex<T>,
        scale: T,
        center: T,
    },
    /// amp on (-width/2, width/2), zero outside; edge samples take the
    /// half value. Discontinuous: solvers split integration at the edges.
    SquareWell {
        amp: Complex<T>,
        width: T,
    },
    /// Samples on the owning potential's grid.
    Samples(Vec<Complex<T>>),
}

impl<T: Scalar> CoeffSpec<T> {
    fn eval(&self, g: &Grid<T>, x: T) -> Complex<T> {
        match self {
            CoeffSpec::Zero => Complex::new(T::zero(), T::zero()),
            CoeffSpec::Gaussian { amp, sigma, center } => {
                let t = (x - *center) / *sigma;
                amp.scale((-t * t / rl::<T>(2.0)).exp())
            }
            CoeffSpec::Sech2 { amp, scale, center } => {
                let t = (x - *center) / *scale;
                let c = t.cosh();
                amp.scale(T::one() / (c * c))
            }
            CoeffSpec::SquareWell { amp, width } => {
                let half = *width / rl::<T>(2.0);
                if x.abs() < half {
                    *amp
                } else if x.abs() == half {
                    amp.scale(rl::<T>(0.5))
                } else {
                    Complex::new(T::zero(), T::zero())
                }
            }
            CoeffSpec::Samples(v) => {
                // Cubic Lagrange interpolation on the four nearest nodes.
                let pos = (x + g.x_max) / g.h;
                let i = pos.floor().to_f64_lossy().max(0.0).min((g.len - 1) as f64) as usize;
                let i0 = i.saturating_sub(1).min(g.len - 4);
                let s = (pos - rl::<T>(i0 as f64)).to_f64_lossy();
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..4usize {
                    let mut w = 1.0f64;
                    for l in 0..4usize {
                        if l != k {
                            w *= (s - l as f64) / (k as f64 - l as f64);
                        }
                    }
                    acc = acc + v[i0 + k].scale(rl::<T>(w));
                }
                acc
            }
        }
    }

    /// m-th x-derivative; analytic for the smooth built-ins.
    fn eval_deriv(&self, g: &Grid<T>, x: T, m: usize) -> Complex<T> {
        if m == 0 {
            return self.eval(g, x);
        }
        match self {
            CoeffSpec::Zero => Complex::new(T::zero(), T::zero()),
            CoeffSpec::SquareWell { .. } => Complex::new(T::zero(), T::zero()),
            CoeffSpec::Gaussian {
                amp: _,
                sigma,
                center,
            } => {
                // u^(m) = p_m(t)/σ^m · u with t = (x-c)/σ,
                // p_{m+1} = p_m' - t p_m.
                let t = (x - *center) / *sigma;
                let mut p = vec![0.0f64; m + 1];
                p[0] = 1.0;
                for _ in 0..m {
                    let mut q = vec![0.0f64; p.len() + 1];
                    for (d, &c) in p.iter().enumerate() {
                        if d > 0 {
                            q[d - 1] += c * d as f64;
                        }
                        q[d + 1] -= c;
                    }
                    p = q;
                }
                let tval = t.to_f64_lossy();
                let mut pv = 0.0f64;
                for &c in p.iter().rev() {
                    pv = pv * tval + c;
                }
                let u = self.eval(g, x);
                u.scale(rl::<T>(pv) / sigma.powi(m as i32))
            }
            CoeffSpec::Sech2 {
                amp: _,
                scale,
                center,
            } => {
                // Polynomial in t = tanh((x-c)/w): d/dx q(t) = q'(t)(1-t²)/w.
                let t = ((x - *center) / *scale).tanh().to_f64_lossy();
                let mut q = vec![1.0f64, 0.0, -1.0]; // 1 - t²
                for _ in 0..m {
                    let mut dq = vec![0.0f64; q.len() + 1];
                    for (d, &c) in q.iter().enumerate() {
                        if d > 0 {
                            // q'(t)·(1 - t²)
                            dq[d - 1] += c * d as f64;
                            dq[d + 1] -= c * d as f64;
                        }
                    }
                    q = dq;
                }
                let mut val = 0.0f64;
                for &c in q.iter().rev() {
                    val = val * t + c;
                }
                let amp = match self {
                    CoeffSpec::Sech2 { amp, .. } => *amp,
                    _ => unreachable!(),
                };
                amp.scale(rl::<T>(val) / scale.powi(m as i32))
            }
            CoeffSpec::Samples(_) => {
                // Finite differences on the grid, then interpolation.
                let samples = self.sample_grid(g);
                let d = grid::derivative_n(&samples, g.h, m);
                CoeffSpec::Samples(d).eval(g, x)
            }
        }
    }

    fn sample_grid(&self, g: &Grid<T>) -> Vec<Complex<T>> {
        match self {
            CoeffSpec::Samples(v) => v.clone(),
            _ => g.points().map(|x| self.eval(g, x)).collect(),
        }
    }

    fn breakpoints(&self) -> Vec<T> {
        match self {
            CoeffSpec::SquareWell { width, .. } => {
                let half = *width / rl::<T>(2.0);
                vec![-half, half]
            }
            _ => Vec::new(),
        }
    }
}

/// The operator data: order n and coefficients u_0 … u_{n-2} on [-X, X].
#[derive(Debug, Clone)]
pub struct Potential<T> {
    n: usize,
    grid: Grid<T>,
    coeffs: Vec<CoeffSpec<T>>,
    decay_tol: T,
}

impl<T: Scalar> Potential<T> {
    pub fn new(n: usize, grid: Grid<T>, coeffs: Vec<CoeffSpec<T>>, decay_tol: T) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidOrder(n));
        }
        assert_eq!(
            coeffs.len(),
            n - 1,
            "need exactly n-1 coefficients u_0..u_{{n-2}}"
        );
        let p = Potential {
            n,
            grid,
            coeffs,
            decay_tol,
        };
        p.check_decay()?;
        Ok(p)
    }

    pub fn zero(n: usize, grid: Grid<T>, decay_tol: T) -> Self {
        Potential {
            n,
            coeffs: vec![CoeffSpec::Zero; n - 1],
            grid,
            decay_tol,
        }
    }

    fn check_decay(&self) -> Result<()> {
        for (j, c) in self.coeffs.iter().enumerate() {
            for sign in [-T::one(), T::one()] {
                let x = sign * self.grid.x_max;
                let v = c.eval(&self.grid, x).norm();
                if v >= self.decay_tol {
                    return Err(Error::DecayViolation {
                        index: j,
                        x: x.to_f64_lossy(),
                        value: v.to_f64_lossy(),
                        tol: self.decay_tol.to_f64_lossy(),
                    });
                }
            }
        }
        Ok(())
    }

    /// No-bound-state guard for order 2 with real coefficients: a pointwise
    /// nonnegative potential has no negative spectrum. Complex or higher-n
    /// inputs are accepted as-is (the small-amplitude regime is documented,
    /// not checked).
    pub fn check_no_bound_state(&self) -> Result<()> {
        if self.n != 2 {
            return Ok(());
        }
        let all_real = self
            .grid
            .points()
            .all(|x| self.eval(0, x).im.abs() < rl::<T>(1e-14));
        if !all_real {
            return Ok(());
        }
        let min = self
            .grid
            .points()
            .map(|x| self.eval(0, x).re)
            .fold(T::infinity(), T::min);
        if min < -rl::<T>(1e-12) {
            return Err(Error::Config(format!(
                "order-2 real potential dips to {:e}; an attractive region on the line binds a state, violating the no-discrete-data regime",
                min.to_f64_lossy()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn decay_tol(&self) -> T {
        self.decay_tol
    }

    /// u_j(x) for j ≤ n-2 (u_{n-1} and u_n are implicit).
    pub fn eval(&self, j: usize, x: T) -> Complex<T> {
        self.coeffs[j].eval(&self.grid, x)
    }

    /// m-th x-derivative of u_j at x.
    pub fn eval_deriv(&self, j: usize, x: T, m: usize) -> Complex<T> {
        self.coeffs[j].eval_deriv(&self.grid, x, m)
    }

    /// Samples of u_j on the grid.
    pub fn samples(&self, j: usize) -> Vec<Complex<T>> {
        self.coeffs[j].sample_grid(&self.grid)
    }

    /// Samples of the m-th derivative of u_j on the grid.
    pub fn deriv_samples(&self, j: usize, m: usize) -> Vec<Complex<T>> {
        match &self.coeffs[j] {
            CoeffSpec::Samples(v) => grid::derivative_n(v, self.grid.h, m),
            _ => self
                .grid
                .points()
                .map(|x| self.eval_deriv(j, x, m))
                .collect(),
        }
    }

    /// Discontinuity locations (integration breakpoints).
    pub fn breakpoints(&self) -> Vec<T> {
        let mut out: Vec<T> = self.coeffs.iter().flat_map(|c| c.breakpoints()).collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| (*a - *b).abs() < rl::<T>(1e-14));
        out
    }

    /// Replace coefficients with grid samples (used by the evolver).
    pub fn resample(&self, new_samples: Vec<Vec<Complex<T>>>) -> Potential<T> {
        Potential {
            n: self.n,
            grid: self.grid.clone(),
            coeffs: new_samples.into_iter().map(CoeffSpec::Samples).collect(),
            decay_tol: self.decay_tol,
        }
    }

    /// Perturb coefficient j by ε·bump (used by gradient checks).
    pub fn perturb(&self, j: usize, eps: Complex<T>, bump: &[Complex<T>]) -> Potential<T> {
        let mut samples: Vec<Vec<Complex<T>>> = (0..self.n - 1).map(|i| self.samples(i)).collect();
        for (s, b) in samples[j].iter_mut().zip(bump.iter()) {
            *s = *s + eps * *b;
        }
        self.resample(samples)
    }

    /// FNV-1a hash of the sampled data, for manifests.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(&(self.n as u64).to_le_bytes());
        eat(&self.grid.x_max.to_f64_lossy().to_le_bytes());
        eat(&self.grid.h.to_f64_lossy().to_le_bytes());
        for j in 0..self.n - 1 {
            for v in self.samples(j) {
                eat(&v.re.to_f64_lossy().to_le_bytes());
                eat(&v.im.to_f64_lossy().to_le_bytes());
            }
        }
        h
    }

    /// Formal-adjoint comparison: expands Σ_j (-D)^j ∘ conj(u_j)· by
    /// Leibniz into Σ_m v_m D^m and returns sup-norm residuals
    /// ‖v_m - u_m‖_∞ for m = 0..n. Self-adjoint iff all residuals vanish.
    pub fn self_adjoint_residuals(&self) -> Vec<T> {
        let n = self.n;
        let g = &self.grid;
        let u = |j: usize, x: T| -> Complex<T> {
            if j == n {
                Complex::new(T::one(), T::zero())
            } else if j == n - 1 {
                Complex::new(T::zero(), T::zero())
            } else {
                self.eval(j, x)
            }
        };
        // D^p f = (-i)^p ∂^p f.
        let d_pow = |j: usize, x: T, p: usize| -> Complex<T> {
            let base = if j >= n - 1 {
                Complex::new(T::zero(), T::zero()) // constants: derivative 0
            } else {
                self.eval_deriv(j, x, p).conj()
            };
            let minus_i = Complex::new(T::zero(), -T::one());
            let mut factor = Complex::new(T::one(), T::zero());
            for _ in 0..p {
                factor = factor * minus_i;
            }
            if p == 0 {
                if j >= n - 1 {
                    u(j, x).conj()
                } else {
                    self.eval(j, x).conj()
                }
            } else {
                base * factor
            }
        };
        let mut residuals = vec![T::zero(); n + 1];
        for (m, res) in residuals.iter_mut().enumerate() {
            let mut worst = T::zero();
            for x in g.points() {
                let mut v = Complex::new(T::zero(), T::zero());
                for j in m..=n {
                    let sign = if j % 2 == 0 { T::one() } else { -T::one() };
                    let binom = binomial(j, m);
                    let term = d_pow(j, x, j - m).scale(sign * rl::<T>(binom));
                    v = v + term;
                }
                let target = u(m, x);
                worst = worst.max((v - target).norm());
            }
            *res = worst;
        }
        residuals
    }

    /// Self-adjointness verdict with the per-coefficient residuals.
    pub fn is_self_adjoint(&self, tol: T) -> (bool, Vec<T>) {
        let res = self.self_adjoint_residuals();
        let ok = res.iter().all(|r| *r < tol);
        (ok, res)
    }

    /// Derivative of conj(u_j)·... — the conjugation of the x-derivative of
    /// the conjugate equals the derivative of the function; exposed for the
    /// bracket engine, which needs plain derivatives of the coefficients.
    pub fn coeff_count(&self) -> usize {
        self.n - 1
    }
}

impl Potential<f64> {
    /// Plain-text CSV: a header carrying (n, x_max, h), a column-name row,
    /// then one row per grid point with complex entries as re,im pairs.
    /// Shortest round-trip float formatting makes write/read bit exact.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,x_max,h\n");
        out.push_str(&format!("{},{},{}\n", self.n, self.grid.x_max, self.grid.h));
        out.push('x');
        for j in 0..self.n - 1 {
            out.push_str(&format!(",re_u{j},im_u{j}"));
        }
        out.push('\n');
        let samples: Vec<Vec<Complex<f64>>> = (0..self.n - 1).map(|j| self.samples(j)).collect();
        for (i, x) in self.grid.points().enumerate() {
            out.push_str(&format!("{x}"));
            for s in &samples {
                out.push_str(&format!(",{},{}", s[i].re, s[i].im));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, decay_tol: f64) -> Result<Potential<f64>> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty potential file".into()))?;
        if header.trim() != "n,x_max,h" {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        let meta = lines
            .next()
            .ok_or_else(|| Error::Parse("missing metadata row".into()))?;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse("metadata row needs n,x_max,h".into()));
        }
        let n: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse("bad n".into()))?;
        let x_max: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Parse("bad x_max".into()))?;
        let h: f64 = fields[2]
            .parse()
            .map_err(|_| Error::Parse("bad h".into()))?;
        let _columns = lines
            .next()
            .ok_or_else(|| Error::Parse("missing column row".into()))?;
        let grid = Grid::new(x_max, h);
        let mut samples: Vec<Vec<Complex<f64>>> = vec![Vec::with_capacity(grid.len); n - 1];
        for (row_idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 1 + 2 * (n - 1) {
                return Err(Error::Parse(format!("row {row_idx}: wrong column count")));
            }
            for j in 0..n - 1 {
                let re: f64 = cols[1 + 2 * j]
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {row_idx}: bad value")))?;
                let im: f64 = cols[2 + 2 * j]
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {row_idx}: bad value")))?;
                samples[j].push(Complex::new(re, im));
            }
        }
        for s in &samples {
            if s.len() != grid.len {
                return Err(Error::Parse(format!(
                    "sample count {} does not match the grid ({} points)",
                    s.len(),
                    grid.len
                )));
            }
        }
        Potential::new(
            n,
            grid,
            samples.into_iter().map(CoeffSpec::Samples).collect(),
            decay_tol,
        )
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut v = 1.0f64;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// The companion first-order system at spectral point z: the companion
/// matrix J_z plus the single-row coefficient matrix q(x).
pub struct CompanionSystem<'a, T> {
    pub potential: &'a Potential<T>,
    pub z: Complex<T>,
}

impl<'a, T: Scalar> CompanionSystem<'a, T> {
    pub fn new(potential: &'a Potential<T>, z: Complex<T>) -> Result<Self> {
        if z.norm() == T::zero() {
            return Err(Error::ZeroSpectralPoint);
        }
        Ok(CompanionSystem { potential, z })
    }

    /// Companion matrix with superdiagonal ones and z^n in the corner.
    pub fn j_z(&self) -> CMat<T> {
        let n = self.potential.n;
        let mut m = CMat::zeros(n);
        for r in 0..n - 1 {
            m[(r, r + 1)] = Complex::new(T::one(), T::zero());
        }
        m[(n - 1, 0)] = self.z.powu(n as u32);
        m
    }

    /// q(x): only the last row is populated, by -u_0 … -u_{n-2}, 0.
    pub fn q_matrix(&self, x: T) -> CMat<T> {
        let n = self.potential.n;
        let mut m = CMat::zeros(n);
        for l in 0..n - 1 {
            m[(n - 1, l)] = -self.potential.eval(l, x);
        }
        m
    }
}

/// The gauge-transformed system q_ξ = Λ_z^{-1} q Λ_z at a frame. The matrix
/// is rank one: (q_ξ)_{rc} = -(α_r / (n z^{n-1})) · Σ_l u_l(x) (z α_c)^l,
/// which the wave solvers exploit.
pub struct GaugedSystem<'a, T> {
    pub potential: &'a Potential<T>,
    pub frame: &'a SectorFrame<T>,
    /// -α_r / (n z^{n-1}) per row.
    col_factor: Vec<Complex<T>>,
    /// (z α_c)^l per column and coefficient index.
    powers: Vec<Vec<Complex<T>>>,
}

impl<'a, T: Scalar> GaugedSystem<'a, T> {
    pub fn new(potential: &'a Potential<T>, frame: &'a SectorFrame<T>) -> Self {
        let n = potential.n;
        let z = frame.z;
        let denom = z.powu(n as u32 - 1).scale(rl::<T>(n as f64));
        let col_factor: Vec<Complex<T>> = frame.ordering.iter().map(|&a| -a / denom).collect();
        let powers: Vec<Vec<Complex<T>>> = frame
            .ordering
            .iter()
            .map(|&a| {
                let za = z * a;
                let mut pows = Vec::with_capacity(n - 1);
                let mut p = Complex::new(T::one(), T::zero());
                for _ in 0..n - 1 {
                    pows.push(p);
                    p = p * za;
                }
                pows
            })
            .collect();
        GaugedSystem {
            potential,
            frame,
            col_factor,
            powers,
        }
    }

    /// Row vector b_c(x) = Σ_l u_l(x) (z α_c)^l.
    pub fn row_at(&self, x: T) -> Vec<Complex<T>> {
        let n = self.potential.n;
        let u: Vec<Complex<T>> = (0..n - 1).map(|l| self.potential.eval(l, x)).collect();
        (0..n)
            .map(|c| {
                let mut acc = Complex::new(T::zero(), T::zero());
                for (l, ul) in u.iter().enumerate() {
                    acc = acc + *ul * self.powers[c][l];
                }
                acc
            })
            .collect()
    }

    /// -α_r/(n z^{n-1}) column factors.
    pub fn col_factor(&self) -> &[Complex<T>] {
        &self.col_factor
    }

    /// The full gauged matrix q_ξ(x).
    pub fn q_gauged(&self, x: T) -> CMat<T> {
        let row = self.row_at(x);
        CMat::from_fn(self.potential.n, |r, c| self.col_factor[r] * row[c])
    }

    /// Apply q_ξ(x) to a matrix from the left: out = q_ξ(x) · m.
    pub fn apply_left(&self, row: &[Complex<T>], m: &CMat<T>, out: &mut CMat<T>) {
        let n = self.potential.n;
        for c in 0..n {
            let mut dot = Complex::new(T::zero(), T::zero());
            for k in 0..n {
                dot = dot + row[k] * m[(k, c)];
            }
            for r in 0..n {
                out[(r, c)] = self.col_factor[r] * dot;
            }
        }
    }

    /// Apply q_ξ(x) to a matrix from the right: out = m · q_ξ(x).
    pub fn apply_right(&self, row: &[Complex<T>], m: &CMat<T>, out: &mut CMat<T>) {
        let n = self.potential.n;
        for r in 0..n {
            let mut dot = Complex::new(T::zero(), T::zero());
            for k in 0..n {
                dot = dot + m[(r, k)] * self.col_factor[k];
            }
            for c in 0..n {
                out[(r, c)] = dot * row[c];
            }
        }
    }
}
