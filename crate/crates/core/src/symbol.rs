//! Formal pseudodifferential symbol algebra over differential polynomials,
//! and the derivation of the physical-space flow equations
//! dL/dt = [L^{k/n}_+, L].
//!
//! Symbols are truncated Laurent series in ξ with `DiffPoly` coefficients.
//! Composition uses the left-symbol rule Σ_m (1/m!) ∂_ξ^m a · D_x^m b with
//! D = (1/i) d/dx, so no stray factors of i appear for differential
//! operators with the convention u_n = 1, u_{n-1} = 0.

use crate::diffpoly::{coef, fmt_coef, parse_diffpoly, DiffPoly};
use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Laurent symbol Σ_d c_d(x) ξ^d with exact coefficients. `valid_below`
/// records the lowest degree that is exact: `None` means the symbol is exact
/// at every degree (a finite polynomial), `Some(d)` means degrees < d have
/// been truncated away and must not be trusted.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdoSymbol {
    coeffs: BTreeMap<i64, DiffPoly>,
    valid_below: Option<i64>,
}

impl PsdoSymbol {
    pub fn zero() -> Self {
        PsdoSymbol {
            coeffs: BTreeMap::new(),
            valid_below: None,
        }
    }

    /// Monomial symbol c(x) ξ^d.
    pub fn monomial(degree: i64, c: DiffPoly) -> Self {
        let mut coeffs = BTreeMap::new();
        if !c.is_zero() {
            coeffs.insert(degree, c);
        }
        PsdoSymbol {
            coeffs,
            valid_below: None,
        }
    }

    /// Symbol of the order-n operator: ξ^n + Σ_{j ≤ n-2} u_j ξ^j.
    pub fn operator_symbol(n: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(n as i64, DiffPoly::one());
        for j in 0..=n.saturating_sub(2) {
            coeffs.insert(j as i64, DiffPoly::var(j as u8, 0));
        }
        PsdoSymbol {
            coeffs,
            valid_below: None,
        }
    }

    pub fn identity() -> Self {
        PsdoSymbol::monomial(0, DiffPoly::one())
    }

    pub fn xi() -> Self {
        PsdoSymbol::monomial(1, DiffPoly::one())
    }

    pub fn coeff(&self, degree: i64) -> DiffPoly {
        self.coeffs
            .get(&degree)
            .cloned()
            .unwrap_or_else(DiffPoly::zero)
    }

    pub fn degrees(&self) -> impl Iterator<Item = i64> + '_ {
        self.coeffs.keys().copied()
    }

    pub fn top_degree(&self) -> Option<i64> {
        self.coeffs.keys().next_back().copied()
    }

    pub fn valid_below(&self) -> Option<i64> {
        self.valid_below
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    fn insert(&mut self, degree: i64, c: DiffPoly) {
        if c.is_zero() {
            self.coeffs.remove(&degree);
        } else {
            self.coeffs.insert(degree, c);
        }
    }

    fn add_into(&mut self, degree: i64, c: DiffPoly) {
        let cur = self.coeff(degree);
        self.insert(degree, cur.add(&c));
    }

    /// Drop degrees below `min_degree` and record the truncation.
    pub fn truncate_below(&self, min_degree: i64) -> Self {
        let mut out = self.clone();
        out.coeffs.retain(|d, _| *d >= min_degree);
        out.valid_below = Some(match out.valid_below {
            Some(v) => v.max(min_degree),
            None => min_degree,
        });
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (d, c) in other.coeffs.iter() {
            out.add_into(*d, c.clone());
        }
        out.valid_below = merge_validity(self.valid_below, other.valid_below);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&coef(-1, 1, 0, 1)))
    }

    pub fn scale(&self, s: &Complex<BigRational>) -> Self {
        let mut out = PsdoSymbol {
            coeffs: BTreeMap::new(),
            valid_below: self.valid_below,
        };
        for (d, c) in self.coeffs.iter() {
            out.insert(*d, c.scale(s));
        }
        out
    }

    /// ∂_ξ: degree d coefficient becomes (d+1)·coeff(d+1).
    fn xi_derivative(&self) -> Self {
        let mut out = PsdoSymbol {
            coeffs: BTreeMap::new(),
            valid_below: self.valid_below.map(|v| v - 1),
        };
        for (d, c) in self.coeffs.iter() {
            if *d == 0 {
                continue;
            }
            let factor = Complex::new(
                BigRational::from_integer(BigInt::from(*d)),
                BigRational::zero(),
            );
            out.insert(d - 1, c.scale(&factor));
        }
        out
    }

    /// D_x applied to every coefficient.
    fn x_d_derivative(&self) -> Self {
        let mut out = PsdoSymbol {
            coeffs: BTreeMap::new(),
            valid_below: self.valid_below,
        };
        for (d, c) in self.coeffs.iter() {
            out.insert(*d, c.d_derivative(1));
        }
        out
    }

    /// Retain only nonnegative degrees (the differential part).
    pub fn positive_part(&self) -> Self {
        let mut out = PsdoSymbol {
            coeffs: BTreeMap::new(),
            valid_below: None,
        };
        for (d, c) in self.coeffs.iter() {
            if *d >= 0 {
                out.insert(*d, c.clone());
            }
        }
        // Exact as long as the input was trustworthy at degree 0 and above.
        if let Some(v) = self.valid_below {
            if v > 0 {
                out.valid_below = Some(v);
            }
        }
        out
    }

    /// Canonical one-line text form: degrees descending, each as
    /// `xi^d: <diffpoly>`.
    pub fn to_text(&self) -> String {
        if self.coeffs.is_empty() {
            return "0".to_string();
        }
        self.coeffs
            .iter()
            .rev()
            .map(|(d, c)| format!("xi^{d}: {c}"))
            .collect::<Vec<_>>()
            .join(" ; ")
    }
}

fn merge_validity(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (None, x) => x,
        (x, None) => x,
        (Some(p), Some(q)) => Some(p.max(q)),
    }
}

/// Asymptotic symbol composition Σ_{m ≥ 0} (1/m!) ∂_ξ^m A · D_x^m B,
/// truncated so that only degrees ≥ `keep_below`-threshold implied by the
/// inputs survive. For polynomial (differential-operator) inputs the result
/// is exact and the series terminates on its own.
pub fn compose(a: &PsdoSymbol, b: &PsdoSymbol) -> Result<PsdoSymbol> {
    if a.is_zero() || b.is_zero() {
        return Ok(PsdoSymbol::zero());
    }
    let a_top = a.top_degree().unwrap();
    let b_top = b.top_degree().unwrap();
    let a_bot = a.degrees().next().unwrap();
    // Truncation of A at valid_below v_a pollutes degrees ≤ v_a - 1 + b_top;
    // similarly for B. Everything above stays exact.
    let result_valid = merge_validity(
        a.valid_below().map(|v| v + b_top),
        b.valid_below().map(|v| v + a_top),
    );
    if a_bot < 0 && result_valid.is_none() {
        return Err(Error::DepthExhausted(
            "left symbol has negative degrees but no truncation floor; the composition series would not terminate".into(),
        ));
    }
    let mut out = PsdoSymbol::zero();
    let mut da = a.clone();
    let mut fact = BigRational::one();
    let mut m: i64 = 0;
    loop {
        if da.is_zero() {
            break;
        }
        // Degrees of the m-th term are bounded above by (a_top - m) + b_top;
        // once that falls below the validity floor the series contributes
        // nothing trustworthy.
        if let Some(v) = result_valid {
            if a_top - m + b_top < v {
                break;
            }
        }
        let dxb = {
            let mut t = b.clone();
            for _ in 0..m {
                t = t.x_d_derivative();
            }
            t
        };
        let inv_fact = Complex::new(BigRational::one() / fact.clone(), BigRational::zero());
        for (d1, c1) in da.coeffs.iter() {
            for (d2, c2) in dxb.coeffs.iter() {
                let c = c1.mul(c2).scale(&inv_fact);
                out.add_into(d1 + d2, c);
            }
        }
        m += 1;
        fact *= BigRational::from_integer(BigInt::from(m));
        da = da.xi_derivative();
    }
    out.valid_below = result_valid;
    let out = match result_valid {
        Some(v) => out.truncate_below(v),
        None => out,
    };
    if out.is_zero() && result_valid.is_some() {
        // Entire product fell below the retained depth.
        return Err(Error::DepthExhausted(format!(
            "composition result empty above degree {}",
            result_valid.unwrap()
        )));
    }
    Ok(out)
}

/// Composition truncated to depth `m` below the top degree of the result.
pub fn compose_truncated(a: &PsdoSymbol, b: &PsdoSymbol, m: usize) -> Result<PsdoSymbol> {
    let raw = compose(a, b)?;
    let top = raw
        .top_degree()
        .ok_or_else(|| Error::DepthExhausted("empty composition".into()))?;
    let floor = top - m as i64;
    if let Some(v) = raw.valid_below() {
        if v > floor {
            return Err(Error::DepthExhausted(format!(
                "inputs only support validity above degree {v}; depth {m} needs degree {floor}"
            )));
        }
    }
    Ok(raw.truncate_below(floor))
}

/// k-fold composition power of a symbol.
pub fn compose_power(b: &PsdoSymbol, k: usize) -> Result<PsdoSymbol> {
    let mut acc = PsdoSymbol::identity();
    for _ in 0..k {
        acc = compose(&acc, b)?;
    }
    Ok(acc)
}

/// Formal n-th root of a monic operator symbol with vanishing subleading
/// coefficient: returns b = ξ + w_{-1} ξ^{-1} + …, solved degree by degree,
/// with b^{∘n} = L + O(ξ^{n-1-depth}).
pub fn nth_root(l_symbol: &PsdoSymbol, n: usize, depth: usize) -> Result<PsdoSymbol> {
    let n_i = n as i64;
    let top = l_symbol
        .top_degree()
        .ok_or(Error::NonMonicSymbol { degree: 0 })?;
    if top != n_i || l_symbol.coeff(top) != DiffPoly::one() {
        return Err(Error::NonMonicSymbol { degree: top });
    }
    if !l_symbol.coeff(n_i - 1).is_zero() {
        return Err(Error::NonzeroSubleading);
    }
    let inv_n = Complex::new(
        BigRational::one() / BigRational::from_integer(BigInt::from(n_i)),
        BigRational::zero(),
    );
    // Work with the final truncation floor from the start so that the
    // composition series inside the solve terminates.
    let mut b = PsdoSymbol::xi().truncate_below(-(depth as i64));
    // Match b^{∘n} to L at degree d = n-1, n-2, …; each step pins the
    // coefficient w_{d-n+1}, whose leading contribution enters with factor n.
    // The power is recomputed with a floor at the degree being solved, so a
    // step only pays for the degrees it actually inspects.
    for step in 0..=depth {
        let d = n_i - 1 - step as i64;
        let floored = b.truncate_below(d - n_i + 1);
        let power = compose_power(&floored, n)?;
        let mismatch = l_symbol.coeff(d).sub(&power.coeff(d));
        if mismatch.is_zero() {
            continue;
        }
        let w = mismatch.scale(&inv_n);
        b = b.add(&PsdoSymbol::monomial(d - n_i + 1, w));
    }
    // Solved coefficients reach down to degree -depth; mark the floor.
    Ok(b.truncate_below(-(depth as i64)))
}

/// Right-hand sides of the flow du_j/dt for j ≤ n-2, derived symbolically
/// from the commutator of the differential part of the k/n-th power with the
/// operator itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEquation {
    pub n: usize,
    pub k: usize,
    /// rhs[j] = du_j/dt as a differential polynomial.
    pub rhs: Vec<DiffPoly>,
}

/// Default truncation depth for flow derivation.
pub fn default_depth(n: usize, k: usize) -> usize {
    n + k + 2
}

/// Derive the flow equations for the (n, k) member of the hierarchy.
/// `depth` of `None` uses the default n + k + 2.
pub fn derive_flow(n: usize, k: usize, depth: Option<usize>) -> Result<FlowEquation> {
    if n < 2 {
        return Err(Error::InvalidOrder(n));
    }
    if k == 0 || k % n == 0 {
        return Err(Error::TrivialFlow { n, k });
    }
    let depth = depth.unwrap_or_else(|| default_depth(n, k));
    let l = PsdoSymbol::operator_symbol(n);
    // Root coefficients below degree 1-k cannot reach the differential part
    // of the k-th power, so the solve never needs to go deeper than k-1;
    // a caller-supplied shallower depth still fails the validity check below.
    let effective = depth.min(k.saturating_sub(1));
    let b = nth_root(&l, n, effective)?;
    let bk = compose_power(&b, k)?;
    if let Some(v) = bk.valid_below() {
        if v > 0 {
            return Err(Error::DepthExhausted(format!(
                "power symbol only valid above degree {v}; increase depth"
            )));
        }
    }
    let p = bk.positive_part();
    // Both P and L are differential operators, so the commutator is exact.
    let commutator = compose(&p, &l)?.sub(&compose(&l, &p)?);
    // Order drop: coefficients at degrees n-1 and above must cancel to the
    // zero polynomial identically.
    for d in (n as i64 - 1)..=commutator.top_degree().unwrap_or(0).max(n as i64) {
        let c = commutator.coeff(d);
        if !c.is_zero() {
            return Err(Error::DepthExhausted(format!(
                "commutator retains degree {d}: {c}"
            )));
        }
    }
    if let Some(low) = commutator.degrees().next() {
        if low < 0 {
            return Err(Error::DepthExhausted(format!(
                "commutator has negative degree {low}"
            )));
        }
    }
    let rhs = (0..=n - 2).map(|j| commutator.coeff(j as i64)).collect();
    Ok(FlowEquation { n, k, rhs })
}

impl FlowEquation {
    /// Plain-text form: one equation per line, monomials in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("flow n={} k={}\n", self.n, self.k));
        for (j, p) in self.rhs.iter().enumerate() {
            out.push_str(&format!("du{}/dt = {}\n", j, p));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty flow text".into()))?;
        let header = header
            .trim()
            .strip_prefix("flow ")
            .ok_or_else(|| Error::Parse("missing flow header".into()))?;
        let mut n = None;
        let mut k = None;
        for part in header.split_whitespace() {
            if let Some(v) = part.strip_prefix("n=") {
                n = Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::Parse("bad n".into()))?,
                );
            } else if let Some(v) = part.strip_prefix("k=") {
                k = Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::Parse("bad k".into()))?,
                );
            }
        }
        let (n, k) = (
            n.ok_or_else(|| Error::Parse("missing n".into()))?,
            k.ok_or_else(|| Error::Parse("missing k".into()))?,
        );
        let mut rhs = vec![DiffPoly::zero(); n - 1];
        for line in lines {
            let (lhs, poly) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad flow line {line:?}")))?;
            let j: usize = lhs
                .trim()
                .strip_prefix("du")
                .and_then(|s| s.strip_suffix("/dt"))
                .ok_or_else(|| Error::Parse(format!("bad flow lhs {lhs:?}")))?
                .parse()
                .map_err(|_| Error::Parse(format!("bad flow index in {lhs:?}")))?;
            if j + 1 >= n {
                return Err(Error::Parse(format!(
                    "flow index {j} out of range for n={n}"
                )));
            }
            rhs[j] = parse_diffpoly(poly.trim())?;
        }
        Ok(FlowEquation { n, k, rhs })
    }

    /// The linear part as a matrix of (derivative order → coefficient) maps:
    /// linear[j][j'] lists (m, c) with du_j/dt ⊇ c · ∂^m u_{j'} (plain x
    /// derivatives; the D-convention factors are folded into c).
    pub fn linear_part(&self) -> Vec<Vec<Vec<(u16, Complex<f64>)>>> {
        let nm1 = self.rhs.len();
        let mut out = vec![vec![Vec::new(); nm1]; nm1];
        for (j, p) in self.rhs.iter().enumerate() {
            for (mono, c) in p.terms() {
                if mono.total_degree() != 1 {
                    continue;
                }
                let (v, _) = mono.factors()[0];
                if (v.coeff_index as usize) < nm1 {
                    let cc = crate::diffpoly::coef_to_complex::<f64>(c);
                    out[j][v.coeff_index as usize].push((v.deriv_order, cc));
                }
            }
        }
        out
    }

    /// The nonlinear remainder (all monomials of degree ≥ 2).
    pub fn nonlinear_part(&self) -> Vec<DiffPoly> {
        self.rhs
            .iter()
            .map(|p| {
                let mut q = DiffPoly::zero();
                for (m, c) in p.terms() {
                    if m.total_degree() >= 2 {
                        q = q.add(&poly_from_term(m, c.clone()));
                    }
                }
                q
            })
            .collect()
    }
}

fn poly_from_term(m: &crate::diffpoly::Monomial, c: Complex<BigRational>) -> DiffPoly {
    let mut acc = DiffPoly::constant(c);
    for (v, e) in m.factors() {
        for _ in 0..*e {
            acc = acc.mul(&DiffPoly::var(v.coeff_index, v.deriv_order));
        }
    }
    acc
}

impl fmt::Display for FlowEquation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_text())
    }
}

/// Pretty label for a coefficient, used by the CLI.
pub fn coef_label(c: &Complex<BigRational>) -> String {
    fmt_coef(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpoly::{coef, DiffPoly};

    #[test]
    fn xi_commutator_is_first_derivative() {
        // ξ∘u0 - u0∘ξ = (1/i) u0' = -i u0^(1)
        let xi = PsdoSymbol::xi();
        let u = PsdoSymbol::monomial(0, DiffPoly::var(0, 0));
        let c = compose(&xi, &u).unwrap().sub(&compose(&u, &xi).unwrap());
        let expected = PsdoSymbol::monomial(0, DiffPoly::var(0, 1).scale(&coef(0, 1, -1, 1)));
        assert_eq!(c, expected);
    }

    #[test]
    fn identity_composition() {
        let l = PsdoSymbol::operator_symbol(3);
        let id = PsdoSymbol::identity();
        assert_eq!(compose(&l, &id).unwrap(), l);
        assert_eq!(compose(&id, &l).unwrap(), l);
    }

    #[test]
    fn composition_associative_on_operators() {
        let l = PsdoSymbol::operator_symbol(2);
        let p = PsdoSymbol::monomial(1, DiffPoly::var(0, 1)).add(&PsdoSymbol::monomial(
            0,
            DiffPoly::var(0, 0).mul(&DiffPoly::var(0, 0)),
        ));
        let q = PsdoSymbol::monomial(0, DiffPoly::var(0, 2));
        let left = compose(&compose(&l, &p).unwrap(), &q).unwrap();
        let right = compose(&l, &compose(&p, &q).unwrap()).unwrap();
        assert_eq!(left, right);
    }

    #[test]
    fn square_root_of_schroedinger_symbol() {
        // b = ξ + u0/(2ξ) - u0'/(4iξ²)·i-convention + …; check recomposition
        // and the stated leading fraction.
        let l = PsdoSymbol::operator_symbol(2);
        let b = nth_root(&l, 2, 6).unwrap();
        assert_eq!(b.coeff(1), DiffPoly::one());
        assert!(
            b.coeff(0).is_zero(),
            "subleading vanishes when u_{{n-1}} = 0"
        );
        assert_eq!(b.coeff(-1), DiffPoly::var(0, 0).scale(&coef(1, 2, 0, 1)));
        let b2 = compose_power(&b, 2).unwrap();
        let v = b2.valid_below().unwrap();
        for d in v..=2 {
            assert_eq!(b2.coeff(d), l.coeff(d), "degree {d} mismatch");
        }
    }

    #[test]
    fn recomposition_property_n234() {
        for (n, depth) in [(2usize, 7usize), (3, 7), (4, 6)] {
            let l = PsdoSymbol::operator_symbol(n);
            let b = nth_root(&l, n, depth).unwrap();
            let bn = compose_power(&b, n).unwrap();
            let v = bn.valid_below().unwrap();
            for d in v..=(n as i64) {
                assert_eq!(bn.coeff(d), l.coeff(d), "n={n} degree {d}");
            }
        }
    }

    #[test]
    fn root_rejects_bad_input() {
        let mut bad = PsdoSymbol::operator_symbol(2);
        bad = bad.add(&PsdoSymbol::monomial(1, DiffPoly::var(0, 0)));
        assert!(matches!(
            nth_root(&bad, 2, 4),
            Err(Error::NonzeroSubleading)
        ));
        let scaled = PsdoSymbol::operator_symbol(2).scale(&coef(2, 1, 0, 1));
        assert!(matches!(
            nth_root(&scaled, 2, 4),
            Err(Error::NonMonicSymbol { .. })
        ));
    }

    #[test]
    fn positive_part_definition() {
        let l = PsdoSymbol::operator_symbol(2);
        let b = nth_root(&l, 2, 5).unwrap();
        let p = b.positive_part();
        assert_eq!(p, PsdoSymbol::xi());
        assert_eq!(l.positive_part(), l);
    }

    #[test]
    fn translation_flow_for_all_n() {
        for n in 2..=4usize {
            let f = derive_flow(n, 1, None).unwrap();
            for j in 0..=n - 2 {
                let expected = DiffPoly::var(j as u8, 1).scale(&coef(0, 1, -1, 1));
                assert_eq!(f.rhs[j], expected, "k=1 flow must be D u_{j} for n={n}");
            }
        }
    }

    #[test]
    fn kdv_flow_golden() {
        // n=2, k=3: du0/dt = (1/4) D³u0 + (3/2) u0 D u0
        //                  = (i/4) u0^(3) - (3i/2) u0 u0^(1).
        let f = derive_flow(2, 3, None).unwrap();
        let expected = DiffPoly::var(0, 3).scale(&coef(0, 1, 1, 4)).add(
            &DiffPoly::var(0, 0)
                .mul(&DiffPoly::var(0, 1))
                .scale(&coef(0, 1, -3, 2)),
        );
        assert_eq!(f.rhs[0], expected);
    }

    #[test]
    fn boussinesq_flow_golden() {
        // n=3, k=2: du1/dt = 2 D u0 - D² u1;
        //           du0/dt = D² u0 - (2/3) u1 D u1 - (2/3) D³ u1.
        let f = derive_flow(3, 2, None).unwrap();
        let du1 = DiffPoly::var(0, 1)
            .scale(&coef(0, 1, -2, 1))
            .add(&DiffPoly::var(1, 2).scale(&coef(1, 1, 0, 1)));
        assert_eq!(f.rhs[1], du1, "du1/dt");
        let du0 = DiffPoly::var(0, 2)
            .scale(&coef(-1, 1, 0, 1))
            .add(
                &DiffPoly::var(1, 0)
                    .mul(&DiffPoly::var(1, 1))
                    .scale(&coef(0, 1, 2, 3)),
            )
            .add(&DiffPoly::var(1, 3).scale(&coef(0, 1, -2, 3)));
        assert_eq!(f.rhs[0], du0, "du0/dt");
    }

    #[test]
    fn excluded_flows_rejected() {
        assert!(matches!(
            derive_flow(2, 4, None),
            Err(Error::TrivialFlow { n: 2, k: 4 })
        ));
        assert!(matches!(
            derive_flow(3, 3, None),
            Err(Error::TrivialFlow { .. })
        ));
        assert!(matches!(
            derive_flow(2, 0, None),
            Err(Error::TrivialFlow { .. })
        ));
    }

    #[test]
    fn flow_text_round_trip() {
        for (n, k) in [(2usize, 3usize), (3, 2), (3, 1), (4, 3)] {
            let f = derive_flow(n, k, None).unwrap();
            let text = f.to_text();
            let g = FlowEquation::from_text(&text).unwrap();
            assert_eq!(f, g);
        }
    }

    #[test]
    fn commutator_order_drop_all_required_pairs() {
        for (n, k) in [(2usize, 1usize), (2, 3), (3, 1), (3, 2), (4, 3)] {
            let f = derive_flow(n, k, None);
            assert!(f.is_ok(), "({n},{k}) failed: {:?}", f.err());
        }
    }
}
