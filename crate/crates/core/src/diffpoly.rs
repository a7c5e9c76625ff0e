//! Differential polynomials over exact Gaussian rationals.
//!
//! A differential polynomial is a finite sum of monomials, each a product of
//! formal variables u_j^{(m)} (the m-th x-derivative of coefficient u_j) with
//! a complex-rational coefficient. All arithmetic here is exact so that flow
//! derivations are bit-reproducible; floating point enters only at
//! evaluation time.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

/// Exact complex-rational coefficient.
pub type Coef = Complex<BigRational>;

pub fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

/// Coefficient p/q + (r/s)i.
pub fn coef(p: i64, q: i64, r: i64, s: i64) -> Coef {
    Complex::new(rat(p, q), rat(r, s))
}

pub fn coef_zero() -> Coef {
    Complex::new(BigRational::zero(), BigRational::zero())
}

pub fn coef_one() -> Coef {
    Complex::new(BigRational::one(), BigRational::zero())
}

/// -i, the factor produced by one application of D = (1/i) d/dx.
pub fn coef_minus_i() -> Coef {
    Complex::new(BigRational::zero(), -BigRational::one())
}

/// Formal variable u_j^{(m)}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub coeff_index: u8,
    pub deriv_order: u16,
}

/// Product of variables with positive integer exponents, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    factors: Vec<(Var, u32)>,
}

impl Monomial {
    pub fn unit() -> Self {
        Monomial {
            factors: Vec::new(),
        }
    }

    pub fn var(coeff_index: u8, deriv_order: u16) -> Self {
        Monomial {
            factors: vec![(
                Var {
                    coeff_index,
                    deriv_order,
                },
                1,
            )],
        }
    }

    pub fn is_unit(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self) -> &[(Var, u32)] {
        &self.factors
    }

    pub fn total_degree(&self) -> u32 {
        self.factors.iter().map(|(_, e)| e).sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut map: BTreeMap<Var, u32> = BTreeMap::new();
        for (v, e) in self.factors.iter().chain(other.factors.iter()) {
            *map.entry(*v).or_insert(0) += e;
        }
        Monomial {
            factors: map.into_iter().collect(),
        }
    }

    /// Highest derivative order appearing for coefficient j.
    pub fn max_deriv(&self) -> u16 {
        self.factors
            .iter()
            .map(|(v, _)| v.deriv_order)
            .max()
            .unwrap_or(0)
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Graded lexicographic order: by total degree, then lexicographically on
/// the sorted (coefficient index, derivative order, exponent) triples.
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.factors.cmp(&other.factors))
    }
}

/// Canonical-form differential polynomial: monomials sorted, like terms
/// merged, zero coefficients dropped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiffPoly {
    terms: BTreeMap<Monomial, Coef>,
}

impl DiffPoly {
    pub fn zero() -> Self {
        DiffPoly::default()
    }

    pub fn constant(c: Coef) -> Self {
        let mut p = DiffPoly::zero();
        p.add_term(Monomial::unit(), c);
        p
    }

    pub fn one() -> Self {
        DiffPoly::constant(coef_one())
    }

    /// The variable u_j^{(m)} as a polynomial.
    pub fn var(coeff_index: u8, deriv_order: u16) -> Self {
        let mut p = DiffPoly::zero();
        p.add_term(Monomial::var(coeff_index, deriv_order), coef_one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Coef)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn add_term(&mut self, m: Monomial, c: Coef) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert_with(coef_zero);
        *entry = entry.clone() + c;
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    pub fn add(&self, other: &DiffPoly) -> DiffPoly {
        let mut out = self.clone();
        for (m, c) in other.terms.iter() {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &DiffPoly) -> DiffPoly {
        self.add(&other.scale(&(-coef_one())))
    }

    pub fn scale(&self, s: &Coef) -> DiffPoly {
        if s.is_zero() {
            return DiffPoly::zero();
        }
        let mut out = DiffPoly::zero();
        for (m, c) in self.terms.iter() {
            out.add_term(m.clone(), c.clone() * s.clone());
        }
        out
    }

    pub fn mul(&self, other: &DiffPoly) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (ma, ca) in self.terms.iter() {
            for (mb, cb) in other.terms.iter() {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
        }
        out
    }

    /// Plain x-derivative ∂ (Leibniz over each monomial factor).
    pub fn x_derivative(&self) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (m, c) in self.terms.iter() {
            for (idx, (v, e)) in m.factors.iter().enumerate() {
                // Replace one power of u_j^{(m)} by u_j^{(m+1)}.
                let mut map: BTreeMap<Var, u32> = BTreeMap::new();
                for (i2, (v2, e2)) in m.factors.iter().enumerate() {
                    let e_new = if i2 == idx { e2 - 1 } else { *e2 };
                    if e_new > 0 {
                        map.insert(*v2, e_new);
                    }
                }
                let bumped = Var {
                    coeff_index: v.coeff_index,
                    deriv_order: v.deriv_order + 1,
                };
                *map.entry(bumped).or_insert(0) += 1;
                let mono = Monomial {
                    factors: map.into_iter().collect(),
                };
                let factor = Complex::new(
                    BigRational::from_integer(BigInt::from(*e as i64)),
                    BigRational::zero(),
                );
                out.add_term(mono, c.clone() * factor);
            }
        }
        out
    }

    /// D = (1/i) d/dx applied `order` times.
    pub fn d_derivative(&self, order: usize) -> DiffPoly {
        let mut cur = self.clone();
        for _ in 0..order {
            cur = cur.x_derivative().scale(&coef_minus_i());
        }
        cur
    }

    /// Highest derivative order appearing anywhere.
    pub fn max_deriv(&self) -> u16 {
        self.terms.keys().map(|m| m.max_deriv()).max().unwrap_or(0)
    }

    /// Highest coefficient index appearing anywhere.
    pub fn max_coeff_index(&self) -> Option<u8> {
        self.terms
            .keys()
            .flat_map(|m| m.factors.iter().map(|(v, _)| v.coeff_index))
            .max()
    }

    /// Whether every monomial is a single variable to the first power.
    pub fn is_linear(&self) -> bool {
        self.terms.keys().all(|m| m.total_degree() == 1)
    }

    /// Evaluate with a lookup for variable samples (complex values).
    pub fn eval<T: Scalar>(&self, lookup: &mut impl FnMut(u8, u16) -> Complex<T>) -> Complex<T> {
        let mut acc = Complex::new(T::zero(), T::zero());
        for (m, c) in self.terms.iter() {
            let mut prod = coef_to_complex::<T>(c);
            for (v, e) in m.factors.iter() {
                let val = lookup(v.coeff_index, v.deriv_order);
                for _ in 0..*e {
                    prod = prod * val;
                }
            }
            acc = acc + prod;
        }
        acc
    }
}

pub fn coef_to_complex<T: Scalar>(c: &Coef) -> Complex<T> {
    let re = c.re.to_f64().expect("rational out of f64 range");
    let im = c.im.to_f64().expect("rational out of f64 range");
    Complex::new(
        T::from_f64(re).expect("scalar conversion"),
        T::from_f64(im).expect("scalar conversion"),
    )
}

fn fmt_rat(r: &BigRational) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Canonical text form of a coefficient: `(re,im)` with reduced rationals.
pub fn fmt_coef(c: &Coef) -> String {
    format!("({},{})", fmt_rat(&c.re), fmt_rat(&c.im))
}

impl fmt::Display for DiffPoly {
    /// Canonical form: monomials in graded-lex order, each term as
    /// `(re,im)*u{j}^({m})*...`, derivative marker omitted for m = 0,
    /// repeated factors expanded.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in self.terms.iter() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{}", fmt_coef(c))?;
            for (v, e) in m.factors.iter() {
                for _ in 0..*e {
                    if v.deriv_order == 0 {
                        write!(f, "*u{}", v.coeff_index)?;
                    } else {
                        write!(f, "*u{}^({})", v.coeff_index, v.deriv_order)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_rat(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a, b),
        None => (s, "1"),
    };
    let n: BigInt = num
        .parse()
        .map_err(|_| Error::Parse(format!("bad rational {s:?}")))?;
    let d: BigInt = den
        .parse()
        .map_err(|_| Error::Parse(format!("bad rational {s:?}")))?;
    if d.is_zero() {
        return Err(Error::Parse(format!("zero denominator in {s:?}")));
    }
    Ok(BigRational::new(n, d))
}

fn parse_coef(s: &str) -> Result<Coef> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::Parse(format!("bad coefficient {s:?}")))?;
    let (re, im) = inner
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("bad coefficient {s:?}")))?;
    Ok(Complex::new(parse_rat(re)?, parse_rat(im)?))
}

/// Parse the canonical text form produced by `Display`.
pub fn parse_diffpoly(s: &str) -> Result<DiffPoly> {
    let s = s.trim();
    if s == "0" {
        return Ok(DiffPoly::zero());
    }
    let mut out = DiffPoly::zero();
    for term in s.split(" + ") {
        let mut parts = term.split('*');
        let c = parse_coef(
            parts
                .next()
                .ok_or_else(|| Error::Parse("empty term".into()))?,
        )?;
        let mut mono = Monomial::unit();
        for factor in parts {
            let body = factor
                .trim()
                .strip_prefix('u')
                .ok_or_else(|| Error::Parse(format!("bad factor {factor:?}")))?;
            let (idx_str, deriv) = match body.split_once("^(") {
                Some((i, rest)) => {
                    let d = rest
                        .strip_suffix(')')
                        .ok_or_else(|| Error::Parse(format!("bad factor {factor:?}")))?;
                    (
                        i,
                        d.parse::<u16>()
                            .map_err(|_| Error::Parse(format!("bad derivative {d:?}")))?,
                    )
                }
                None => (body, 0),
            };
            let idx: u8 = idx_str
                .parse()
                .map_err(|_| Error::Parse(format!("bad coefficient index {idx_str:?}")))?;
            mono = mono.mul(&Monomial::var(idx, deriv));
        }
        out.add_term(mono, c);
    }
    Ok(out)
}

/// |re| + |im| as f64, for residual reporting in tests.
pub fn coef_abs(c: &Coef) -> f64 {
    (c.re.abs() + c.im.abs()).to_f64().unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_merge_and_drop() {
        let u = DiffPoly::var(0, 0);
        let s = u.add(&u).sub(&u.scale(&coef(2, 1, 0, 1)));
        assert!(s.is_zero());
    }

    #[test]
    fn leibniz_derivative() {
        // ∂(u0²) = 2 u0 u0'
        let u = DiffPoly::var(0, 0);
        let d = u.mul(&u).x_derivative();
        let expected = DiffPoly::var(0, 0)
            .mul(&DiffPoly::var(0, 1))
            .scale(&coef(2, 1, 0, 1));
        assert_eq!(d, expected);
    }

    #[test]
    fn d_derivative_introduces_minus_i() {
        // D u0 = -i u0'
        let d = DiffPoly::var(0, 0).d_derivative(1);
        let expected = DiffPoly::var(0, 1).scale(&coef(0, 1, -1, 1));
        assert_eq!(d, expected);
        // D² u0 = -u0''
        let d2 = DiffPoly::var(0, 0).d_derivative(2);
        let expected2 = DiffPoly::var(0, 2).scale(&coef(-1, 1, 0, 1));
        assert_eq!(d2, expected2);
    }

    #[test]
    fn display_parse_round_trip() {
        let p = DiffPoly::var(0, 3)
            .scale(&coef(1, 4, 3, 7))
            .add(
                &DiffPoly::var(1, 0)
                    .mul(&DiffPoly::var(0, 1))
                    .scale(&coef(-3, 2, 0, 1)),
            )
            .add(&DiffPoly::constant(coef(0, 1, 5, 1)));
        let text = p.to_string();
        let q = parse_diffpoly(&text).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn eval_matches_hand_value() {
        use num_complex::Complex;
        // p = 2 u0 u1' + i u0''
        let p = DiffPoly::var(0, 0)
            .mul(&DiffPoly::var(1, 1))
            .scale(&coef(2, 1, 0, 1))
            .add(&DiffPoly::var(0, 2).scale(&coef(0, 1, 1, 1)));
        let mut lookup = |j: u8, m: u16| -> Complex<f64> {
            match (j, m) {
                (0, 0) => Complex::new(1.5, 0.5),
                (1, 1) => Complex::new(-2.0, 1.0),
                (0, 2) => Complex::new(0.0, 3.0),
                _ => Complex::new(0.0, 0.0),
            }
        };
        let v = p.eval(&mut lookup);
        let expect = Complex::new(2.0, 0.0) * Complex::new(1.5, 0.5) * Complex::new(-2.0, 1.0)
            + Complex::new(0.0, 1.0) * Complex::new(0.0, 3.0);
        assert!((v - expect).norm() < 1e-14);
    }

    #[test]
    fn graded_lex_ordering() {
        let low = Monomial::var(0, 5);
        let high = Monomial::var(0, 0).mul(&Monomial::var(0, 1));
        assert!(low < high, "degree dominates");
        let a = Monomial::var(0, 1);
        let b = Monomial::var(1, 0);
        assert!(a < b, "coefficient index then derivative order");
    }
}
