//! Sparse multivariate polynomials over F_p.
//!
//! Polynomials are immutable values with a canonical term order (graded
//! lexicographic, leading term first), so equality is a list comparison. All
//! operations return fresh polynomials.

use crate::error::{Error, Result};
use crate::field::{PrimeField, Scalar};
use crate::multiaffine::{IndexSet, MultiLinearMap};
use crate::field::SpaceShape;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

/// One monomial: an exponent vector (one entry per variable) and a nonzero
/// coefficient.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Term {
    pub exps: Vec<u32>,
    pub coeff: Scalar,
}

impl Term {
    pub fn total_degree(&self) -> u32 {
        self.exps.iter().sum()
    }
}

/// Graded-lex comparison, bigger first: higher total degree wins, ties broken
/// lexicographically on the exponent vector.
fn grlex_desc(a: &[u32], b: &[u32]) -> Ordering {
    let da: u32 = a.iter().sum();
    let db: u32 = b.iter().sum();
    db.cmp(&da).then_with(|| b.cmp(a)).reverse().reverse()
}

fn grlex_key(a: &[u32]) -> (std::cmp::Reverse<u32>, Vec<std::cmp::Reverse<u32>>) {
    (
        std::cmp::Reverse(a.iter().sum()),
        a.iter().map(|&e| std::cmp::Reverse(e)).collect(),
    )
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Poly {
    field: PrimeField,
    n: usize,
    terms: Vec<TermRepr>,
    degree: u32,
}

// Internal term representation kept private so normalization can't be
// bypassed.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
struct TermRepr {
    exps: Vec<u32>,
    coeff: Scalar,
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| {
                let vars: Vec<String> = t
                    .exps
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| if e == 1 { format!("x{}", i + 1) } else { format!("x{}^{}", i + 1, e) })
                    .collect();
                if vars.is_empty() {
                    format!("{}", t.coeff)
                } else if t.coeff == Scalar::ONE {
                    vars.join("*")
                } else {
                    format!("{}*{}", t.coeff, vars.join("*"))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl Poly {
    pub fn zero(field: PrimeField, n: usize) -> Poly {
        Poly { field, n, terms: Vec::new(), degree: 0 }
    }

    pub fn constant(field: PrimeField, n: usize, c: Scalar) -> Poly {
        if c.is_zero() {
            Poly::zero(field, n)
        } else {
            Poly { field, n, terms: vec![TermRepr { exps: vec![0; n], coeff: c }], degree: 0 }
        }
    }

    /// The variable x_i (0-based).
    pub fn variable(field: PrimeField, n: usize, i: usize) -> Poly {
        let mut exps = vec![0u32; n];
        exps[i] = 1;
        Poly { field, n, terms: vec![TermRepr { exps, coeff: Scalar::ONE }], degree: 1 }
    }

    pub fn monomial(field: PrimeField, n: usize, exps: Vec<u32>, coeff: Scalar) -> Result<Poly> {
        Poly::from_terms(field, n, vec![(exps, coeff)])
    }

    /// Builds a polynomial from raw terms: merges duplicates, drops zero
    /// coefficients, sorts into canonical order.
    pub fn from_terms(field: PrimeField, n: usize, raw: Vec<(Vec<u32>, Scalar)>) -> Result<Poly> {
        let mut acc: HashMap<Vec<u32>, Scalar> = HashMap::new();
        for (exps, c) in raw {
            if exps.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "exponent vector of length {} for {} variables",
                    exps.len(),
                    n
                )));
            }
            let e = acc.entry(exps).or_insert(Scalar::ZERO);
            *e = field.add(*e, c);
        }
        Ok(Self::normalize(field, n, acc))
    }

    fn normalize(field: PrimeField, n: usize, acc: HashMap<Vec<u32>, Scalar>) -> Poly {
        let mut terms: Vec<TermRepr> = acc
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(exps, coeff)| TermRepr { exps, coeff })
            .collect();
        terms.sort_by(|a, b| grlex_key(&a.exps).cmp(&grlex_key(&b.exps)));
        let degree = terms.iter().map(|t| t.exps.iter().sum()).max().unwrap_or(0);
        Poly { field, n, terms, degree }
    }

    #[inline]
    pub fn field(&self) -> PrimeField {
        self.field
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Total degree; 0 for the zero polynomial.
    #[inline]
    pub fn degree(&self) -> u32 {
        self.degree
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty() || (self.terms.len() == 1 && self.degree == 0)
    }

    /// The constant coefficient.
    pub fn constant_term(&self) -> Scalar {
        self.terms
            .iter()
            .find(|t| t.total_degree() == 0)
            .map(|t| t.coeff)
            .unwrap_or(Scalar::ZERO)
    }

    pub fn terms(&self) -> impl Iterator<Item = Term> + '_ {
        self.terms.iter().map(|t| Term { exps: t.exps.clone(), coeff: t.coeff })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Leading coefficient in graded-lex order.
    pub fn leading_coeff(&self) -> Scalar {
        self.terms.first().map(|t| t.coeff).unwrap_or(Scalar::ZERO)
    }

    fn same_space(&self, other: &Poly) -> Result<()> {
        if self.field != other.field || self.n != other.n {
            return Err(Error::ShapeMismatch(format!(
                "polynomials on F_{}^{} vs F_{}^{}",
                self.field.p(),
                self.n,
                other.field.p(),
                other.n
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Poly) -> Result<Poly> {
        self.same_space(other)?;
        let mut acc: HashMap<Vec<u32>, Scalar> = HashMap::new();
        for t in self.terms.iter().chain(other.terms.iter()) {
            let e = acc.entry(t.exps.clone()).or_insert(Scalar::ZERO);
            *e = self.field.add(*e, t.coeff);
        }
        Ok(Self::normalize(self.field, self.n, acc))
    }

    pub fn sub(&self, other: &Poly) -> Result<Poly> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Poly {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff = self.field.neg(t.coeff);
        }
        out
    }

    pub fn scale(&self, c: Scalar) -> Poly {
        if c.is_zero() {
            return Poly::zero(self.field, self.n);
        }
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff = self.field.mul(t.coeff, c);
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Result<Poly> {
        self.same_space(other)?;
        let mut acc: HashMap<Vec<u32>, Scalar> = HashMap::new();
        for a in &self.terms {
            for b in &other.terms {
                let exps: Vec<u32> =
                    a.exps.iter().zip(&b.exps).map(|(x, y)| x + y).collect();
                let c = self.field.mul(a.coeff, b.coeff);
                let e = acc.entry(exps).or_insert(Scalar::ZERO);
                *e = self.field.add(*e, c);
            }
        }
        Ok(Self::normalize(self.field, self.n, acc))
    }

    /// Exact value of P(x) mod p.
    pub fn evaluate(&self, x: &[Scalar]) -> Result<Scalar> {
        if x.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "point of length {} for {} variables",
                x.len(),
                self.n
            )));
        }
        let f = self.field;
        let mut acc = Scalar::ZERO;
        for t in &self.terms {
            let mut v = t.coeff;
            for (i, &e) in t.exps.iter().enumerate() {
                if e > 0 {
                    v = f.mul(v, f.pow(x[i], e as u64));
                }
            }
            acc = f.add(acc, v);
        }
        Ok(acc)
    }

    /// The top homogeneous component (the zero polynomial maps to itself).
    pub fn homogeneous_part(&self) -> Poly {
        self.homogeneous_component(self.degree)
    }

    /// The degree-`d` homogeneous component.
    pub fn homogeneous_component(&self, d: u32) -> Poly {
        let terms: Vec<TermRepr> =
            self.terms.iter().filter(|t| t.total_degree() == d).cloned().collect();
        let degree = if terms.is_empty() { 0 } else { d };
        Poly { field: self.field, n: self.n, terms, degree }
    }

    /// Splits into nonzero homogeneous components, highest degree first.
    pub fn homogeneous_split(&self) -> Vec<(u32, Poly)> {
        let mut degs: Vec<u32> = self.terms.iter().map(|t| t.total_degree()).collect();
        degs.sort_unstable();
        degs.dedup();
        degs.reverse();
        degs.into_iter().map(|d| (d, self.homogeneous_component(d))).collect()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.terms.iter().all(|t| t.total_degree() == self.degree)
    }

    /// P(x + t) by exact term-wise binomial expansion.
    pub fn shift(&self, t: &[Scalar]) -> Result<Poly> {
        if t.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "direction of length {} for {} variables",
                t.len(),
                self.n
            )));
        }
        let f = self.field;
        let mut acc: HashMap<Vec<u32>, Scalar> = HashMap::new();
        for term in &self.terms {
            // Expand prod_i (x_i + t_i)^{e_i} one factor at a time.
            let mut partial: HashMap<Vec<u32>, Scalar> = HashMap::new();
            partial.insert(vec![0; self.n], term.coeff);
            for (i, &e) in term.exps.iter().enumerate() {
                for _ in 0..e {
                    let mut next: HashMap<Vec<u32>, Scalar> = HashMap::new();
                    for (exps, c) in &partial {
                        // times x_i
                        let mut ex = exps.clone();
                        ex[i] += 1;
                        let slot = next.entry(ex).or_insert(Scalar::ZERO);
                        *slot = f.add(*slot, *c);
                        // times t_i
                        if !t[i].is_zero() {
                            let slot = next.entry(exps.clone()).or_insert(Scalar::ZERO);
                            *slot = f.add(*slot, f.mul(*c, t[i]));
                        }
                    }
                    partial = next;
                }
            }
            for (exps, c) in partial {
                let slot = acc.entry(exps).or_insert(Scalar::ZERO);
                *slot = f.add(*slot, c);
            }
        }
        Ok(Self::normalize(f, self.n, acc))
    }

    /// The additive difference x -> P(x + t) - P(x); degree strictly drops.
    pub fn discrete_derivative(&self, t: &[Scalar]) -> Result<Poly> {
        self.shift(t)?.sub(self)
    }

    /// P composed with the affine map w(t) = M t + c, where `matrix` has one
    /// row of length m per variable of P. Returns a polynomial in m variables.
    pub fn restrict_affine(&self, matrix: &[Vec<Scalar>], offset: &[Scalar]) -> Result<Poly> {
        if matrix.len() != self.n || offset.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "affine map with {} rows / offset {} for {} variables",
                matrix.len(),
                offset.len(),
                self.n
            )));
        }
        let m = matrix.first().map(|r| r.len()).unwrap_or(0);
        if matrix.iter().any(|r| r.len() != m) {
            return Err(Error::ShapeMismatch("ragged matrix in affine map".into()));
        }
        let f = self.field;
        // Row images as linear polynomials in the m target variables.
        let rows: Vec<Poly> = (0..self.n)
            .map(|i| {
                let mut raw: Vec<(Vec<u32>, Scalar)> = Vec::new();
                for j in 0..m {
                    if !matrix[i][j].is_zero() {
                        let mut e = vec![0u32; m];
                        e[j] = 1;
                        raw.push((e, matrix[i][j]));
                    }
                }
                if !offset[i].is_zero() {
                    raw.push((vec![0u32; m], offset[i]));
                }
                Poly::from_terms(f, m, raw).expect("row lengths checked")
            })
            .collect();
        let mut out = Poly::zero(f, m);
        for term in &self.terms {
            let mut prod = Poly::constant(f, m, term.coeff);
            for (i, &e) in term.exps.iter().enumerate() {
                for _ in 0..e {
                    prod = prod.mul(&rows[i])?;
                    if prod.is_zero() {
                        break;
                    }
                }
            }
            out = out.add(&prod)?;
        }
        Ok(out)
    }

    /// Substitutes the first variable and reindexes: P(v, y_1..y_{n-1}).
    pub fn specialize_first(&self, v: Scalar) -> Poly {
        let f = self.field;
        let mut acc: HashMap<Vec<u32>, Scalar> = HashMap::new();
        for t in &self.terms {
            let e0 = t.exps[0];
            let c = if e0 == 0 { t.coeff } else { f.mul(t.coeff, f.pow(v, e0 as u64)) };
            if c.is_zero() {
                continue;
            }
            let rest = t.exps[1..].to_vec();
            let slot = acc.entry(rest).or_insert(Scalar::ZERO);
            *slot = f.add(*slot, c);
        }
        Self::normalize(f, self.n - 1, acc)
    }

    /// Renames variables: term exponents move to `mapping[i]` slots of a
    /// polynomial in `new_n` variables. Used when embedding into a larger
    /// variable space.
    pub fn embed(&self, new_n: usize, mapping: &[usize]) -> Result<Poly> {
        if mapping.len() != self.n || mapping.iter().any(|&j| j >= new_n) {
            return Err(Error::ShapeMismatch("bad variable mapping in embed".into()));
        }
        let raw: Vec<(Vec<u32>, Scalar)> = self
            .terms
            .iter()
            .map(|t| {
                let mut e = vec![0u32; new_n];
                for (i, &x) in t.exps.iter().enumerate() {
                    e[mapping[i]] += x;
                }
                (e, t.coeff)
            })
            .collect();
        Poly::from_terms(self.field, new_n, raw)
    }

    /// The symmetric multilinear polarization on V^d (d = deg P, d < p):
    /// the unique symmetric multilinear map agreeing with the top homogeneous
    /// component on the diagonal.
    pub fn polarize(&self) -> Result<MultiLinearMap> {
        let d = self.degree;
        let p = self.field.p();
        if d as u64 >= p as u64 {
            return Err(Error::CharacteristicTooSmall { degree: d, p });
        }
        if d == 0 {
            return Err(Error::Invalid("polarization needs degree >= 1".into()));
        }
        let top = self.homogeneous_part();
        let shape = SpaceShape::new(self.field, vec![self.n; d as usize])?;
        let support = IndexSet::full(d as usize);
        let f = self.field;
        // 1/d! and the per-term multiplicity prod_j e_j! are invertible since d < p.
        let mut fact = vec![Scalar::ONE; d as usize + 1];
        for i in 1..=d as usize {
            fact[i] = f.mul(fact[i - 1], Scalar(i as u32 % p));
        }
        let inv_d_fact = f.inv(fact[d as usize]);
        let mut entries: HashMap<Vec<usize>, Scalar> = HashMap::new();
        for t in top.terms() {
            // Multiset of variable slots for this monomial.
            let mut slots: Vec<usize> = Vec::with_capacity(d as usize);
            let mut mult = Scalar::ONE;
            for (i, &e) in t.exps.iter().enumerate() {
                for _ in 0..e {
                    slots.push(i);
                }
                mult = f.mul(mult, fact[e as usize]);
            }
            let coeff = f.mul(f.mul(t.coeff, mult), inv_d_fact);
            for perm in distinct_permutations(&slots) {
                let slot = entries.entry(perm).or_insert(Scalar::ZERO);
                *slot = f.add(*slot, coeff);
            }
        }
        MultiLinearMap::from_entries(
            shape,
            support,
            entries.into_iter().filter(|(_, c)| !c.is_zero()).collect(),
        )
    }
}

/// All distinct permutations of a multiset, in lexicographic order.
fn distinct_permutations(items: &[usize]) -> Vec<Vec<usize>> {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    let mut out = Vec::new();
    loop {
        out.push(sorted.clone());
        // next_permutation
        let n = sorted.len();
        if n < 2 {
            break;
        }
        let mut i = n - 1;
        while i > 0 && sorted[i - 1] >= sorted[i] {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        let mut j = n - 1;
        while sorted[j] <= sorted[i - 1] {
            j -= 1;
        }
        sorted.swap(i - 1, j);
        sorted[i..].reverse();
    }
    out
}

/// Exponent vectors of all monomials in `n` variables of exact total degree
/// `d`, in canonical (graded-lex, descending) order.
pub fn monomials_exact_degree(n: usize, d: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; n];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for e in (0..=left).rev() {
            cur[pos] = e;
            rec(out, cur, pos + 1, left - e);
        }
        cur[pos] = 0;
    }
    if n == 0 {
        if d == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(&mut out, &mut cur, 0, d);
    out
}

/// Exponent vectors of all monomials of total degree at most `d`, highest
/// degree first, graded-lex within each degree.
pub fn monomials_up_to_degree(n: usize, d: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for e in (0..=d).rev() {
        out.extend(monomials_exact_degree(n, e));
    }
    out
}

// Silences the "unused" lint on the comparison helper while keeping it for
// future callers that want an explicit comparator.
#[allow(dead_code)]
fn _cmp_unused(a: &[u32], b: &[u32]) -> Ordering {
    grlex_desc(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CounterRng;

    fn f3() -> PrimeField {
        PrimeField::new(3).unwrap()
    }
    fn f5() -> PrimeField {
        PrimeField::new(5).unwrap()
    }
    fn f7() -> PrimeField {
        PrimeField::new(7).unwrap()
    }

    fn s(v: u32) -> Scalar {
        Scalar(v)
    }

    /// x1*x2 over the given field (n variables).
    fn xy(field: PrimeField, n: usize) -> Poly {
        let mut e = vec![0u32; n];
        e[0] = 1;
        e[1] = 1;
        Poly::monomial(field, n, e, Scalar::ONE).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let p = xy(f3(), 2);
        assert_eq!(p.evaluate(&[s(1), s(2)]).unwrap(), s(2));
        assert_eq!(Poly::zero(f3(), 2).evaluate(&[s(2), s(2)]).unwrap(), s(0));
        // x1^2 + x2 over F_5 at (3,4): 9 + 4 = 13 = 3.
        let q = Poly::from_terms(f5(), 2, vec![(vec![2, 0], s(1)), (vec![0, 1], s(1))]).unwrap();
        assert_eq!(q.evaluate(&[s(3), s(4)]).unwrap(), s(3));
        assert!(q.evaluate(&[s(1)]).is_err());
    }

    #[test]
    fn homogeneous_part_examples() {
        let p = Poly::from_terms(
            f5(),
            1,
            vec![(vec![2], s(1)), (vec![1], s(1)), (vec![0], s(1))],
        )
        .unwrap();
        let top = p.homogeneous_part();
        assert_eq!(top, Poly::monomial(f5(), 1, vec![2], s(1)).unwrap());
        // Idempotent, and identity on homogeneous input.
        assert_eq!(top.homogeneous_part(), top);
        let q = Poly::from_terms(
            f3(),
            4,
            vec![(vec![1, 1, 0, 0], s(1)), (vec![0, 0, 1, 1], s(1)), (vec![1, 0, 0, 0], s(1))],
        )
        .unwrap();
        let expect = Poly::from_terms(
            f3(),
            4,
            vec![(vec![1, 1, 0, 0], s(1)), (vec![0, 0, 1, 1], s(1))],
        )
        .unwrap();
        assert_eq!(q.homogeneous_part(), expect);
        assert!(Poly::zero(f3(), 2).homogeneous_part().is_zero());
    }

    #[test]
    fn discrete_derivative_examples() {
        // P = x^2 over F_5, t = (c): 2cx + c^2.
        for c in 0..5u32 {
            let p = Poly::monomial(f5(), 1, vec![2], s(1)).unwrap();
            let d = p.discrete_derivative(&[s(c)]).unwrap();
            let expect = Poly::from_terms(
                f5(),
                1,
                vec![(vec![1], f5().scalar(2 * c as i64)), (vec![0], f5().scalar((c * c) as i64))],
            )
            .unwrap();
            assert_eq!(d, expect);
        }
        // Homogeneous linear P: the constant P(t).
        let l = Poly::from_terms(f5(), 2, vec![(vec![1, 0], s(2)), (vec![0, 1], s(3))]).unwrap();
        let d = l.discrete_derivative(&[s(1), s(4)]).unwrap();
        assert_eq!(d, Poly::constant(f5(), 2, l.evaluate(&[s(1), s(4)]).unwrap()));
    }

    #[test]
    fn discrete_derivative_drops_degree_randomized() {
        let f = f7();
        let mut rng = CounterRng::new(2024);
        for _ in 0..100 {
            let n = 1 + rng.below(3) as usize;
            let d = 1 + rng.below(4) as u32;
            let monos = monomials_up_to_degree(n, d);
            let raw: Vec<(Vec<u32>, Scalar)> =
                monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect();
            let p = Poly::from_terms(f, n, raw).unwrap();
            if p.is_zero() {
                continue;
            }
            let t: Vec<Scalar> = (0..n).map(|_| rng.scalar(f)).collect();
            let dp = p.discrete_derivative(&t).unwrap();
            assert!(
                dp.is_zero() || dp.degree() < p.degree().max(1),
                "degree did not drop: {:?} -> {:?}",
                p,
                dp
            );
        }
    }

    #[test]
    fn derivative_operators_commute() {
        let f = f5();
        let mut rng = CounterRng::new(99);
        for _ in 0..50 {
            let n = 2 + rng.below(2) as usize;
            let monos = monomials_up_to_degree(n, 3);
            let raw: Vec<(Vec<u32>, Scalar)> =
                monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect();
            let p = Poly::from_terms(f, n, raw).unwrap();
            let t: Vec<Scalar> = (0..n).map(|_| rng.scalar(f)).collect();
            let u: Vec<Scalar> = (0..n).map(|_| rng.scalar(f)).collect();
            let a = p.discrete_derivative(&t).unwrap().discrete_derivative(&u).unwrap();
            let b = p.discrete_derivative(&u).unwrap().discrete_derivative(&t).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ring_homomorphism_exhaustive_f3() {
        let f = f3();
        let mut rng = CounterRng::new(7);
        for _ in 0..20 {
            let n = 1 + rng.below(3) as usize;
            let monos = monomials_up_to_degree(n, 2);
            let a = Poly::from_terms(
                f,
                n,
                monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect(),
            )
            .unwrap();
            let b = Poly::from_terms(
                f,
                n,
                monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect(),
            )
            .unwrap();
            let sum = a.add(&b).unwrap();
            let prod = a.mul(&b).unwrap();
            let total = 3u64.pow(n as u32);
            for rank in 0..total {
                let mut x = Vec::with_capacity(n);
                let mut r = rank;
                for _ in 0..n {
                    x.push(Scalar((r % 3) as u32));
                    r /= 3;
                }
                let va = a.evaluate(&x).unwrap();
                let vb = b.evaluate(&x).unwrap();
                assert_eq!(sum.evaluate(&x).unwrap(), f.add(va, vb));
                assert_eq!(prod.evaluate(&x).unwrap(), f.mul(va, vb));
            }
        }
    }

    #[test]
    fn polarize_square_is_product() {
        // P = x^2 over F_5: polarization t1*t2.
        let p = Poly::monomial(f5(), 1, vec![2], s(1)).unwrap();
        let m = p.polarize().unwrap();
        let entries: Vec<(Vec<usize>, Scalar)> = m.entries().collect();
        assert_eq!(entries, vec![(vec![0, 0], s(1))]);
    }

    #[test]
    fn polarize_diagonal_and_symmetry() {
        // Exhaustive-ish check p=5, n<=3, d<=3: diagonal restriction equals
        // the top homogeneous part, and the tensor is symmetric.
        let f = f5();
        let mut rng = CounterRng::new(41);
        for _ in 0..60 {
            let n = 1 + rng.below(3) as usize;
            let d = 1 + rng.below(3) as u32;
            let monos = monomials_up_to_degree(n, d);
            let p = Poly::from_terms(
                f,
                n,
                monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect(),
            )
            .unwrap();
            if p.is_zero() || p.degree() == 0 {
                continue;
            }
            let bar = p.polarize().unwrap();
            assert!(bar.is_symmetric());
            let top = p.homogeneous_part();
            // Compare on every point of F_5^n.
            let total = 5u64.pow(n as u32);
            for rank in 0..total {
                let mut x = Vec::with_capacity(n);
                let mut r = rank;
                for _ in 0..n {
                    x.push(Scalar((r % 5) as u32));
                    r /= 5;
                }
                let diag = bar.evaluate_blocks(&vec![x.clone(); p.degree() as usize]).unwrap();
                assert_eq!(diag, top.evaluate(&x).unwrap());
            }
        }
    }

    #[test]
    fn polarize_rejects_large_degree() {
        let p = Poly::monomial(f3(), 1, vec![3], s(1)).unwrap();
        assert!(matches!(p.polarize(), Err(Error::CharacteristicTooSmall { .. })));
    }

    #[test]
    fn restrict_affine_examples() {
        let f = f3();
        let p = Poly::from_terms(f, 2, vec![(vec![1, 1], s(1)), (vec![1, 0], s(2))]).unwrap();
        // Identity map.
        let id = vec![vec![s(1), s(0)], vec![s(0), s(1)]];
        assert_eq!(p.restrict_affine(&id, &[s(0), s(0)]).unwrap(), p);
        // Constant map w = (1, 2): P(1,2) = 2 + 2 = 4 = 1.
        let zero_m = vec![vec![], vec![]];
        let c = p.restrict_affine(&zero_m, &[s(1), s(2)]).unwrap();
        assert_eq!(c, Poly::constant(f, 0, s(1)));
        // x1*x2 with w(t) = (t, t) gives t^2.
        let q = xy(f3(), 2);
        let diag = vec![vec![s(1)], vec![s(1)]];
        assert_eq!(
            q.restrict_affine(&diag, &[s(0), s(0)]).unwrap(),
            Poly::monomial(f, 1, vec![2], s(1)).unwrap()
        );
    }

    #[test]
    fn restrict_affine_composes() {
        let f = f5();
        let mut rng = CounterRng::new(5150);
        for _ in 0..30 {
            let n = 2;
            let m1 = 2usize;
            let m2 = 2usize;
            let monos = monomials_up_to_degree(n, 3);
            let p = Poly::from_terms(
                f,
                n,
                monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect(),
            )
            .unwrap();
            let w1: Vec<Vec<Scalar>> =
                (0..n).map(|_| (0..m1).map(|_| rng.scalar(f)).collect()).collect();
            let c1: Vec<Scalar> = (0..n).map(|_| rng.scalar(f)).collect();
            let w2: Vec<Vec<Scalar>> =
                (0..m1).map(|_| (0..m2).map(|_| rng.scalar(f)).collect()).collect();
            let c2: Vec<Scalar> = (0..m1).map(|_| rng.scalar(f)).collect();
            let lhs = p.restrict_affine(&w1, &c1).unwrap().restrict_affine(&w2, &c2).unwrap();
            // w1 o w2: matrix product, offset w1*c2 + c1.
            let prod: Vec<Vec<Scalar>> = (0..n)
                .map(|i| {
                    (0..m2)
                        .map(|j| {
                            let mut acc = Scalar::ZERO;
                            for k in 0..m1 {
                                acc = f.add(acc, f.mul(w1[i][k], w2[k][j]));
                            }
                            acc
                        })
                        .collect()
                })
                .collect();
            let off: Vec<Scalar> = (0..n)
                .map(|i| {
                    let mut acc = c1[i];
                    for k in 0..m1 {
                        acc = f.add(acc, f.mul(w1[i][k], c2[k]));
                    }
                    acc
                })
                .collect();
            let rhs = p.restrict_affine(&prod, &off).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn degree_does_not_increase_under_affine() {
        let f = f3();
        let mut rng = CounterRng::new(13);
        for _ in 0..40 {
            let monos = monomials_up_to_degree(3, 3);
            let p = Poly::from_terms(
                f,
                3,
                monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect(),
            )
            .unwrap();
            let w: Vec<Vec<Scalar>> =
                (0..3).map(|_| (0..2).map(|_| rng.scalar(f)).collect()).collect();
            let c: Vec<Scalar> = (0..3).map(|_| rng.scalar(f)).collect();
            let q = p.restrict_affine(&w, &c).unwrap();
            assert!(q.degree() <= p.degree());
        }
    }

    #[test]
    fn canonical_order_is_graded_lex() {
        let f = f5();
        let p = Poly::from_terms(
            f,
            2,
            vec![(vec![0, 0], s(1)), (vec![2, 0], s(1)), (vec![0, 1], s(1)), (vec![1, 1], s(1))],
        )
        .unwrap();
        let degs: Vec<u32> = p.terms().map(|t| t.total_degree()).collect();
        assert_eq!(degs, vec![2, 2, 1, 0]);
        let exps: Vec<Vec<u32>> = p.terms().map(|t| t.exps).collect();
        assert_eq!(exps[0], vec![2, 0]);
        assert_eq!(exps[1], vec![1, 1]);
    }

    #[test]
    fn specialize_first_consistent_with_evaluate() {
        let f = f5();
        let mut rng = CounterRng::new(3033);
        for _ in 0..30 {
            let monos = monomials_up_to_degree(3, 3);
            let p = Poly::from_terms(
                f,
                3,
                monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect(),
            )
            .unwrap();
            let v = rng.scalar(f);
            let q = p.specialize_first(v);
            for a in 0..5u32 {
                for b in 0..5u32 {
                    assert_eq!(
                        q.evaluate(&[s(a), s(b)]).unwrap(),
                        p.evaluate(&[v, s(a), s(b)]).unwrap()
                    );
                }
            }
        }
    }
}
