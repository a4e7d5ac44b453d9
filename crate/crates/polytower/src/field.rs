//! Prime-field scalar arithmetic, additive characters, product-space points
//! and deterministic domain enumeration.
//!
//! Everything here is a plain value: fields, shapes and points are cheap to
//! clone and safe to share across threads. Randomness is counter-based, so a
//! `(seed, index)` pair fully determines a sample with no shared state.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::TAU;
use std::fmt;

/// Canonical element of F_p, the representative in `[0, p)`.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Scalar(pub u32);

impl Scalar {
    pub const ZERO: Scalar = Scalar(0);
    pub const ONE: Scalar = Scalar(1);

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The prime field F_p for a checked prime `2 <= p < 2^31`.
///
/// All scalar operations are total on canonical representatives; inversion
/// panics on zero (callers check first, as with integer division).
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug)]
pub struct PrimeField {
    p: u32,
}

impl PrimeField {
    pub fn new(p: u32) -> Result<Self> {
        if p < 2 || p >= (1 << 31) || !is_prime_u64(p as u64) {
            return Err(Error::NotPrime(p as u64));
        }
        Ok(PrimeField { p })
    }

    #[inline]
    pub fn p(&self) -> u32 {
        self.p
    }

    /// Reduces an arbitrary signed integer to its canonical representative.
    #[inline]
    pub fn scalar(&self, v: i64) -> Scalar {
        let m = v.rem_euclid(self.p as i64);
        Scalar(m as u32)
    }

    #[inline]
    pub fn scalar_u64(&self, v: u64) -> Scalar {
        Scalar((v % self.p as u64) as u32)
    }

    #[inline]
    pub fn add(&self, a: Scalar, b: Scalar) -> Scalar {
        let s = a.0 as u64 + b.0 as u64;
        Scalar(if s >= self.p as u64 { (s - self.p as u64) as u32 } else { s as u32 })
    }

    #[inline]
    pub fn sub(&self, a: Scalar, b: Scalar) -> Scalar {
        if a.0 >= b.0 {
            Scalar(a.0 - b.0)
        } else {
            Scalar(a.0 + self.p - b.0)
        }
    }

    #[inline]
    pub fn neg(&self, a: Scalar) -> Scalar {
        if a.0 == 0 {
            a
        } else {
            Scalar(self.p - a.0)
        }
    }

    #[inline]
    pub fn mul(&self, a: Scalar, b: Scalar) -> Scalar {
        Scalar(((a.0 as u64 * b.0 as u64) % self.p as u64) as u32)
    }

    pub fn pow(&self, a: Scalar, mut e: u64) -> Scalar {
        let mut base = a;
        let mut acc = Scalar::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse of a nonzero scalar.
    pub fn inv(&self, a: Scalar) -> Scalar {
        assert!(!a.is_zero(), "inverse of zero in F_{}", self.p);
        self.pow(a, self.p as u64 - 2)
    }

    /// Whether `a` is a square in F_p (0 counts as a square).
    pub fn is_square(&self, a: Scalar) -> bool {
        if a.is_zero() || self.p == 2 {
            return true;
        }
        self.pow(a, (self.p as u64 - 1) / 2) == Scalar::ONE
    }

    /// A square root of `a` when one exists (Tonelli-Shanks).
    pub fn sqrt(&self, a: Scalar) -> Option<Scalar> {
        if a.is_zero() {
            return Some(Scalar::ZERO);
        }
        if self.p == 2 {
            return Some(a);
        }
        if !self.is_square(a) {
            return None;
        }
        let p = self.p as u64;
        if p % 4 == 3 {
            return Some(self.pow(a, (p + 1) / 4));
        }
        // Tonelli-Shanks for p = 1 mod 4.
        let mut q = p - 1;
        let mut s = 0u32;
        while q % 2 == 0 {
            q /= 2;
            s += 1;
        }
        let mut z = Scalar(2);
        while self.is_square(z) {
            z = self.add(z, Scalar::ONE);
        }
        let mut m = s;
        let mut c = self.pow(z, q);
        let mut t = self.pow(a, q);
        let mut r = self.pow(a, (q + 1) / 2);
        while t != Scalar::ONE {
            let mut i = 0u32;
            let mut t2 = t;
            while t2 != Scalar::ONE {
                t2 = self.mul(t2, t2);
                i += 1;
            }
            let b = self.pow(c, 1u64 << (m - i - 1));
            m = i;
            c = self.mul(b, b);
            t = self.mul(t, c);
            r = self.mul(r, b);
        }
        Some(r)
    }

    /// The fixed additive character chi(a) = e^{2 pi i a / p}.
    #[inline]
    pub fn character(&self, a: Scalar) -> Complex64 {
        self.character_t(a, 1)
    }

    /// The character chi_t(a) = e^{2 pi i t a / p} for an exponent `t`.
    pub fn character_t(&self, a: Scalar, t: u32) -> Complex64 {
        let ta = (a.0 as u64 * t as u64) % self.p as u64;
        Complex64::from_polar(1.0, TAU * ta as f64 / self.p as f64)
    }
}

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for q in [2u64, 3, 5, 7, 11, 13] {
        if n == q {
            return true;
        }
        if n % q == 0 {
            return false;
        }
    }
    // Deterministic Miller-Rabin; bases {2, 7, 61} decide n < 2^32.
    let d0 = n - 1;
    let s = d0.trailing_zeros();
    let d = d0 >> s;
    'witness: for a in [2u64, 7, 61] {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut a: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    a %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod_u64(acc, a, m);
        }
        a = mul_mod_u64(a, a, m);
        e >>= 1;
    }
    acc
}

/// Default cap on exhaustive enumeration: 2^32 points.
pub const DEFAULT_ENUM_LIMIT: u64 = 1 << 32;

/// The shape of a product space V_1 x ... x V_k with V_i = F_p^{n_i}.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct SpaceShape {
    field: PrimeField,
    dims: Vec<usize>,
}

impl SpaceShape {
    pub fn new(field: PrimeField, dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid("shape needs k >= 1 factors, each of dimension >= 1".into()));
        }
        Ok(SpaceShape { field, dims })
    }

    /// Single-factor shape F_p^n, the domain of ordinary polynomials.
    pub fn single(field: PrimeField, n: usize) -> Result<Self> {
        Self::new(field, vec![n])
    }

    #[inline]
    pub fn field(&self) -> PrimeField {
        self.field
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of factors k.
    #[inline]
    pub fn factors(&self) -> usize {
        self.dims.len()
    }

    /// Total coordinate count over all factors.
    #[inline]
    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// |V| = p^(sum of dims), exact.
    pub fn point_count(&self) -> u128 {
        let mut c: u128 = 1;
        for _ in 0..self.total_dim() {
            c = c.saturating_mul(self.field.p as u128);
        }
        c
    }

    pub fn check_limit(&self, limit: u64) -> Result<u64> {
        let c = self.point_count();
        if c > limit as u128 {
            return Err(Error::LimitExceeded { points: c, limit });
        }
        Ok(c as u64)
    }

    /// The point at a given rank in lexicographic order (first coordinate of
    /// the first factor is most significant).
    pub fn point_at(&self, rank: u64) -> Point {
        let p = self.field.p as u64;
        let total = self.total_dim();
        let mut flat = vec![Scalar::ZERO; total];
        let mut r = rank;
        for i in (0..total).rev() {
            flat[i] = Scalar((r % p) as u32);
            r /= p;
        }
        self.point_from_flat(&flat)
    }

    pub fn point_from_flat(&self, flat: &[Scalar]) -> Point {
        debug_assert_eq!(flat.len(), self.total_dim());
        let mut coords = Vec::with_capacity(self.dims.len());
        let mut off = 0;
        for &d in &self.dims {
            coords.push(flat[off..off + d].to_vec());
            off += d;
        }
        Point { coords }
    }

    /// Drops the factors listed in `remove` (sorted, 0-based), keeping order.
    pub fn without_factors(&self, remove: &[usize]) -> Result<SpaceShape> {
        let dims: Vec<usize> = (0..self.dims.len())
            .filter(|i| !remove.contains(i))
            .map(|i| self.dims[i])
            .collect();
        SpaceShape::new(self.field, dims)
    }
}

/// A point of a product space: one coordinate vector per factor.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Point {
    pub coords: Vec<Vec<Scalar>>,
}

impl Point {
    pub fn single(coords: Vec<Scalar>) -> Point {
        Point { coords: vec![coords] }
    }

    pub fn zero(shape: &SpaceShape) -> Point {
        Point { coords: shape.dims().iter().map(|&d| vec![Scalar::ZERO; d]).collect() }
    }

    #[inline]
    pub fn factor(&self, i: usize) -> &[Scalar] {
        &self.coords[i]
    }

    pub fn matches(&self, shape: &SpaceShape) -> bool {
        self.coords.len() == shape.factors()
            && self.coords.iter().zip(shape.dims()).all(|(c, &d)| c.len() == d)
    }

    pub fn flat(&self) -> Vec<Scalar> {
        self.coords.iter().flatten().copied().collect()
    }
}

/// Deterministic stream of every point of a shape, in lexicographic order.
///
/// The stream is index-addressable, so consumers may split `0..count` into
/// disjoint chunks and walk them in parallel.
pub struct PointStream<'a> {
    shape: &'a SpaceShape,
    next: u64,
    count: u64,
}

impl<'a> PointStream<'a> {
    pub fn count(&self) -> u64 {
        self.count
    }
}

impl<'a> Iterator for PointStream<'a> {
    type Item = Point;

    fn next(&mut self) -> Option<Point> {
        if self.next >= self.count {
            return None;
        }
        let pt = self.shape.point_at(self.next);
        self.next += 1;
        Some(pt)
    }
}

/// Enumerates all points of a shape, erroring when the domain exceeds `limit`.
pub fn enumerate(shape: &SpaceShape, limit: u64) -> Result<PointStream<'_>> {
    let count = shape.check_limit(limit)?;
    Ok(PointStream { shape, next: 0, count })
}

const MIX_GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_KEY: u64 = 0xA076_1D64_78BD_642F;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(MIX_GOLDEN);
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator: a keyed splitmix64 stream. No shared state; the
/// whole sequence is determined by the construction key.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { key: splitmix64(seed ^ MIX_KEY), counter: 0 }
    }

    /// Substream `index` of a seed, for counter-based sampling.
    pub fn keyed(seed: u64, index: u64) -> Self {
        let k = splitmix64(seed ^ MIX_KEY) ^ splitmix64(index.wrapping_mul(MIX_GOLDEN));
        CounterRng { key: splitmix64(k), counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = splitmix64(self.key ^ self.counter.wrapping_mul(MIX_GOLDEN));
        self.counter += 1;
        v
    }

    /// Uniform draw from `[0, n)` by rejection, so there is no modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    pub fn scalar(&mut self, field: PrimeField) -> Scalar {
        Scalar(self.below(field.p() as u64) as u32)
    }

    /// Nonzero scalar.
    pub fn scalar_nonzero(&mut self, field: PrimeField) -> Scalar {
        Scalar(1 + self.below(field.p() as u64 - 1) as u32)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

/// Uniform point fully determined by `(seed, index)`.
pub fn random_point(shape: &SpaceShape, seed: u64, index: u64) -> Point {
    let mut rng = CounterRng::keyed(seed, index);
    let coords = shape
        .dims()
        .iter()
        .map(|&d| (0..d).map(|_| rng.scalar(shape.field())).collect())
        .collect();
    Point { coords }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_primes() {
        for p in [0u32, 1, 4, 9, 15, 21, 1 << 31] {
            assert!(PrimeField::new(p).is_err(), "p = {p}");
        }
        for p in [2u32, 3, 5, 7, 31, 101, 2147483647] {
            assert!(PrimeField::new(p).is_ok(), "p = {p}");
        }
    }

    #[test]
    fn field_axioms_exhaustive_small_p() {
        for p in [2u32, 3, 5, 7] {
            let f = PrimeField::new(p).unwrap();
            let all: Vec<Scalar> = (0..p).map(Scalar).collect();
            for &a in &all {
                for &b in &all {
                    assert_eq!(f.add(a, b), f.add(b, a));
                    assert_eq!(f.mul(a, b), f.mul(b, a));
                    for &c in &all {
                        assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
                        assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                        assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                    }
                    assert_eq!(f.sub(f.add(a, b), b), a);
                }
                assert_eq!(f.add(a, f.neg(a)), Scalar::ZERO);
                if !a.is_zero() {
                    assert_eq!(f.mul(a, f.inv(a)), Scalar::ONE);
                }
            }
        }
    }

    #[test]
    fn character_is_additive() {
        let f = PrimeField::new(5).unwrap();
        assert!((f.character(Scalar::ZERO) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        for a in 0..5 {
            for b in 0..5 {
                let lhs = f.character(Scalar(a)) * f.character(Scalar(b));
                let rhs = f.character(f.add(Scalar(a), Scalar(b)));
                assert!((lhs - rhs).norm() < 1e-12);
            }
        }
        // chi(1) chi(2) = chi(0) = 1 over F_3.
        let f3 = PrimeField::new(3).unwrap();
        let prod = f3.character(Scalar(1)) * f3.character(Scalar(2));
        assert!((prod - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn character_orthogonality() {
        for p in [2u32, 3, 5, 7, 11, 97] {
            let f = PrimeField::new(p).unwrap();
            let sum: Complex64 = (0..p).map(|a| f.character(Scalar(a))).sum();
            assert!(sum.norm() < 1e-10, "p = {p}: |sum| = {}", sum.norm());
            for t in 1..p.min(8) {
                let sum_t: Complex64 = (0..p).map(|a| f.character_t(Scalar(a), t)).sum();
                assert!(sum_t.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn sqrt_roundtrip() {
        for p in [3u32, 5, 7, 13, 17, 101] {
            let f = PrimeField::new(p).unwrap();
            for a in 0..p {
                let a = Scalar(a);
                match f.sqrt(a) {
                    Some(r) => assert_eq!(f.mul(r, r), a),
                    None => assert!(!f.is_square(a)),
                }
            }
        }
    }

    #[test]
    fn enumerate_lexicographic_and_complete() {
        let f = PrimeField::new(2).unwrap();
        let shape = SpaceShape::single(f, 2).unwrap();
        let pts: Vec<Vec<u32>> = enumerate(&shape, DEFAULT_ENUM_LIMIT)
            .unwrap()
            .map(|pt| pt.flat().iter().map(|s| s.0).collect())
            .collect();
        assert_eq!(pts, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);

        let f3 = PrimeField::new(3).unwrap();
        let shape2 = SpaceShape::new(f3, vec![1, 1]).unwrap();
        assert_eq!(enumerate(&shape2, DEFAULT_ENUM_LIMIT).unwrap().count(), 9);

        let f5 = PrimeField::new(5).unwrap();
        let shape3 = SpaceShape::single(f5, 9).unwrap();
        assert_eq!(enumerate(&shape3, DEFAULT_ENUM_LIMIT).unwrap().count, 1_953_125);
    }

    #[test]
    fn enumerate_distinct_points() {
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::new(f, vec![2, 1]).unwrap();
        let mut seen = std::collections::HashSet::new();
        for pt in enumerate(&shape, DEFAULT_ENUM_LIMIT).unwrap() {
            assert!(seen.insert(pt.flat()));
        }
        assert_eq!(seen.len(), 27);
    }

    #[test]
    fn enumerate_respects_limit() {
        let f = PrimeField::new(5).unwrap();
        let shape = SpaceShape::single(f, 9).unwrap();
        match enumerate(&shape, 1000) {
            Err(Error::LimitExceeded { points, limit }) => {
                assert_eq!(points, 1_953_125);
                assert_eq!(limit, 1000);
            }
            _ => panic!("expected LimitExceeded"),
        }
    }

    #[test]
    fn random_point_deterministic() {
        let f = PrimeField::new(5).unwrap();
        let shape = SpaceShape::new(f, vec![3, 2]).unwrap();
        let a = random_point(&shape, 42, 7);
        let b = random_point(&shape, 42, 7);
        assert_eq!(a, b);
        assert!(a.matches(&shape));
        let c = random_point(&shape, 42, 8);
        let d = random_point(&shape, 43, 7);
        assert!(a != c || a != d, "distinct indices/seeds should not all collide");
    }

    #[test]
    fn random_point_uniform_mean() {
        // Mean of the first coordinate over 10^5 draws, p = 5: expectation 2,
        // sigma = sqrt(2)/sqrt(1e5); require agreement within 3 sigma.
        let f = PrimeField::new(5).unwrap();
        let shape = SpaceShape::single(f, 1).unwrap();
        let n = 100_000u64;
        let sum: u64 = (0..n).map(|i| random_point(&shape, 12345, i).coords[0][0].0 as u64).sum();
        let mean = sum as f64 / n as f64;
        let sigma = (2.0f64).sqrt() / (n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * sigma, "mean = {mean}");
    }

    #[test]
    fn random_point_serial_correlation() {
        // Lag-1 correlation of first coordinates across consecutive indices
        // must be small: |r| < 4/sqrt(N) for N = 1e5.
        let f = PrimeField::new(5).unwrap();
        let shape = SpaceShape::single(f, 1).unwrap();
        let n = 100_000usize;
        let xs: Vec<f64> =
            (0..n as u64).map(|i| random_point(&shape, 7, i).coords[0][0].0 as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let cov = xs
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        let r = cov / var;
        assert!(r.abs() < 4.0 / (n as f64).sqrt(), "lag-1 correlation = {r}");
    }
}
