//! Exact zero-locus enumeration, level-set histograms, bias, Monte-Carlo
//! estimation, and the empirical verifiers for the equidistribution lemmas.
//!
//! Every bias value is derived from an exact integer histogram; floating
//! point enters only at the final character-sum step. Enumeration is
//! chunk-parallel with commutative integer merging, so results are
//! schedule-independent.

use crate::error::{Error, Result};
use crate::field::{random_point, Point, PrimeField, Scalar, SpaceShape};
use crate::multiaffine::{IndexSet, MultiAffineMap, MultiLinearMap};
use crate::poly::Poly;
use crate::tower::{Flavor, Tower};
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::HashSet;
use std::f64::consts::TAU;

/// Exact integer counts N_a = #{x in X : P(x) = a}. The single source of
/// truth for every bias value.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LevelSetHistogram {
    p: u32,
    counts: Vec<u64>,
    domain_size: u64,
}

impl LevelSetHistogram {
    pub fn new(p: u32) -> LevelSetHistogram {
        LevelSetHistogram { p, counts: vec![0; p as usize], domain_size: 0 }
    }

    #[inline]
    pub fn bump(&mut self, value: Scalar) {
        self.counts[value.0 as usize] += 1;
        self.domain_size += 1;
    }

    pub fn merge(mut self, other: LevelSetHistogram) -> LevelSetHistogram {
        debug_assert_eq!(self.p, other.p);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.domain_size += other.domain_size;
        self
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn domain_size(&self) -> u64 {
        self.domain_size
    }

    /// The complex character sum sum_a N_a chi_t(a), exact counts to f64.
    pub fn char_sum(&self, t: u32) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, &n) in self.counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let phase = TAU * ((a as u64 * t as u64) % self.p as u64) as f64 / self.p as f64;
            acc += Complex64::from_polar(n as f64, phase);
        }
        acc
    }

    /// |sum_a N_a chi_t(a)|^2 via the integer autocorrelation expansion
    /// sum_d W_d cos(2 pi d t / p); more stable than squaring a float sum.
    pub fn char_sum_sq(&self, t: u32) -> f64 {
        let p = self.p as usize;
        let mut w = vec![0u128; p];
        for a in 0..p {
            if self.counts[a] == 0 {
                continue;
            }
            for d in 0..p {
                w[d] += self.counts[a] as u128 * self.counts[(a + d) % p] as u128;
            }
        }
        let mut acc = 0.0f64;
        for (d, &wd) in w.iter().enumerate() {
            let angle = TAU * ((d as u64 * t as u64) % self.p as u64) as f64 / self.p as f64;
            acc += wd as f64 * angle.cos();
        }
        acc.max(0.0)
    }
}

/// Bias report: exact histogram plus the derived complex mean.
#[derive(Clone, Debug)]
pub struct BiasReport {
    pub histogram: LevelSetHistogram,
    pub bias: f64,
    pub real_part: f64,
    pub imag_part: f64,
    /// -log_q(bias); infinite when the bias is zero.
    pub log_q_bias: f64,
    pub character_exponent: u32,
}

impl BiasReport {
    pub fn from_histogram(hist: LevelSetHistogram, t: u32) -> BiasReport {
        let n = hist.domain_size();
        if n == 0 {
            // E over the empty set is 0 by convention.
            return BiasReport {
                histogram: hist,
                bias: 0.0,
                real_part: 0.0,
                imag_part: 0.0,
                log_q_bias: f64::INFINITY,
                character_exponent: t,
            };
        }
        let sum = hist.char_sum(t);
        let bias = (hist.char_sum_sq(t)).sqrt() / n as f64;
        let q = hist.p() as f64;
        let log_q_bias = if bias > 0.0 { -bias.ln() / q.ln() } else { f64::INFINITY };
        BiasReport {
            bias,
            real_part: sum.re / n as f64,
            imag_part: sum.im / n as f64,
            log_q_bias,
            character_exponent: t,
            histogram: hist,
        }
    }
}

/// A map whose level sets are being counted.
#[derive(Copy, Clone)]
pub enum MapRef<'a> {
    Poly(&'a Poly),
    Affine(&'a MultiAffineMap),
    Linear(&'a MultiLinearMap),
}

impl<'a> MapRef<'a> {
    fn field(&self) -> PrimeField {
        match self {
            MapRef::Poly(p) => p.field(),
            MapRef::Affine(m) => m.shape().field(),
            MapRef::Linear(m) => m.shape().field(),
        }
    }
}

const PAR_POINT_THRESHOLD: u64 = 1 << 14;

/// Exact level-set histogram of a map over the full space or over the zero
/// locus of a tower of the matching flavor.
pub fn level_histogram(
    target: MapRef<'_>,
    domain: Option<&Tower>,
    limit: u64,
) -> Result<LevelSetHistogram> {
    match target {
        MapRef::Poly(p) => {
            let tower_maps: Vec<Poly> = match domain {
                None => Vec::new(),
                Some(t) => {
                    if t.flavor() != Flavor::Polynomial {
                        return Err(Error::FlavorMismatch(
                            "polynomial target needs a polynomial tower domain".into(),
                        ));
                    }
                    if t.shape().dims()[0] != p.num_vars() || t.shape().field() != p.field() {
                        return Err(Error::ShapeMismatch("tower space differs from target".into()));
                    }
                    t.all_poly_maps().into_iter().cloned().collect()
                }
            };
            poly_histogram(p, &tower_maps, limit)
        }
        MapRef::Affine(_) | MapRef::Linear(_) => {
            let shape = match target {
                MapRef::Affine(m) => m.shape().clone(),
                MapRef::Linear(m) => m.shape().clone(),
                MapRef::Poly(_) => unreachable!(),
            };
            if let Some(t) = domain {
                if t.flavor() == Flavor::Polynomial {
                    return Err(Error::FlavorMismatch(
                        "product-space target needs a product-space tower".into(),
                    ));
                }
                if t.shape() != &shape {
                    return Err(Error::ShapeMismatch("tower shape differs from target".into()));
                }
            }
            let count = shape.check_limit(limit)?;
            let field = shape.field();
            let tower_maps: Vec<MultiAffineMap> =
                domain.map(|t| t.all_affine_maps().into_iter().cloned().collect()).unwrap_or_default();
            let eval = |pt: &Point| -> Result<Option<Scalar>> {
                for m in &tower_maps {
                    if !m.evaluate(pt)?.is_zero() {
                        return Ok(None);
                    }
                }
                let v = match target {
                    MapRef::Affine(m) => m.evaluate(pt)?,
                    MapRef::Linear(m) => m.evaluate(pt)?,
                    MapRef::Poly(_) => unreachable!(),
                };
                Ok(Some(v))
            };
            let chunk = PAR_POINT_THRESHOLD;
            let starts: Vec<u64> = (0..count).step_by(chunk as usize).collect();
            let parts: Vec<Result<LevelSetHistogram>> = starts
                .par_iter()
                .map(|&start| {
                    let mut hist = LevelSetHistogram::new(field.p());
                    for rank in start..(start + chunk).min(count) {
                        let pt = shape.point_at(rank);
                        if let Some(v) = eval(&pt)? {
                            hist.bump(v);
                        }
                    }
                    Ok(hist)
                })
                .collect();
            let mut acc = LevelSetHistogram::new(field.p());
            for part in parts {
                acc = acc.merge(part?);
            }
            Ok(acc)
        }
    }
}

/// Histogram of a polynomial over F_p^n, or over the joint zero locus of
/// `tower_maps`, by recursive specialization of the first variable with
/// pruning on nonzero constants.
fn poly_histogram(target: &Poly, tower_maps: &[Poly], limit: u64) -> Result<LevelSetHistogram> {
    let field = target.field();
    let n = target.num_vars();
    for t in tower_maps {
        if t.num_vars() != n || t.field() != field {
            return Err(Error::ShapeMismatch("tower map space differs from target".into()));
        }
    }
    let shape = SpaceShape::single(field, n.max(1))?;
    let count = if n == 0 { 1 } else { shape.check_limit(limit)? };
    let p = field.p() as u64;

    // Parallel split over the first two variables when the domain is large.
    if n >= 2 && count >= PAR_POINT_THRESHOLD {
        let mut tasks: Vec<(Vec<Poly>, Poly)> = Vec::with_capacity((p * p) as usize);
        'outer: for v0 in 0..p {
            let s0 = Scalar(v0 as u32);
            let mut t0: Vec<Poly> = Vec::with_capacity(tower_maps.len());
            for m in tower_maps {
                let sp = m.specialize_first(s0);
                if sp.is_constant() {
                    if !sp.constant_term().is_zero() {
                        continue 'outer;
                    }
                } else {
                    t0.push(sp);
                }
            }
            let g0 = target.specialize_first(s0);
            'inner: for v1 in 0..p {
                let s1 = Scalar(v1 as u32);
                let mut t1: Vec<Poly> = Vec::with_capacity(t0.len());
                for m in &t0 {
                    let sp = m.specialize_first(s1);
                    if sp.is_constant() {
                        if !sp.constant_term().is_zero() {
                            continue 'inner;
                        }
                    } else {
                        t1.push(sp);
                    }
                }
                tasks.push((t1, g0.specialize_first(s1)));
            }
        }
        let hist = tasks
            .into_par_iter()
            .map(|(tower, tgt)| walk_histogram(&tower, &tgt, field))
            .reduce(|| LevelSetHistogram::new(field.p()), LevelSetHistogram::merge);
        return Ok(hist);
    }
    Ok(walk_histogram(tower_maps, target, field))
}

fn walk_histogram(tower: &[Poly], target: &Poly, field: PrimeField) -> LevelSetHistogram {
    let mut hist = LevelSetHistogram::new(field.p());
    walk_histogram_into(tower, target, field, &mut hist);
    hist
}

fn walk_histogram_into(
    tower: &[Poly],
    target: &Poly,
    field: PrimeField,
    hist: &mut LevelSetHistogram,
) {
    let n = target.num_vars();
    if n == 0 {
        if tower.iter().all(|m| m.constant_term().is_zero()) {
            hist.bump(target.constant_term());
        }
        return;
    }
    if n == 1 {
        // Leaf level: evaluate univariates directly, no allocation.
        'point: for v in 0..field.p() {
            let x = [Scalar(v)];
            for m in tower {
                if !m.evaluate(&x).expect("univariate").is_zero() {
                    continue 'point;
                }
            }
            hist.bump(target.evaluate(&x).expect("univariate"));
        }
        return;
    }
    'branch: for v in 0..field.p() {
        let s = Scalar(v);
        let mut sub_tower: Vec<Poly> = Vec::with_capacity(tower.len());
        for m in tower {
            let sp = m.specialize_first(s);
            if sp.is_constant() {
                if !sp.constant_term().is_zero() {
                    continue 'branch;
                }
            } else {
                sub_tower.push(sp);
            }
        }
        let sub_target = target.specialize_first(s);
        walk_histogram_into(&sub_tower, &sub_target, field, hist);
    }
}

/// Exact |Z(T)|.
pub fn zero_locus_count(tower: &Tower, limit: u64) -> Result<u64> {
    match tower.flavor() {
        Flavor::Polynomial => {
            let n = tower.shape().dims()[0];
            let zero = Poly::zero(tower.shape().field(), n);
            let maps: Vec<Poly> = tower.all_poly_maps().into_iter().cloned().collect();
            Ok(poly_histogram(&zero, &maps, limit)?.domain_size())
        }
        _ => {
            let zero = MultiAffineMap::zero(tower.shape().clone(), IndexSet::empty());
            Ok(level_histogram(MapRef::Affine(&zero), Some(tower), limit)?.domain_size())
        }
    }
}

/// Visits every point of Z(T) as flat coordinates, in lexicographic order.
pub fn for_each_zero_point<F: FnMut(&[Scalar])>(
    tower: &Tower,
    limit: u64,
    mut f: F,
) -> Result<u64> {
    let count = tower.shape().check_limit(limit)?;
    let mut hits = 0u64;
    for rank in 0..count {
        let pt = tower.shape().point_at(rank);
        let flat = pt.flat();
        if tower.vanishes_at_flat(&flat)? {
            hits += 1;
            f(&flat);
        }
    }
    Ok(hits)
}

/// Materializes Z(T) as flat coordinate vectors.
pub fn zero_locus_points(tower: &Tower, limit: u64) -> Result<Vec<Vec<Scalar>>> {
    let mut out = Vec::new();
    for_each_zero_point(tower, limit, |flat| out.push(flat.to_vec()))?;
    Ok(out)
}

/// Exact bias report for a map over the full space or a tower zero locus.
pub fn bias(target: MapRef<'_>, domain: Option<&Tower>, limit: u64) -> Result<BiasReport> {
    bias_t(target, domain, limit, 1)
}

pub fn bias_t(
    target: MapRef<'_>,
    domain: Option<&Tower>,
    limit: u64,
    t: u32,
) -> Result<BiasReport> {
    let p = target.field().p();
    if t == 0 || t >= p {
        return Err(Error::Invalid(format!("character exponent {t} outside 1..{p}")));
    }
    let hist = level_histogram(target, domain, limit)?;
    Ok(BiasReport::from_histogram(hist, t))
}

/// Exact rational bias of a multilinear map: values of a nonzero multilinear
/// map are equidistributed over nonzero field elements, so the character sum
/// is (p N_0 - |V|)/(p - 1), an integer. Returns (numerator, denominator) of
/// bias = (p N_0 - |V|) / ((p-1) |V|).
pub fn ml_bias_exact(m: &MultiLinearMap, limit: u64) -> Result<(u128, u128)> {
    let hist = level_histogram(MapRef::Linear(m), None, limit)?;
    let p = hist.p() as u128;
    let total = hist.domain_size() as u128;
    if total == 0 {
        return Ok((0, 1));
    }
    let n0 = hist.counts()[0] as u128;
    let num = (p * n0).saturating_sub(total);
    debug_assert!(p * n0 >= total, "multilinear bias must be nonnegative");
    Ok((num, (p - 1) * total))
}

/// Monte-Carlo estimate of |E_{x in Z(T)} chi(P)| by rejection sampling.
#[derive(Clone, Debug)]
pub struct McBiasEstimate {
    pub estimate: f64,
    pub real_part: f64,
    pub imag_part: f64,
    /// 99% confidence half-width on the modulus (Hoeffding, both components).
    pub half_width: f64,
    pub accepted: u64,
    pub attempted: u64,
}

pub const DEFAULT_ACCEPTANCE_FLOOR: f64 = 1e-6;

pub fn monte_carlo_bias(
    target: MapRef<'_>,
    tower: &Tower,
    samples: u64,
    seed: u64,
    acceptance_floor: f64,
) -> Result<McBiasEstimate> {
    if samples == 0 {
        return Err(Error::Invalid("samples must be positive".into()));
    }
    let shape = match target {
        MapRef::Poly(p) => SpaceShape::single(p.field(), p.num_vars())?,
        MapRef::Affine(m) => m.shape().clone(),
        MapRef::Linear(m) => m.shape().clone(),
    };
    let field = shape.field();
    let expected_acceptance = (field.p() as f64).powi(-(tower.dimension() as i32));
    if expected_acceptance < acceptance_floor {
        return Err(Error::AcceptanceTooLow { rate: expected_acceptance, floor: acceptance_floor });
    }
    let max_attempts = ((samples as f64 / acceptance_floor) as u64).max(samples) * 4;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut accepted = 0u64;
    let mut attempted = 0u64;
    while accepted < samples && attempted < max_attempts {
        let pt = random_point(&shape, seed, attempted);
        attempted += 1;
        let flat = pt.flat();
        if !tower.vanishes_at_flat(&flat)? {
            continue;
        }
        let value = match target {
            MapRef::Poly(p) => p.evaluate(&flat)?,
            MapRef::Affine(m) => m.evaluate(&pt)?,
            MapRef::Linear(m) => m.evaluate(&pt)?,
        };
        sum += field.character(value);
        accepted += 1;
    }
    if accepted < samples {
        return Err(Error::AcceptanceTooLow {
            rate: accepted as f64 / attempted as f64,
            floor: acceptance_floor,
        });
    }
    let mean = sum / accepted as f64;
    // Per-component Hoeffding at joint 99%: t = sqrt(ln(4/0.01) / (2n)).
    let t = ((4.0f64 / 0.01).ln() / (2.0 * accepted as f64)).sqrt();
    Ok(McBiasEstimate {
        estimate: mean.norm(),
        real_part: mean.re,
        imag_part: mean.im,
        half_width: t * 2.0f64.sqrt(),
        accepted,
        attempted,
    })
}

/// s-uniformity check: the defect | q^m |Z|/q^n - 1 | as an exact rational,
/// compared against q^{-s}.
#[derive(Clone, Debug)]
pub struct SUniformReport {
    pub zero_count: u64,
    pub defect_num: u128,
    pub defect_den: u128,
    pub defect: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn check_s_uniform(tower: &Tower, s: f64, limit: u64) -> Result<SUniformReport> {
    let count = zero_locus_count(tower, limit)? as u128;
    let p = tower.shape().field().p() as u128;
    let m = tower.dimension() as u32;
    let n = tower.shape().total_dim() as u32;
    let pm = checked_pow(p, m)?;
    let pn = checked_pow(p, n)?;
    let scaled = count.checked_mul(pm).ok_or(Error::ScheduleOverflow { layer: 0 })?;
    let defect_num = scaled.abs_diff(pn);
    let defect_den = pn;
    let defect = defect_num as f64 / defect_den as f64;
    let threshold = (tower.shape().field().p() as f64).powf(-s);
    // Exact comparison when s is a modest integer, float otherwise.
    let pass = if s >= 0.0 && s.fract() == 0.0 && s <= 40.0 {
        match checked_pow(p, s as u32) {
            Ok(ps) => defect_num.checked_mul(ps).map(|l| l <= defect_den).unwrap_or(false),
            Err(_) => defect <= threshold,
        }
    } else {
        defect <= threshold + 1e-12 * threshold
    };
    Ok(SUniformReport { zero_count: count as u64, defect_num, defect_den, defect, threshold, pass })
}

fn checked_pow(base: u128, exp: u32) -> Result<u128> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base).ok_or(Error::ScheduleOverflow { layer: 0 })?;
    }
    Ok(acc)
}

/// Fiber sizes of a polynomial map F^n -> F^c and the worst pairwise ratio
/// deviation max |N_a / N_b - 1| (infinite when some fiber is empty).
#[derive(Clone, Debug)]
pub struct FiberStatistics {
    pub counts: Vec<u64>,
    pub max_deviation: f64,
    pub min_fiber: u64,
    pub max_fiber: u64,
}

pub fn fiber_statistics(polys: &[Poly], limit: u64) -> Result<FiberStatistics> {
    let first = polys.first().ok_or_else(|| Error::Invalid("empty collection".into()))?;
    let field = first.field();
    let n = first.num_vars();
    for p in polys {
        if p.field() != field || p.num_vars() != n {
            return Err(Error::ShapeMismatch("collection maps on mixed spaces".into()));
        }
    }
    let c = polys.len();
    let fibers_len = (field.p() as u128).checked_pow(c as u32).ok_or(Error::ScheduleOverflow { layer: 0 })?;
    if fibers_len > (1 << 28) {
        return Err(Error::LimitExceeded { points: fibers_len, limit: 1 << 28 });
    }
    let shape = SpaceShape::single(field, n)?;
    let count = shape.check_limit(limit)?;
    let mut counts = vec![0u64; fibers_len as usize];
    for rank in 0..count {
        let pt = shape.point_at(rank);
        let flat = pt.flat();
        let mut idx: u64 = 0;
        for p in polys {
            idx = idx * field.p() as u64 + p.evaluate(&flat)?.0 as u64;
        }
        counts[idx as usize] += 1;
    }
    let min_fiber = counts.iter().copied().min().unwrap_or(0);
    let max_fiber = counts.iter().copied().max().unwrap_or(0);
    let max_deviation = if min_fiber == 0 {
        f64::INFINITY
    } else {
        max_fiber as f64 / min_fiber as f64 - 1.0
    };
    Ok(FiberStatistics { counts, max_deviation, min_fiber, max_fiber })
}

/// Exact left-hand side of the Fubini inequality:
/// | E_{x in Z(Q)} g(x) - E_{y in Z(Q)_I} E_{z in Z(Q)(y)} g(y, z) |.
pub fn fubini_defect<G>(tower: &Tower, index_set: &IndexSet, g: G, limit: u64) -> Result<f64>
where
    G: Fn(&Point) -> Complex64,
{
    if tower.flavor() == Flavor::Polynomial {
        return Err(Error::FlavorMismatch("fubini needs a product-space tower".into()));
    }
    let shape = tower.shape();
    let field = shape.field();
    let bounded = |pt: &Point| -> Result<Complex64> {
        let v = g(pt);
        if v.norm() > 1.0 + 1e-9 {
            return Err(Error::Invalid("test function exceeds modulus 1".into()));
        }
        Ok(v)
    };

    // Left side: plain average over Z(Q).
    let count = shape.check_limit(limit)?;
    let mut lhs_sum = Complex64::new(0.0, 0.0);
    let mut lhs_n = 0u64;
    for rank in 0..count {
        let pt = shape.point_at(rank);
        if tower.vanishes_at_flat(&pt.flat())? {
            lhs_sum += bounded(&pt)?;
            lhs_n += 1;
        }
    }
    let lhs = if lhs_n == 0 { Complex64::new(0.0, 0.0) } else { lhs_sum / lhs_n as f64 };

    // Right side: average over y in Z(Q_I) of the average over z in Z(Q(y)).
    let complement: Vec<usize> =
        (0..shape.factors()).filter(|i| !index_set.contains(*i)).collect();
    let inner_shape = shape.without_factors(&complement)?;
    let restricted = tower.restrict_index(index_set)?;
    // Z(Q_I) enumerated on the sub-shape of the I factors.
    let proj: Vec<usize> = index_set.members().to_vec();
    let inner_count = inner_shape.check_limit(limit)?;
    let mut outer_sum = Complex64::new(0.0, 0.0);
    let mut outer_n = 0u64;
    for rank in 0..inner_count {
        let y = inner_shape.point_at(rank);
        // Check y in Z(Q_I): evaluate restricted maps on a padded point.
        let mut padded = Point::zero(shape);
        for (pos, &f) in proj.iter().enumerate() {
            padded.coords[f] = y.coords[pos].clone();
        }
        if !restricted.vanishes_at_flat(&padded.flat())? {
            continue;
        }
        outer_n += 1;
        // Derived tower on the complement factors.
        let assign: Vec<(usize, Vec<Scalar>)> =
            proj.iter().enumerate().map(|(pos, &f)| (f, y.coords[pos].clone())).collect();
        let derived = tower.derive(&assign)?;
        let z_shape = derived.shape().clone();
        let z_count = z_shape.check_limit(limit)?;
        let mut inner_sum = Complex64::new(0.0, 0.0);
        let mut inner_n = 0u64;
        for zrank in 0..z_count {
            let z = z_shape.point_at(zrank);
            if !derived.vanishes_at_flat(&z.flat())? {
                continue;
            }
            // Assemble the full point (y on I, z on the complement).
            let mut full = Point::zero(shape);
            for (pos, &f) in proj.iter().enumerate() {
                full.coords[f] = y.coords[pos].clone();
            }
            for (pos, &f) in complement.iter().enumerate() {
                full.coords[f] = z.coords[pos].clone();
            }
            inner_sum += bounded(&full)?;
            inner_n += 1;
        }
        if inner_n > 0 {
            outer_sum += inner_sum / inner_n as f64;
        }
        // E over an empty inner domain contributes 0 by convention.
    }
    let rhs = if outer_n == 0 { Complex64::new(0.0, 0.0) } else { outer_sum / outer_n as f64 };
    Ok((lhs - rhs).norm())
}

/// Exact real/imaginary parts of E_{x in Z(T)} chi(P(x)) and the two
/// rank-bias inequalities at the supplied (r, s).
#[derive(Clone, Debug)]
pub struct RankBiasGap {
    pub real_part: f64,
    pub imag_part: f64,
    pub zero_locus: u64,
    pub pass_real: bool,
    pub pass_imag: bool,
    pub pass: bool,
}

pub fn rank_bias_gap(
    target: &MultiLinearMap,
    tower: &Tower,
    r: u64,
    s: f64,
    limit: u64,
) -> Result<RankBiasGap> {
    let hist = level_histogram(MapRef::Linear(target), Some(tower), limit)?;
    let report = BiasReport::from_histogram(hist, 1);
    let q = target.shape().field().p() as f64;
    let bound_r = q.powi(-(r.min(1023) as i32));
    let bound_s = q.powf(-s);
    let pass_real = report.real_part >= bound_r - bound_s - 1e-12;
    let pass_imag = report.imag_part.abs() <= bound_s + 1e-12;
    Ok(RankBiasGap {
        real_part: report.real_part,
        imag_part: report.imag_part,
        zero_locus: report.histogram.domain_size(),
        pass_real,
        pass_imag,
        pass: pass_real && pass_imag,
    })
}

/// The alternating cube sum f_m(u | v) = sum over omega of (-1)^{|omega|}
/// f(u + omega . v), exact in F_p.
pub fn cube_sum<F>(f: F, field: PrimeField, base: &[Scalar], dirs: &[Vec<Scalar>]) -> Result<Scalar>
where
    F: Fn(&[Scalar]) -> Result<Scalar>,
{
    let n = base.len();
    for d in dirs {
        if d.len() != n {
            return Err(Error::ShapeMismatch("cube direction of wrong length".into()));
        }
    }
    let m = dirs.len();
    let mut acc = Scalar::ZERO;
    let mut vertex = vec![Scalar::ZERO; n];
    for omega in 0u32..(1 << m) {
        vertex.copy_from_slice(base);
        for (i, d) in dirs.iter().enumerate() {
            if omega >> i & 1 == 1 {
                for (vj, dj) in vertex.iter_mut().zip(d) {
                    *vj = field.add(*vj, *dj);
                }
            }
        }
        let v = f(&vertex)?;
        if omega.count_ones() % 2 == 0 {
            acc = field.add(acc, v);
        } else {
            acc = field.sub(acc, v);
        }
    }
    Ok(acc)
}

pub fn cube_sum_poly(p: &Poly, base: &[Scalar], dirs: &[Vec<Scalar>]) -> Result<Scalar> {
    cube_sum(|x| p.evaluate(x), p.field(), base, dirs)
}

/// Fraction of m-cubes with all vertices in X on which the alternating sum
/// of `f` is nonzero. Exact enumeration; `X = None` means the whole space.
pub struct CubeFractionReport {
    pub cubes: u64,
    pub nonvanishing: u64,
    pub fraction: f64,
}

pub fn cube_vanishing_fraction(
    f: &Poly,
    x_set: Option<&[Vec<Scalar>]>,
    m: usize,
    limit: u64,
) -> Result<CubeFractionReport> {
    let field = f.field();
    let n = f.num_vars();
    let shape = SpaceShape::single(field, n)?;
    let space: u128 = shape.point_count();
    let total_cubes = space
        .checked_pow(m as u32 + 1)
        .ok_or(Error::LimitExceeded { points: u128::MAX, limit })?;
    if x_set.is_none() && total_cubes > limit as u128 {
        return Err(Error::LimitExceeded { points: total_cubes, limit });
    }
    // Tabulate f over the whole space: the domain is small when cubes are
    // enumerable.
    let count = shape.check_limit(limit)?;
    let p64 = field.p() as u64;
    let mut table = vec![Scalar::ZERO; count as usize];
    for rank in 0..count {
        let pt = shape.point_at(rank);
        table[rank as usize] = f.evaluate(&pt.flat())?;
    }
    let rank_of = |flat: &[Scalar]| -> u64 {
        flat.iter().fold(0u64, |acc, s| acc * p64 + s.0 as u64)
    };
    let membership: Option<HashSet<u64>> =
        x_set.map(|pts| pts.iter().map(|flat| rank_of(flat)).collect());
    let base_ranks: Vec<u64> = match &membership {
        Some(set) => {
            let mut v: Vec<u64> = set.iter().copied().collect();
            v.sort_unstable();
            v
        }
        None => (0..count).collect(),
    };
    if base_ranks.is_empty() {
        return Ok(CubeFractionReport { cubes: 0, nonvanishing: 0, fraction: 0.0 });
    }
    let dir_space = count.checked_pow(m as u32).ok_or(Error::LimitExceeded {
        points: total_cubes,
        limit,
    })?;
    let mut cubes = 0u64;
    let mut nonvanishing = 0u64;
    let mut dirs: Vec<Vec<Scalar>> = vec![vec![Scalar::ZERO; n]; m];
    for &u_rank in &base_ranks {
        let base = shape.point_at(u_rank).flat();
        'dir: for dchoice in 0..dir_space {
            let mut r = dchoice;
            for d in dirs.iter_mut() {
                let pt = shape.point_at(r % count);
                d.copy_from_slice(&pt.flat());
                r /= count;
            }
            // Membership of all vertices, then the alternating sum via the
            // value table.
            let mut acc = Scalar::ZERO;
            let mut vertex = vec![Scalar::ZERO; n];
            for omega in 0u32..(1 << m) {
                vertex.copy_from_slice(&base);
                for (i, d) in dirs.iter().enumerate() {
                    if omega >> i & 1 == 1 {
                        for (vj, dj) in vertex.iter_mut().zip(d) {
                            *vj = field.add(*vj, *dj);
                        }
                    }
                }
                let vr = rank_of(&vertex);
                if let Some(set) = &membership {
                    if !set.contains(&vr) {
                        continue 'dir;
                    }
                }
                let v = table[vr as usize];
                if omega.count_ones() % 2 == 0 {
                    acc = field.add(acc, v);
                } else {
                    acc = field.sub(acc, v);
                }
            }
            cubes += 1;
            if !acc.is_zero() {
                nonvanishing += 1;
            }
        }
    }
    let fraction = if cubes == 0 { 0.0 } else { nonvanishing as f64 / cubes as f64 };
    Ok(CubeFractionReport { cubes, nonvanishing, fraction })
}

/// Exact fraction of Z(T) on which the map is nonzero, as (nonzero, |Z|).
pub fn vanishing_fraction(target: MapRef<'_>, tower: &Tower, limit: u64) -> Result<(u64, u64)> {
    let hist = level_histogram(target, Some(tower), limit)?;
    let total = hist.domain_size();
    let nonzero = total - hist.counts()[0];
    Ok((nonzero, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CounterRng;
    use crate::tower::Flavor;

    fn s(v: u32) -> Scalar {
        Scalar(v)
    }
    fn f3() -> PrimeField {
        PrimeField::new(3).unwrap()
    }
    fn f5() -> PrimeField {
        PrimeField::new(5).unwrap()
    }

    fn xy(field: PrimeField) -> Poly {
        Poly::from_terms(field, 2, vec![(vec![1, 1], s(1))]).unwrap()
    }

    fn x1x2_x3x4(field: PrimeField) -> Poly {
        Poly::from_terms(field, 4, vec![(vec![1, 1, 0, 0], s(1)), (vec![0, 0, 1, 1], s(1))])
            .unwrap()
    }

    const LIM: u64 = 1 << 32;

    #[test]
    fn histogram_xy_f3() {
        let h = level_histogram(MapRef::Poly(&xy(f3())), None, LIM).unwrap();
        assert_eq!(h.counts(), &[5, 2, 2]);
        assert_eq!(h.domain_size(), 9);
    }

    #[test]
    fn histogram_zero_poly() {
        let z = Poly::zero(f5(), 2);
        let h = level_histogram(MapRef::Poly(&z), None, LIM).unwrap();
        assert_eq!(h.counts(), &[25, 0, 0, 0, 0]);
    }

    #[test]
    fn histogram_convolution_example() {
        let h = level_histogram(MapRef::Poly(&x1x2_x3x4(f3())), None, LIM).unwrap();
        assert_eq!(h.counts(), &[33, 24, 24]);
    }

    #[test]
    fn bias_examples() {
        let b = bias(MapRef::Poly(&xy(f3())), None, LIM).unwrap();
        assert!((b.bias - 1.0 / 3.0).abs() < 1e-10);
        let b2 = bias(MapRef::Poly(&x1x2_x3x4(f3())), None, LIM).unwrap();
        assert!((b2.bias - 1.0 / 9.0).abs() < 1e-10);
        // Constant polynomial: bias 1 on any domain.
        let c = Poly::constant(f3(), 2, s(2));
        let b3 = bias(MapRef::Poly(&c), None, LIM).unwrap();
        assert!((b3.bias - 1.0).abs() < 1e-12);
        // bias^2 = re^2 + im^2 within 1e-10.
        for b in [&b, &b2, &b3] {
            assert!((b.bias * b.bias - (b.real_part.powi(2) + b.imag_part.powi(2))).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_locus_examples() {
        let f = f5();
        let shape = SpaceShape::single(f, 3).unwrap();
        let lin = Poly::variable(f, 3, 0);
        let t = Tower::polynomial(shape.clone(), vec![(1, vec![lin])]).unwrap();
        assert_eq!(zero_locus_count(&t, LIM).unwrap(), 25);
        // Empty tower: whole space.
        let e = Tower::empty(shape, Flavor::Polynomial);
        assert_eq!(zero_locus_count(&e, LIM).unwrap(), 125);
        // (x1, x1x2 + x3) on F_3^3: x1 = 0 forces x3 = 0, x2 free.
        let f3 = PrimeField::new(3).unwrap();
        let shape3 = SpaceShape::single(f3, 3).unwrap();
        let a = Poly::variable(f3, 3, 0);
        let b = Poly::from_terms(f3, 3, vec![(vec![1, 1, 0], s(1)), (vec![0, 0, 1], s(1))]).unwrap();
        let t3 =
            Tower::polynomial(shape3, vec![(1, vec![a]), (2, vec![b])]).unwrap();
        assert_eq!(zero_locus_count(&t3, LIM).unwrap(), 3);
    }

    #[test]
    fn histogram_on_zero_locus() {
        // x2 restricted to Z(x1) over F_3^2: values uniform over 3 points.
        let f = f3();
        let shape = SpaceShape::single(f, 2).unwrap();
        let t = Tower::polynomial(shape, vec![(1, vec![Poly::variable(f, 2, 0)])]).unwrap();
        let x2 = Poly::variable(f, 2, 1);
        let h = level_histogram(MapRef::Poly(&x2), Some(&t), LIM).unwrap();
        assert_eq!(h.counts(), &[1, 1, 1]);
        let (nonzero, total) = vanishing_fraction(MapRef::Poly(&x2), &t, LIM).unwrap();
        assert_eq!((nonzero, total), (2, 3));
    }

    #[test]
    fn bias_invariance_for_multilinear_across_characters() {
        let f = f3();
        let shape = SpaceShape::new(f, vec![2, 2]).unwrap();
        let mut rng = CounterRng::new(5);
        for _ in 0..20 {
            let raw: Vec<(Vec<usize>, Scalar)> =
                MultiLinearMap::full_index_space(&shape, &IndexSet::full(2))
                    .into_iter()
                    .map(|i| (i, rng.scalar(f)))
                    .collect();
            let m = MultiLinearMap::from_entries(shape.clone(), IndexSet::full(2), raw).unwrap();
            let b1 = bias_t(MapRef::Linear(&m), None, LIM, 1).unwrap().bias;
            for t in 2..3u32 {
                let bt = bias_t(MapRef::Linear(&m), None, LIM, t).unwrap().bias;
                assert!((b1 - bt).abs() < 1e-10, "bias must be character independent");
            }
        }
    }

    #[test]
    fn fourier_identity_small_shapes() {
        // bias(P) = fraction of x with A(x) = 0, with A the pivot contraction.
        let f = f3();
        let mut rng = CounterRng::new(99);
        for k in 2..=3usize {
            let shape = SpaceShape::new(f, vec![2; k]).unwrap();
            for _ in 0..10 {
                let raw: Vec<(Vec<usize>, Scalar)> =
                    MultiLinearMap::full_index_space(&shape, &IndexSet::full(k))
                        .into_iter()
                        .map(|i| (i, rng.scalar(f)))
                        .collect();
                let m =
                    MultiLinearMap::from_entries(shape.clone(), IndexSet::full(k), raw).unwrap();
                let b = bias(MapRef::Linear(&m), None, LIM).unwrap().bias;
                let pivot = k - 1;
                let a = m.contract_last(pivot).unwrap();
                // Fraction over the reduced shape where all coordinates of A vanish.
                let reduced = shape.without_factors(&[pivot]).unwrap();
                let total = reduced.check_limit(LIM).unwrap();
                let mut zeros = 0u64;
                for rank in 0..total {
                    let y = reduced.point_at(rank);
                    let mut full = Point::zero(&shape);
                    let mut pos = 0;
                    for fac in 0..k {
                        if fac != pivot {
                            full.coords[fac] = y.coords[pos].clone();
                            pos += 1;
                        }
                    }
                    if a.iter().all(|aj| aj.evaluate(&full).unwrap().is_zero()) {
                        zeros += 1;
                    }
                }
                let frac = zeros as f64 / total as f64;
                assert!((b - frac).abs() < 1e-9, "bias {b} vs fraction {frac}");
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let f = f3();
        let shape = SpaceShape::single(f, 2).unwrap();
        let t = Tower::empty(shape, Flavor::Polynomial);
        let p = xy(f3());
        let est =
            monte_carlo_bias(MapRef::Poly(&p), &t, 100_000, 7, DEFAULT_ACCEPTANCE_FLOOR).unwrap();
        assert!((est.estimate - 1.0 / 3.0).abs() < est.half_width);
        // Determinism.
        let est2 =
            monte_carlo_bias(MapRef::Poly(&p), &t, 100_000, 7, DEFAULT_ACCEPTANCE_FLOOR).unwrap();
        assert_eq!(est.real_part.to_bits(), est2.real_part.to_bits());
        // Constant target: estimate exactly 1.
        let c = Poly::constant(f, 2, s(0));
        let estc = monte_carlo_bias(MapRef::Poly(&c), &t, 100, 7, DEFAULT_ACCEPTANCE_FLOOR).unwrap();
        assert!((estc.estimate - 1.0).abs() < 1e-12);
        // Zero samples rejected.
        assert!(monte_carlo_bias(MapRef::Poly(&p), &t, 0, 7, DEFAULT_ACCEPTANCE_FLOOR).is_err());
    }

    #[test]
    fn s_uniform_examples() {
        let f = f5();
        let shape = SpaceShape::single(f, 3).unwrap();
        // Independent linear forms: defect exactly 0.
        let t = Tower::polynomial(
            shape.clone(),
            vec![(1, vec![Poly::variable(f, 3, 0), Poly::variable(f, 3, 1)])],
        )
        .unwrap();
        let rep = check_s_uniform(&t, 10.0, LIM).unwrap();
        assert_eq!(rep.defect_num, 0);
        assert!(rep.pass);
        // Duplicated linear form on F_3^2: |Z| = 3 vs expected 1, defect 2.
        let f3 = PrimeField::new(3).unwrap();
        let shape2 = SpaceShape::single(f3, 2).unwrap();
        let x1 = Poly::variable(f3, 2, 0);
        let dup = Tower::polynomial(shape2, vec![(1, vec![x1.clone()]), (1, vec![x1])]).unwrap();
        let rep2 = check_s_uniform(&dup, 0.0, LIM).unwrap();
        assert_eq!(rep2.defect_num, 2);
        assert_eq!(rep2.defect_den, 1);
        assert!(!rep2.pass);
    }

    #[test]
    fn fiber_statistics_examples() {
        let f = f3();
        // Single coordinate: all fibers size 3.
        let x1 = Poly::variable(f, 2, 0);
        let st = fiber_statistics(&[x1], LIM).unwrap();
        assert_eq!(st.counts, vec![3, 3, 3]);
        assert_eq!(st.max_deviation, 0.0);
        // x1x2 + x3x4: (33, 24, 24), deviation 0.375.
        let st2 = fiber_statistics(&[x1x2_x3x4(f)], LIM).unwrap();
        assert_eq!(st2.counts, vec![33, 24, 24]);
        assert!((st2.max_deviation - 0.375).abs() < 1e-12);
    }

    #[test]
    fn cube_sum_examples() {
        let f = f5();
        // Degree < m: the m-fold difference vanishes on every cube.
        let lin = Poly::from_terms(f, 1, vec![(vec![1], s(3)), (vec![0], s(2))]).unwrap();
        for base in 0..5u32 {
            for d1 in 0..5u32 {
                for d2 in 0..5u32 {
                    let v = cube_sum_poly(&lin, &[s(base)], &[vec![s(d1)], vec![s(d2)]]).unwrap();
                    assert_eq!(v, Scalar::ZERO);
                }
            }
        }
        // m = 1 is the plain difference.
        let sq = Poly::monomial(f, 1, vec![2], s(1)).unwrap();
        let v = cube_sum_poly(&sq, &[s(2)], &[vec![s(1)]]).unwrap();
        assert_eq!(v, f.sub(sq.evaluate(&[s(3)]).unwrap(), sq.evaluate(&[s(2)]).unwrap()));
        // x^2, m = 2, directions (1, 1): value 2.
        let v2 = cube_sum_poly(&sq, &[s(0)], &[vec![s(1)], vec![s(1)]]).unwrap();
        assert_eq!(v2, s(2));
    }

    #[test]
    fn cube_fraction_examples() {
        let f = PrimeField::new(2).unwrap();
        // Degree m polynomial on the whole space has nonvanishing cubes.
        let prod = Poly::from_terms(f, 2, vec![(vec![1, 1], s(1))]).unwrap();
        let rep = cube_vanishing_fraction(&prod, None, 2, LIM).unwrap();
        assert!(rep.fraction > 0.0);
        // Degree < m vanishes on every cube.
        let lin = Poly::variable(f, 2, 0);
        let rep2 = cube_vanishing_fraction(&lin, None, 2, LIM).unwrap();
        assert_eq!(rep2.nonvanishing, 0);
        // Empty X: fraction 0 by convention.
        let rep3 = cube_vanishing_fraction(&prod, Some(&[]), 2, LIM).unwrap();
        assert_eq!(rep3.cubes, 0);
        assert_eq!(rep3.fraction, 0.0);
    }

    #[test]
    fn parallel_and_serial_histograms_agree() {
        // The parallel split path and a fully serial walk must be bit-identical.
        let f = f3();
        let mut rng = CounterRng::new(404);
        let monos = crate::poly::monomials_up_to_degree(6, 3);
        let raw: Vec<(Vec<u32>, Scalar)> =
            monos.iter().map(|e| (e.clone(), rng.scalar(f))).collect();
        let p = Poly::from_terms(f, 6, raw).unwrap();
        let par = level_histogram(MapRef::Poly(&p), None, LIM).unwrap();
        let serial = walk_histogram(&[], &p, f);
        assert_eq!(par, serial);
    }
}
