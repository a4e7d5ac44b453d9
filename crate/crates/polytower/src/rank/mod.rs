//! Rank engines: Schmidt rank, partition rank and their relative versions,
//! by exact closed forms where they exist (linear convention, quadratic Gram
//! decomposition, bilinear matrix rank) and budget-bounded complete search
//! elsewhere. Every upper bound comes with a replayable certificate; lower
//! bounds come from exhausted sweeps, linear algebra, or the bias bound.

pub mod certificate;
pub mod membership;
mod quadratic;

pub use certificate::{
    verify_collection_certificate, verify_ml_certificate, verify_poly_certificate, CertBody,
    CertCheck, CertKind, MlMultiplier, PolyMultiplier, RankCertificate,
};
pub use membership::{multilinear_nullstellensatz, nullstellensatz_solve, MembershipSolution};

use crate::analytic;
use crate::error::{Error, Result};
use crate::field::{PrimeField, Scalar};
use crate::linalg::{self, Mat};
use crate::multiaffine::{IndexSet, MultiLinearMap};
use crate::poly::{monomials_exact_degree, Poly};
use crate::tower::{Flavor, Layer, Tower};

/// Search budgets are counted in candidate presentations, for
/// reproducibility.
pub const DEFAULT_BUDGET: u64 = 10_000_000;
const QUAD_CONST_CAP: u64 = 4096;
const MULT_ENUM_CAP: u64 = 4096;
const BIAS_DOMAIN_CAP: u64 = 1 << 22;
const PROJECTIVE_CAP: u64 = 1 << 20;

#[derive(Clone, Debug)]
pub struct BudgetCounter {
    used: u64,
    cap: u64,
}

impl BudgetCounter {
    pub fn new(cap: u64) -> BudgetCounter {
        BudgetCounter { used: 0, cap }
    }

    pub fn try_spend(&mut self, n: u64) -> Result<()> {
        self.used = self.used.saturating_add(n);
        if self.used > self.cap {
            Err(Error::BudgetExhausted(self.cap))
        } else {
            Ok(())
        }
    }

    pub fn remaining(&self) -> u64 {
        self.cap - self.used.min(self.cap)
    }

    pub fn used(&self) -> u64 {
        self.used
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum RankStatus {
    Exact,
    Bounded,
    Unknown,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum LowerBoundSource {
    Bias,
    ExhaustedSearch,
    LinearAlgebra,
}

#[derive(Clone, Debug)]
pub struct RankBound {
    pub lower: u64,
    pub upper: Option<u64>,
    pub status: RankStatus,
    pub certificate: Option<RankCertificate>,
    pub lower_source: LowerBoundSource,
    /// The degree-1 convention was applied: an irreducible linear target is
    /// reported with the ambient dimension as its rank proxy.
    pub linear_convention: bool,
    /// Bias-derived lower bound on a tower whose regularity is unproven;
    /// advisory only, never merged into `lower`.
    pub heuristic_lower: Option<u64>,
    /// Tilde normalization was applied to an inhomogeneous input.
    pub normalized: bool,
}

/// Internal outcome of a (level-capped) rank decision for one target.
struct Decision {
    found: Option<(u64, CertBody)>,
    proven_lower: u64,
    complete: bool,
    linear_convention: bool,
    lower_source: LowerBoundSource,
}

impl Decision {
    fn rank0(body: CertBody) -> Decision {
        Decision {
            found: Some((0, body)),
            proven_lower: 0,
            complete: true,
            linear_convention: false,
            lower_source: LowerBoundSource::LinearAlgebra,
        }
    }
}

// ---------------------------------------------------------------------------
// Polynomial-side machinery.
// ---------------------------------------------------------------------------

struct PolyRef {
    layer: usize,
    index: usize,
    tilde: Poly,
    cofactor_degree: u32,
}

fn poly_refs(reference: Option<&Tower>, d: u32) -> Vec<PolyRef> {
    let mut out = Vec::new();
    if let Some(t) = reference {
        for (layer_idx, layer) in t.layers().iter().enumerate() {
            for (map_idx, map) in layer.poly_maps().iter().enumerate() {
                let tilde = map.homogeneous_part();
                if tilde.is_zero() || tilde.degree() > d {
                    continue;
                }
                out.push(PolyRef {
                    layer: layer_idx,
                    index: map_idx,
                    cofactor_degree: d - tilde.degree(),
                    tilde,
                });
            }
        }
    }
    out
}

/// Builds the coefficient matrix whose columns are gen_i * (monomial of the
/// cofactor degree), over the rows of degree-d monomials. Returns the matrix
/// and per-generator column ranges.
fn poly_system(
    field: PrimeField,
    n: usize,
    d: u32,
    generators: &[(&Poly, u32)],
) -> (Mat, Vec<(usize, usize)>, Vec<Vec<u32>>) {
    let rows_monos = monomials_exact_degree(n, d);
    let row_index: std::collections::HashMap<&[u32], usize> =
        rows_monos.iter().enumerate().map(|(i, m)| (m.as_slice(), i)).collect();
    let mut columns: Vec<Vec<Scalar>> = Vec::new();
    let mut ranges = Vec::with_capacity(generators.len());
    for (g, deg) in generators {
        let start = columns.len();
        for mono in monomials_exact_degree(n, *deg) {
            let mut col = vec![Scalar::ZERO; rows_monos.len()];
            for t in g.terms() {
                let prod: Vec<u32> = t.exps.iter().zip(&mono).map(|(a, b)| a + b).collect();
                if let Some(&r) = row_index.get(prod.as_slice()) {
                    col[r] = field.add(col[r], t.coeff);
                }
            }
            columns.push(col);
        }
        ranges.push((start, columns.len()));
    }
    let rows = rows_monos.len();
    let mut mat = Mat::zeros(field, rows, columns.len());
    for (c, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            if !v.is_zero() {
                mat.set(r, c, *v);
            }
        }
    }
    (mat, ranges, rows_monos)
}

fn poly_rhs(target: &Poly, rows_monos: &[Vec<u32>]) -> Vec<Scalar> {
    let idx: std::collections::HashMap<&[u32], usize> =
        rows_monos.iter().enumerate().map(|(i, m)| (m.as_slice(), i)).collect();
    let mut rhs = vec![Scalar::ZERO; rows_monos.len()];
    for t in target.terms() {
        if let Some(&r) = idx.get(t.exps.as_slice()) {
            rhs[r] = t.coeff;
        }
    }
    rhs
}

fn cofactor_from_solution(
    field: PrimeField,
    n: usize,
    deg: u32,
    coeffs: &[Scalar],
) -> Poly {
    let monos = monomials_exact_degree(n, deg);
    let raw: Vec<(Vec<u32>, Scalar)> = monos
        .into_iter()
        .zip(coeffs)
        .filter(|(_, c)| !c.is_zero())
        .map(|(m, c)| (m, *c))
        .collect();
    Poly::from_terms(field, n, raw).expect("cofactor construction")
}

/// Solves target = sum_i gen_i * g_i with homogeneous cofactors of the given
/// degrees; canonical solution or None.
fn solve_poly_combination(
    field: PrimeField,
    n: usize,
    d: u32,
    generators: &[(&Poly, u32)],
    target: &Poly,
) -> Option<Vec<Poly>> {
    let (mat, ranges, rows) = poly_system(field, n, d, generators);
    let rhs = poly_rhs(target, &rows);
    let sol = linalg::solve(&mat, &rhs)?;
    Some(
        generators
            .iter()
            .zip(&ranges)
            .map(|((_, deg), (s, e))| cofactor_from_solution(field, n, *deg, &sol[*s..*e]))
            .collect(),
    )
}

fn multipliers_from_cofactors(refs: &[PolyRef], cofs: &[Poly]) -> Vec<PolyMultiplier> {
    refs.iter()
        .zip(cofs)
        .filter(|(_, c)| !c.is_zero())
        .map(|(r, c)| PolyMultiplier { layer: r.layer, index: r.index, multiplier: c.clone() })
        .collect()
}

/// Monic homogeneous polynomials of a given degree: the first nonzero
/// coefficient (in the canonical monomial order) is 1. Projective
/// representatives, deterministic order.
fn monic_polys(
    field: PrimeField,
    n: usize,
    deg: u32,
    max_count: u64,
) -> Option<Vec<Poly>> {
    let monos = monomials_exact_degree(n, deg);
    let count = projective_count(field.p(), monos.len() as u32)?;
    if count > max_count {
        return None;
    }
    let mut out = Vec::with_capacity(count as usize);
    let p = field.p() as u64;
    for lead in 0..monos.len() {
        let tail = monos.len() - lead - 1;
        let tail_count = p.checked_pow(tail as u32)?;
        for mut code in 0..tail_count {
            let mut raw: Vec<(Vec<u32>, Scalar)> = vec![(monos[lead].clone(), Scalar::ONE)];
            for (j, mono) in monos[lead + 1..].iter().enumerate() {
                let digit = (code % p) as u32;
                code /= p;
                let _ = j;
                if digit != 0 {
                    raw.push((mono.clone(), Scalar(digit)));
                }
            }
            out.push(Poly::from_terms(field, n, raw).expect("monic enumeration"));
        }
    }
    Some(out)
}

/// (p^dim - 1) / (p - 1), None on overflow past u64.
fn projective_count(p: u32, dim: u32) -> Option<u64> {
    let mut acc: u128 = 0;
    let mut pw: u128 = 1;
    for _ in 0..dim {
        acc += pw;
        pw = pw.checked_mul(p as u128)?;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Non-decreasing degree splits (a_1 <= ... <= a_r), each in 1..=d/2.
fn degree_splits(d: u32, r: u64) -> Vec<Vec<u32>> {
    let half = d / 2;
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, left: u64, min_a: u32, half: u32) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for a in min_a..=half {
            cur.push(a);
            rec(out, cur, left - 1, a, half);
            cur.pop();
        }
    }
    if half >= 1 {
        rec(&mut out, &mut cur, r, 1, half);
    }
    out
}

/// Complete sweep of all length-r presentations of `target` modulo the
/// references. Returns Some(body) on the first hit, None when the level is
/// exhausted without one.
fn poly_sweep_level(
    target: &Poly,
    refs: &[PolyRef],
    r: u64,
    counter: &mut BudgetCounter,
) -> Result<Option<CertBody>> {
    let field = target.field();
    let n = target.num_vars();
    let d = target.degree();
    for split in degree_splits(d, r) {
        // Candidate lists per distinct degree in the split.
        let mut lists: std::collections::HashMap<u32, Vec<Poly>> = std::collections::HashMap::new();
        for &a in &split {
            if !lists.contains_key(&a) {
                let cands = monic_polys(field, n, a, counter.remaining())
                    .ok_or(Error::BudgetExhausted(counter.remaining()))?;
                lists.insert(a, cands);
            }
        }
        // Iterate index tuples, non-decreasing within equal degrees.
        let sizes: Vec<usize> = split.iter().map(|a| lists[a].len()).collect();
        let mut idx = vec![0usize; split.len()];
        'tuples: loop {
            counter.try_spend(1)?;
            let qs: Vec<&Poly> = split
                .iter()
                .zip(&idx)
                .map(|(a, &i)| &lists[a][i])
                .collect();
            let mut generators: Vec<(&Poly, u32)> =
                qs.iter().zip(&split).map(|(q, a)| (*q, d - *a)).collect();
            for f in refs {
                generators.push((&f.tilde, f.cofactor_degree));
            }
            if let Some(cofs) = solve_poly_combination(field, n, d, &generators, target) {
                let pairs: Vec<(Poly, Poly)> = qs
                    .iter()
                    .zip(cofs.iter())
                    .filter(|(_, c)| !c.is_zero())
                    .map(|(q, c)| ((*q).clone(), c.clone()))
                    .collect();
                let multipliers = multipliers_from_cofactors(refs, &cofs[split.len()..]);
                return Ok(Some(CertBody::Poly { pairs, multipliers }));
            }
            // Advance the tuple.
            let mut pos = split.len();
            loop {
                if pos == 0 {
                    break 'tuples;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < sizes[pos] {
                    // Reset the tail, respecting monotonicity for equal degrees.
                    for t in pos + 1..split.len() {
                        idx[t] = if split[t] == split[t - 1] { idx[t - 1] } else { 0 };
                        if idx[t] >= sizes[t] {
                            // Tail cannot start here; keep advancing.
                            idx[pos] = sizes[pos];
                            break;
                        }
                    }
                    if idx[pos] < sizes[pos] && idx[split.len() - 1] < sizes[split.len() - 1] {
                        break;
                    }
                }
            }
        }
    }
    Ok(None)
}

fn left_inverse(field: PrimeField, columns: &[Vec<Scalar>], n: usize) -> Vec<Vec<Scalar>> {
    // W with W * K = I, rows solved one at a time from K^T w = e_i.
    let k = columns.len();
    let kt = Mat::from_rows(field, columns.to_vec());
    (0..k)
        .map(|i| {
            let mut e = vec![Scalar::ZERO; k];
            e[i] = Scalar::ONE;
            linalg::solve(&kt, &e).expect("K has full column rank")
        })
        .collect()
}

/// Exact relative Schmidt rank for a quadratic target: restrict to the common
/// kernel of the linear references (per choice of constant multipliers for
/// quadratic references) and decompose there.
fn poly_quadratic_relative(
    target: &Poly,
    refs: &[PolyRef],
    counter: &mut BudgetCounter,
) -> Result<Option<Decision>> {
    let field = target.field();
    let n = target.num_vars();
    let lin: Vec<&PolyRef> = refs.iter().filter(|r| r.tilde.degree() == 1).collect();
    let quad: Vec<&PolyRef> = refs.iter().filter(|r| r.tilde.degree() == 2).collect();
    if lin.len() + quad.len() != refs.len() {
        // Degree-0 tildes were handled by the rank-0 solve; anything else
        // cannot occur for a quadratic target.
        return Ok(None);
    }
    let c_space = (field.p() as u128).checked_pow(quad.len() as u32);
    let Some(c_space) = c_space.filter(|&c| c <= QUAD_CONST_CAP as u128) else {
        return Ok(None);
    };
    counter.try_spend(c_space as u64)?;
    // Kernel of the linear reference span.
    let rows: Vec<Vec<Scalar>> = lin
        .iter()
        .map(|r| {
            let mut v = vec![Scalar::ZERO; n];
            for t in r.tilde.terms() {
                let i = t.exps.iter().position(|&e| e > 0).expect("linear form");
                v[i] = field.add(v[i], t.coeff);
            }
            v
        })
        .collect();
    let kernel: Vec<Vec<Scalar>> = if rows.is_empty() {
        (0..n)
            .map(|i| {
                let mut v = vec![Scalar::ZERO; n];
                v[i] = Scalar::ONE;
                v
            })
            .collect()
    } else {
        linalg::nullspace(&Mat::from_rows(field, rows))
    };
    let k = kernel.len();
    let restrict_matrix: Vec<Vec<Scalar>> =
        (0..n).map(|i| (0..k).map(|j| kernel[j][i]).collect()).collect();
    let zero_off_n = vec![Scalar::ZERO; n];
    let w = if k > 0 { left_inverse(field, &kernel, n) } else { Vec::new() };

    let mut best: Option<(u64, Vec<Scalar>, quadratic::QuadraticDecomposition)> = None;
    let mut cvec = vec![Scalar::ZERO; quad.len()];
    loop {
        let mut combined = target.clone();
        for (c, r) in cvec.iter().zip(&quad) {
            combined = combined.add(&r.tilde.scale(*c))?;
        }
        let restricted = combined.restrict_affine(&restrict_matrix, &zero_off_n)?;
        let dec = quadratic::quadratic_schmidt(&restricted.homogeneous_part())?;
        if best.as_ref().map(|(r, _, _)| dec.rank < *r).unwrap_or(true) {
            let rank = dec.rank;
            best = Some((rank, cvec.clone(), dec));
            if rank == 0 && quad.is_empty() {
                break;
            }
        }
        // Advance c.
        let mut pos = 0;
        loop {
            if pos == cvec.len() {
                break;
            }
            cvec[pos].0 += 1;
            if cvec[pos].0 < field.p() {
                break;
            }
            cvec[pos] = Scalar::ZERO;
            pos += 1;
        }
        if pos == cvec.len() {
            break;
        }
    }
    let (rank, cstar, dec) = best.expect("at least one multiplier choice");
    // Lift the restricted pairs through a left inverse of the kernel basis.
    let lift_rows: Vec<Vec<Scalar>> = w;
    let zero_off_k = vec![Scalar::ZERO; n];
    let mut pairs = Vec::with_capacity(dec.pairs.len());
    let mut lifted_sum = Poly::zero(field, n);
    for (q, r) in &dec.pairs {
        let (lq, lr) = if k > 0 {
            (
                q.restrict_affine(&lift_rows, &zero_off_k[..k.min(n)].to_vec())?,
                r.restrict_affine(&lift_rows, &zero_off_k[..k.min(n)].to_vec())?,
            )
        } else {
            (Poly::zero(field, n), Poly::zero(field, n))
        };
        lifted_sum = lifted_sum.add(&lq.mul(&lr)?)?;
        pairs.push((lq, lr));
    }
    // Residual vanishes on the kernel, so it lies in the linear-reference
    // ideal with linear multipliers; solve for them exactly.
    let mut combined = target.clone();
    for (c, r) in cstar.iter().zip(&quad) {
        combined = combined.add(&r.tilde.scale(*c))?;
    }
    let residual = combined.sub(&lifted_sum)?;
    let mut multipliers: Vec<PolyMultiplier> = Vec::new();
    if !residual.is_zero() {
        let generators: Vec<(&Poly, u32)> = lin.iter().map(|r| (&r.tilde, 1u32)).collect();
        let cofs = solve_poly_combination(field, n, 2, &generators, &residual)
            .expect("residual lies in the linear-reference ideal");
        for (r, c) in lin.iter().zip(&cofs) {
            if !c.is_zero() {
                multipliers.push(PolyMultiplier {
                    layer: r.layer,
                    index: r.index,
                    multiplier: c.neg(),
                });
            }
        }
    }
    for (c, r) in cstar.iter().zip(&quad) {
        if !c.is_zero() {
            multipliers.push(PolyMultiplier {
                layer: r.layer,
                index: r.index,
                multiplier: Poly::constant(field, n, field.neg(*c)),
            });
        }
    }
    // Equation check: target = sum pairs - sum c Q - sum R l, i.e. the
    // multipliers above carry the negated signs.
    Ok(Some(Decision {
        found: Some((rank, CertBody::Poly { pairs, multipliers })),
        proven_lower: rank,
        complete: true,
        linear_convention: false,
        lower_source: LowerBoundSource::LinearAlgebra,
    }))
}

/// Level-capped decision for one polynomial target relative to a tower.
fn poly_relative_decide(
    target: &Poly,
    reference: Option<&Tower>,
    level_cap: u64,
    counter: &mut BudgetCounter,
) -> Result<Decision> {
    let field = target.field();
    let n = target.num_vars();
    let tilde = target.homogeneous_part();
    if tilde.is_zero() {
        return Ok(Decision::rank0(CertBody::Poly { pairs: Vec::new(), multipliers: Vec::new() }));
    }
    let d = tilde.degree();
    if d as u64 >= field.p() as u64 {
        return Err(Error::CharacteristicTooSmall { degree: d, p: field.p() });
    }
    let refs = poly_refs(reference, d);
    // Rank 0: the target lies in the degree-bounded reference span.
    {
        let generators: Vec<(&Poly, u32)> =
            refs.iter().map(|f| (&f.tilde, f.cofactor_degree)).collect();
        if !generators.is_empty() || tilde.is_zero() {
            if let Some(cofs) = solve_poly_combination(field, n, d, &generators, &tilde) {
                let multipliers = multipliers_from_cofactors(&refs, &cofs);
                return Ok(Decision::rank0(CertBody::Poly { pairs: Vec::new(), multipliers }));
            }
        }
    }
    if d == 1 {
        return Ok(Decision {
            found: None,
            proven_lower: n as u64,
            complete: true,
            linear_convention: true,
            lower_source: LowerBoundSource::LinearAlgebra,
        });
    }
    if d == 2 {
        if let Some(dec) = poly_quadratic_relative(&tilde, &refs, counter)? {
            return Ok(dec);
        }
    }
    // Generic ascending sweeps.
    let mut established = 1u64;
    for r in 1..=level_cap {
        match poly_sweep_level(&tilde, &refs, r, counter) {
            Ok(Some(body)) => {
                return Ok(Decision {
                    found: Some((r, body)),
                    proven_lower: r,
                    complete: true,
                    linear_convention: false,
                    lower_source: LowerBoundSource::ExhaustedSearch,
                });
            }
            Ok(None) => established = r + 1,
            Err(Error::BudgetExhausted(_)) => {
                return Ok(Decision {
                    found: None,
                    proven_lower: established,
                    complete: false,
                    linear_convention: false,
                    lower_source: LowerBoundSource::ExhaustedSearch,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Decision {
        found: None,
        proven_lower: level_cap + 1,
        complete: true,
        linear_convention: false,
        lower_source: LowerBoundSource::ExhaustedSearch,
    })
}

// ---------------------------------------------------------------------------
// Multilinear-side machinery.
// ---------------------------------------------------------------------------

struct MlRef {
    layer: usize,
    index: usize,
    tilde: MultiLinearMap,
    cofactor_support: IndexSet,
}

fn ml_refs(reference: Option<&Tower>, support: &IndexSet) -> Vec<MlRef> {
    let mut out = Vec::new();
    if let Some(t) = reference {
        for (layer_idx, layer) in t.layers().iter().enumerate() {
            for (map_idx, map) in layer.affine_maps().iter().enumerate() {
                let tilde = map.multilinear_part();
                if tilde.is_zero() || !tilde.support().is_subset_of(support) {
                    continue;
                }
                out.push(MlRef {
                    layer: layer_idx,
                    index: map_idx,
                    cofactor_support: support.minus(tilde.support()),
                    tilde,
                });
            }
        }
    }
    out
}

fn ml_system(
    target_shape: &crate::field::SpaceShape,
    support: &IndexSet,
    generators: &[(&MultiLinearMap, &IndexSet)],
) -> (Mat, Vec<(usize, usize)>, Vec<Vec<usize>>) {
    let field = target_shape.field();
    let rows_idx = MultiLinearMap::full_index_space(target_shape, support);
    let row_index: std::collections::HashMap<&[usize], usize> =
        rows_idx.iter().enumerate().map(|(i, m)| (m.as_slice(), i)).collect();
    let mut columns: Vec<Vec<Scalar>> = Vec::new();
    let mut ranges = Vec::with_capacity(generators.len());
    for (g, cof_support) in generators {
        let start = columns.len();
        let cof_space = MultiLinearMap::full_index_space(target_shape, cof_support);
        for unit in &cof_space {
            let mut col = vec![Scalar::ZERO; rows_idx.len()];
            for (gidx, c) in g.entries() {
                // Interleave generator and cofactor indices into support order.
                let mut full = Vec::with_capacity(support.len());
                let mut pg = 0;
                let mut pc = 0;
                for &fac in support.members() {
                    if g.support().contains(fac) {
                        full.push(gidx[pg]);
                        pg += 1;
                    } else {
                        full.push(unit[pc]);
                        pc += 1;
                    }
                }
                if let Some(&r) = row_index.get(full.as_slice()) {
                    col[r] = field.add(col[r], c);
                }
            }
            columns.push(col);
        }
        ranges.push((start, columns.len()));
    }
    let mut mat = Mat::zeros(field, rows_idx.len(), columns.len());
    for (c, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            if !v.is_zero() {
                mat.set(r, c, *v);
            }
        }
    }
    (mat, ranges, rows_idx)
}

fn ml_rhs(target: &MultiLinearMap, rows_idx: &[Vec<usize>]) -> Vec<Scalar> {
    let idx: std::collections::HashMap<&[usize], usize> =
        rows_idx.iter().enumerate().map(|(i, m)| (m.as_slice(), i)).collect();
    let mut rhs = vec![Scalar::ZERO; rows_idx.len()];
    for (e, c) in target.entries() {
        if let Some(&r) = idx.get(e.as_slice()) {
            rhs[r] = c;
        }
    }
    rhs
}

fn ml_cofactor(
    shape: &crate::field::SpaceShape,
    support: &IndexSet,
    coeffs: &[Scalar],
) -> MultiLinearMap {
    let space = MultiLinearMap::full_index_space(shape, support);
    let raw: Vec<(Vec<usize>, Scalar)> = space
        .into_iter()
        .zip(coeffs)
        .filter(|(_, c)| !c.is_zero())
        .map(|(m, c)| (m, *c))
        .collect();
    MultiLinearMap::from_entries(shape.clone(), support.clone(), raw).expect("cofactor")
}

fn solve_ml_combination(
    target: &MultiLinearMap,
    generators: &[(&MultiLinearMap, &IndexSet)],
) -> Option<Vec<MultiLinearMap>> {
    let (mat, ranges, rows) = ml_system(target.shape(), target.support(), generators);
    let rhs = ml_rhs(target, &rows);
    let sol = linalg::solve(&mat, &rhs)?;
    Some(
        generators
            .iter()
            .zip(&ranges)
            .map(|((_, sup), (s, e))| ml_cofactor(target.shape(), sup, &sol[*s..*e]))
            .collect(),
    )
}

pub(crate) fn solve_ml_combination_public(
    target: &MultiLinearMap,
    generators: &[(&MultiLinearMap, &IndexSet)],
) -> Option<Vec<MultiLinearMap>> {
    solve_ml_combination(target, generators)
}

fn ml_multipliers_from_cofactors(refs: &[MlRef], cofs: &[MultiLinearMap]) -> Vec<MlMultiplier> {
    refs.iter()
        .zip(cofs)
        .filter(|(_, c)| !c.is_zero())
        .map(|(r, c)| MlMultiplier { layer: r.layer, index: r.index, multiplier: c.clone() })
        .collect()
}

/// Monic tensors on a support: first nonzero entry (canonical index order)
/// equals 1.
fn monic_tensors(
    shape: &crate::field::SpaceShape,
    support: &IndexSet,
    max_count: u64,
) -> Option<Vec<MultiLinearMap>> {
    let field = shape.field();
    let space = MultiLinearMap::full_index_space(shape, support);
    let count = projective_count(field.p(), space.len() as u32)?;
    if count > max_count {
        return None;
    }
    let p = field.p() as u64;
    let mut out = Vec::with_capacity(count as usize);
    for lead in 0..space.len() {
        let tail = space.len() - lead - 1;
        let tail_count = p.checked_pow(tail as u32)?;
        for mut code in 0..tail_count {
            let mut raw: Vec<(Vec<usize>, Scalar)> = vec![(space[lead].clone(), Scalar::ONE)];
            for mono in space[lead + 1..].iter() {
                let digit = (code % p) as u32;
                code /= p;
                if digit != 0 {
                    raw.push((mono.clone(), Scalar(digit)));
                }
            }
            out.push(
                MultiLinearMap::from_entries(shape.clone(), support.clone(), raw)
                    .expect("monic tensor"),
            );
        }
    }
    Some(out)
}

/// Proper nonempty subsets of the support containing its smallest member
/// (canonical split sides), by (size, lex).
fn split_sides(support: &IndexSet) -> Vec<IndexSet> {
    let members = support.members();
    let min = members[0];
    support
        .subsets()
        .into_iter()
        .filter(|s| !s.is_empty() && s.len() < support.len() && s.contains(min))
        .collect()
}

fn ml_sweep_level(
    target: &MultiLinearMap,
    refs: &[MlRef],
    r: u64,
    counter: &mut BudgetCounter,
) -> Result<Option<CertBody>> {
    let support = target.support().clone();
    let sides = split_sides(&support);
    // Tuples of (side, monic tensor) pairs, non-decreasing in (side index,
    // tensor index).
    let mut lists: Vec<(IndexSet, Vec<MultiLinearMap>)> = Vec::new();
    for side in &sides {
        let cands = monic_tensors(target.shape(), side, counter.remaining())
            .ok_or(Error::BudgetExhausted(counter.remaining()))?;
        lists.push((side.clone(), cands));
    }
    // Flattened candidate index: (side_idx, tensor_idx).
    let flat: Vec<(usize, usize)> = lists
        .iter()
        .enumerate()
        .flat_map(|(si, (_, v))| (0..v.len()).map(move |ti| (si, ti)))
        .collect();
    if flat.is_empty() {
        return Ok(None);
    }
    let mut choice = vec![0usize; r as usize];
    'tuples: loop {
        counter.try_spend(1)?;
        let qs: Vec<&MultiLinearMap> = choice
            .iter()
            .map(|&c| {
                let (si, ti) = flat[c];
                &lists[si].1[ti]
            })
            .collect();
        let complements: Vec<IndexSet> =
            qs.iter().map(|q| support.minus(q.support())).collect();
        let mut generators: Vec<(&MultiLinearMap, &IndexSet)> =
            qs.iter().zip(&complements).map(|(q, c)| (*q, c)).collect();
        for f in refs {
            generators.push((&f.tilde, &f.cofactor_support));
        }
        if let Some(cofs) = solve_ml_combination(target, &generators) {
            let pairs: Vec<(MultiLinearMap, MultiLinearMap)> = qs
                .iter()
                .zip(cofs.iter())
                .filter(|(_, c)| !c.is_zero())
                .map(|(q, c)| ((*q).clone(), c.clone()))
                .collect();
            let multipliers = ml_multipliers_from_cofactors(refs, &cofs[qs.len()..]);
            return Ok(Some(CertBody::Linear { pairs, multipliers }));
        }
        // Advance non-decreasing tuple over flat indices.
        let mut pos = choice.len();
        loop {
            if pos == 0 {
                break 'tuples;
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < flat.len() {
                for t in pos + 1..choice.len() {
                    choice[t] = choice[pos];
                }
                break;
            }
        }
        if choice[0] >= flat.len() {
            break;
        }
    }
    Ok(None)
}

/// Exact relative partition rank for a bilinear target: matrix rank after
/// restricting both factors to the kernels of the arity-1 references, with
/// constant multipliers for full-support references enumerated.
fn ml_bilinear_relative(
    target: &MultiLinearMap,
    refs: &[MlRef],
    counter: &mut BudgetCounter,
) -> Result<Option<Decision>> {
    let shape = target.shape().clone();
    let field = shape.field();
    let support = target.support().clone();
    let f1 = support.members()[0];
    let f2 = support.members()[1];
    let (n1, n2) = (shape.dims()[f1], shape.dims()[f2]);
    let mut lin1: Vec<&MlRef> = Vec::new();
    let mut lin2: Vec<&MlRef> = Vec::new();
    let mut full: Vec<&MlRef> = Vec::new();
    for r in refs {
        match r.tilde.support().members() {
            [f] if *f == f1 => lin1.push(r),
            [f] if *f == f2 => lin2.push(r),
            m if m == support.members() => full.push(r),
            _ => return Ok(None),
        }
    }
    let c_space = (field.p() as u128).checked_pow(full.len() as u32);
    let Some(c_space) = c_space.filter(|&c| c <= QUAD_CONST_CAP as u128) else {
        return Ok(None);
    };
    counter.try_spend(c_space as u64)?;

    let vec_of = |r: &MlRef, dim: usize| -> Vec<Scalar> {
        let mut v = vec![Scalar::ZERO; dim];
        for (idx, c) in r.tilde.entries() {
            v[idx[0]] = c;
        }
        v
    };
    let kernel_of = |rows: Vec<Vec<Scalar>>, dim: usize| -> Vec<Vec<Scalar>> {
        if rows.is_empty() {
            (0..dim)
                .map(|i| {
                    let mut v = vec![Scalar::ZERO; dim];
                    v[i] = Scalar::ONE;
                    v
                })
                .collect()
        } else {
            linalg::nullspace(&Mat::from_rows(field, rows))
        }
    };
    let k1 = kernel_of(lin1.iter().map(|r| vec_of(r, n1)).collect(), n1);
    let k2 = kernel_of(lin2.iter().map(|r| vec_of(r, n2)).collect(), n2);
    let w1 = if k1.is_empty() { Vec::new() } else { left_inverse(field, &k1, n1) };
    let w2 = if k2.is_empty() { Vec::new() } else { left_inverse(field, &k2, n2) };

    let matrix_of = |m: &MultiLinearMap| -> Vec<Vec<Scalar>> {
        let mut out = vec![vec![Scalar::ZERO; n2]; n1];
        for (idx, c) in m.entries() {
            out[idx[0]][idx[1]] = c;
        }
        out
    };
    let base = matrix_of(target);
    let fulls: Vec<Vec<Vec<Scalar>>> = full.iter().map(|r| matrix_of(&r.tilde)).collect();

    let mut best: Option<(u64, Vec<Scalar>, Vec<(Vec<Scalar>, Vec<Scalar>)>)> = None;
    let mut cvec = vec![Scalar::ZERO; full.len()];
    loop {
        let mut c_mat = base.clone();
        for (cf, fm) in cvec.iter().zip(&fulls) {
            for i in 0..n1 {
                for j in 0..n2 {
                    c_mat[i][j] = field.add(c_mat[i][j], field.mul(*cf, fm[i][j]));
                }
            }
        }
        // Restricted matrix K1^T C K2.
        let kr = k1.len();
        let kc = k2.len();
        let mut restricted = vec![vec![Scalar::ZERO; kc]; kr];
        for a in 0..kr {
            for b in 0..kc {
                let mut acc = Scalar::ZERO;
                for i in 0..n1 {
                    if k1[a][i].is_zero() {
                        continue;
                    }
                    for j in 0..n2 {
                        acc = field.add(
                            acc,
                            field.mul(field.mul(k1[a][i], c_mat[i][j]), k2[b][j]),
                        );
                    }
                }
                restricted[a][b] = acc;
            }
        }
        let fac = if kr == 0 || kc == 0 {
            Vec::new()
        } else {
            linalg::rank_factorization(&Mat::from_rows(field, restricted))
        };
        let rank = fac.len() as u64;
        if best.as_ref().map(|(r, _, _)| rank < *r).unwrap_or(true) {
            best = Some((rank, cvec.clone(), fac));
        }
        let mut pos = 0;
        loop {
            if pos == cvec.len() {
                break;
            }
            cvec[pos].0 += 1;
            if cvec[pos].0 < field.p() {
                break;
            }
            cvec[pos] = Scalar::ZERO;
            pos += 1;
        }
        if pos == cvec.len() {
            break;
        }
    }
    let (rank, cstar, fac) = best.expect("at least one choice");
    // Lift pairs: a_i = W1^T u_i, b_i = W2^T v_i.
    let lift = |w: &[Vec<Scalar>], u: &[Scalar], dim: usize| -> Vec<Scalar> {
        let mut out = vec![Scalar::ZERO; dim];
        for (j, row) in w.iter().enumerate() {
            if u[j].is_zero() {
                continue;
            }
            for i in 0..dim {
                out[i] = field.add(out[i], field.mul(row[i], u[j]));
            }
        }
        out
    };
    let side1 = IndexSet::new(vec![f1]);
    let side2 = IndexSet::new(vec![f2]);
    let vec_to_ml = |v: &[Scalar], side: &IndexSet| -> MultiLinearMap {
        let raw: Vec<(Vec<usize>, Scalar)> = v
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| (vec![i], *c))
            .collect();
        MultiLinearMap::from_entries(shape.clone(), side.clone(), raw).expect("vector map")
    };
    let mut pairs = Vec::with_capacity(fac.len());
    let mut lifted_sum = MultiLinearMap::zero(shape.clone(), support.clone());
    for (u, v) in &fac {
        let a = lift(&w1, u, n1);
        let b = lift(&w2, v, n2);
        let qa = vec_to_ml(&a, &side1);
        let rb = vec_to_ml(&b, &side2);
        lifted_sum = lifted_sum.add(&qa.outer_product(&rb)?)?;
        pairs.push((qa, rb));
    }
    // Residual lies in the span of l (x) anything + anything (x) l'.
    let mut combined = target.clone();
    for (cf, r) in cstar.iter().zip(&full) {
        combined = combined.add(&r.tilde.scale(*cf))?;
    }
    let residual = combined.sub(&lifted_sum)?;
    let mut multipliers: Vec<MlMultiplier> = Vec::new();
    if !residual.is_zero() {
        let generators: Vec<(&MultiLinearMap, &IndexSet)> = lin1
            .iter()
            .map(|r| (&r.tilde, &side2))
            .chain(lin2.iter().map(|r| (&r.tilde, &side1)))
            .collect();
        let cofs = solve_ml_combination(&residual, &generators)
            .expect("residual lies in the arity-1 reference span");
        for (r, c) in lin1.iter().chain(lin2.iter()).zip(&cofs) {
            if !c.is_zero() {
                multipliers.push(MlMultiplier {
                    layer: r.layer,
                    index: r.index,
                    multiplier: c.neg(),
                });
            }
        }
    }
    for (cf, r) in cstar.iter().zip(&full) {
        if !cf.is_zero() {
            multipliers.push(MlMultiplier {
                layer: r.layer,
                index: r.index,
                multiplier: MultiLinearMap::constant(shape.clone(), field.neg(*cf)),
            });
        }
    }
    Ok(Some(Decision {
        found: Some((rank, CertBody::Linear { pairs, multipliers })),
        proven_lower: rank,
        complete: true,
        linear_convention: false,
        lower_source: LowerBoundSource::LinearAlgebra,
    }))
}

fn ml_relative_decide(
    target: &MultiLinearMap,
    reference: Option<&Tower>,
    level_cap: u64,
    counter: &mut BudgetCounter,
) -> Result<Decision> {
    if target.is_zero() {
        return Ok(Decision::rank0(CertBody::Linear { pairs: Vec::new(), multipliers: Vec::new() }));
    }
    let support = target.support().clone();
    let refs = ml_refs(reference, &support);
    // Rank 0 via multipliers.
    {
        let generators: Vec<(&MultiLinearMap, &IndexSet)> =
            refs.iter().map(|f| (&f.tilde, &f.cofactor_support)).collect();
        if let Some(cofs) = solve_ml_combination(target, &generators) {
            let multipliers = ml_multipliers_from_cofactors(&refs, &cofs);
            return Ok(Decision::rank0(CertBody::Linear { pairs: Vec::new(), multipliers }));
        }
    }
    match support.len() {
        0 | 1 => {
            // No proper split exists: the irreducible case takes the
            // dimension proxy convention.
            let proxy = if support.is_empty() {
                target.shape().total_dim() as u64
            } else {
                target.shape().dims()[support.members()[0]] as u64
            };
            Ok(Decision {
                found: None,
                proven_lower: proxy,
                complete: true,
                linear_convention: true,
                lower_source: LowerBoundSource::LinearAlgebra,
            })
        }
        2 => {
            if let Some(dec) = ml_bilinear_relative(target, &refs, counter)? {
                return Ok(dec);
            }
            ml_generic_sweeps(target, &refs, level_cap, counter)
        }
        _ => ml_generic_sweeps(target, &refs, level_cap, counter),
    }
}

fn ml_generic_sweeps(
    target: &MultiLinearMap,
    refs: &[MlRef],
    level_cap: u64,
    counter: &mut BudgetCounter,
) -> Result<Decision> {
    let mut established = 1u64;
    for r in 1..=level_cap {
        match ml_sweep_level(target, refs, r, counter) {
            Ok(Some(body)) => {
                return Ok(Decision {
                    found: Some((r, body)),
                    proven_lower: r,
                    complete: true,
                    linear_convention: false,
                    lower_source: LowerBoundSource::ExhaustedSearch,
                });
            }
            Ok(None) => established = r + 1,
            Err(Error::BudgetExhausted(_)) => {
                return Ok(Decision {
                    found: None,
                    proven_lower: established,
                    complete: false,
                    linear_convention: false,
                    lower_source: LowerBoundSource::ExhaustedSearch,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Decision {
        found: None,
        proven_lower: level_cap + 1,
        complete: true,
        linear_convention: false,
        lower_source: LowerBoundSource::ExhaustedSearch,
    })
}

// ---------------------------------------------------------------------------
// Collections and layers.
// ---------------------------------------------------------------------------

/// Canonical projective representatives of F_p^m minus zero: first nonzero
/// coordinate is 1, enumerated pivot-first.
pub fn projective_combinations(field: PrimeField, m: usize) -> Result<Vec<Vec<Scalar>>> {
    let count = projective_count(field.p(), m as u32)
        .ok_or_else(|| Error::Invalid("combination space overflows".into()))?;
    if count > PROJECTIVE_CAP {
        return Err(Error::Invalid(format!(
            "combination space of {count} exceeds the cap {PROJECTIVE_CAP}"
        )));
    }
    let p = field.p() as u64;
    let mut out = Vec::with_capacity(count as usize);
    for pivot in 0..m {
        let tail = m - pivot - 1;
        let tail_count = p.pow(tail as u32);
        for mut code in 0..tail_count {
            let mut a = vec![Scalar::ZERO; m];
            a[pivot] = Scalar::ONE;
            for slot in a.iter_mut().skip(pivot + 1) {
                *slot = Scalar((code % p) as u32);
                code /= p;
            }
            out.push(a);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct LayerQueryOutcome {
    pub lower: u64,
    pub upper: Option<u64>,
    pub witness: Option<(Vec<Scalar>, RankCertificate)>,
    pub linear_convention: bool,
    pub complete: bool,
}

/// Minimum relative rank over all nonzero combinations of a layer's maps,
/// decided up to `level_cap`; used by the regularity predicate and the
/// decomposition loop.
pub fn layer_collection_rank(
    layer: &Layer,
    reference: &Tower,
    level_cap: u64,
    counter: &mut BudgetCounter,
) -> Result<LayerQueryOutcome> {
    match reference.flavor() {
        Flavor::Polynomial => {
            let tildes: Vec<Poly> =
                layer.poly_maps().iter().map(|m| m.homogeneous_part()).collect();
            poly_collection_query(&tildes, Some(reference), level_cap, counter, CertKind::Relative)
        }
        _ => {
            let maps = layer.affine_maps();
            // Group by tilde support; mixed-support layers (coordinate-
            // multiplied towers) are decided group-wise, justified by the
            // zero-substitution restriction argument.
            let mut groups: Vec<(IndexSet, Vec<usize>)> = Vec::new();
            for (i, m) in maps.iter().enumerate() {
                let sup = m.multilinear_part().support().clone();
                match groups.iter_mut().find(|(s, _)| *s == sup) {
                    Some((_, v)) => v.push(i),
                    None => groups.push((sup, vec![i])),
                }
            }
            let mut best: Option<LayerQueryOutcome> = None;
            let mut all_complete = true;
            let mut lower = u64::MAX;
            let mut linear_convention = false;
            for (_, idxs) in &groups {
                let tildes: Vec<MultiLinearMap> =
                    idxs.iter().map(|&i| maps[i].multilinear_part()).collect();
                let out =
                    ml_collection_query(&tildes, Some(reference), level_cap, counter, CertKind::RelativePartition)?;
                all_complete &= out.complete;
                linear_convention |= out.linear_convention;
                lower = lower.min(out.lower);
                let better = match (&best, &out.upper) {
                    (_, None) => false,
                    (None, Some(_)) => true,
                    (Some(b), Some(u)) => b.upper.map(|bu| *u < bu).unwrap_or(true),
                };
                if better {
                    // Embed the combination back into full layer coordinates.
                    let mut embedded = out.clone();
                    if let Some((a, cert)) = &out.witness {
                        let mut full = vec![Scalar::ZERO; maps.len()];
                        for (pos, &i) in idxs.iter().enumerate() {
                            full[i] = a[pos];
                        }
                        let mut cert = cert.clone();
                        cert.combination = Some(full.clone());
                        embedded.witness = Some((full, cert));
                    }
                    best = Some(embedded);
                }
            }
            let upper = best.as_ref().and_then(|b| b.upper);
            Ok(LayerQueryOutcome {
                lower,
                upper,
                witness: best.and_then(|b| b.witness),
                linear_convention,
                complete: all_complete,
            })
        }
    }
}

fn poly_collection_query(
    tildes: &[Poly],
    reference: Option<&Tower>,
    level_cap: u64,
    counter: &mut BudgetCounter,
    kind: CertKind,
) -> Result<LayerQueryOutcome> {
    let field = tildes[0].field();
    let n = tildes[0].num_vars();
    let d = tildes.iter().map(|t| t.degree()).max().unwrap_or(0);
    let refs = poly_refs(reference, d);
    // Joint rank-0: some combination lies in the reference span.
    {
        let mut generators: Vec<(&Poly, u32)> = tildes.iter().map(|t| (t, 0u32)).collect();
        for f in &refs {
            generators.push((&f.tilde, f.cofactor_degree));
        }
        let (mat, ranges, _) = poly_system(field, n, d, &generators);
        for v in linalg::nullspace(&mat) {
            let a_block: Vec<Scalar> =
                (0..tildes.len()).map(|i| v[ranges[i].0]).collect();
            if let Some(first) = a_block.iter().position(|c| !c.is_zero()) {
                let inv = field.inv(a_block[first]);
                let a: Vec<Scalar> = a_block.iter().map(|c| field.mul(*c, inv)).collect();
                let mut multipliers = Vec::new();
                for (f, (s, e)) in refs.iter().zip(ranges[tildes.len()..].iter()) {
                    let cof = cofactor_from_solution(field, n, f.cofactor_degree, &v[*s..*e]);
                    let scaled = cof.scale(inv).neg();
                    if !scaled.is_zero() {
                        multipliers.push(PolyMultiplier {
                            layer: f.layer,
                            index: f.index,
                            multiplier: scaled,
                        });
                    }
                }
                let cert = RankCertificate {
                    kind,
                    combination: Some(a.clone()),
                    claimed_rank: 0,
                    body: CertBody::Poly { pairs: Vec::new(), multipliers },
                };
                return Ok(LayerQueryOutcome {
                    lower: 0,
                    upper: Some(0),
                    witness: Some((a, cert)),
                    linear_convention: false,
                    complete: true,
                });
            }
        }
    }
    if d == 1 {
        return Ok(LayerQueryOutcome {
            lower: n as u64,
            upper: None,
            witness: None,
            linear_convention: true,
            complete: true,
        });
    }
    let combos = projective_combinations(field, tildes.len())?;
    counter.try_spend(combos.len() as u64)?;
    let combine = |a: &[Scalar]| -> Poly {
        let mut acc = Poly::zero(field, n);
        for (c, t) in a.iter().zip(tildes) {
            acc = acc.add(&t.scale(*c)).expect("same space");
        }
        acc
    };
    if d == 2 {
        // Exact per-combination ranks via the quadratic engine.
        let mut best: Option<(u64, Vec<Scalar>, CertBody)> = None;
        let mut exact_all = true;
        for a in &combos {
            let target = combine(a);
            let dec = poly_relative_decide(&target, reference, level_cap.max(n as u64), counter)?;
            if !dec.complete {
                exact_all = false;
                continue;
            }
            match dec.found {
                Some((r, body)) => {
                    if best.as_ref().map(|(b, _, _)| r < *b).unwrap_or(true) {
                        best = Some((r, a.clone(), body));
                    }
                }
                None => {
                    // Linear-convention inside a quadratic layer cannot occur.
                    exact_all = false;
                }
            }
        }
        return Ok(match best {
            Some((r, a, body)) => {
                let cert = RankCertificate {
                    kind,
                    combination: Some(a.clone()),
                    claimed_rank: r,
                    body,
                };
                LayerQueryOutcome {
                    lower: if exact_all { r } else { 0 },
                    upper: Some(r),
                    witness: if r <= level_cap { Some((a, cert)) } else { None },
                    linear_convention: false,
                    complete: exact_all,
                }
            }
            None => LayerQueryOutcome {
                lower: 0,
                upper: None,
                witness: None,
                linear_convention: false,
                complete: false,
            },
        });
    }
    // Level-synchronous sweeps for d >= 3.
    let mut established = 1u64;
    for r in 1..=level_cap {
        for a in &combos {
            let target = combine(a);
            if target.is_zero() {
                continue;
            }
            match poly_sweep_level(&target, &refs, r, counter) {
                Ok(Some(body)) => {
                    let cert = RankCertificate {
                        kind,
                        combination: Some(a.clone()),
                        claimed_rank: r,
                        body,
                    };
                    return Ok(LayerQueryOutcome {
                        lower: r,
                        upper: Some(r),
                        witness: Some((a.clone(), cert)),
                        linear_convention: false,
                        complete: true,
                    });
                }
                Ok(None) => {}
                Err(Error::BudgetExhausted(_)) => {
                    return Ok(LayerQueryOutcome {
                        lower: established,
                        upper: None,
                        witness: None,
                        linear_convention: false,
                        complete: false,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        established = r + 1;
    }
    Ok(LayerQueryOutcome {
        lower: level_cap + 1,
        upper: None,
        witness: None,
        linear_convention: false,
        complete: true,
    })
}

fn ml_collection_query(
    tildes: &[MultiLinearMap],
    reference: Option<&Tower>,
    level_cap: u64,
    counter: &mut BudgetCounter,
    kind: CertKind,
) -> Result<LayerQueryOutcome> {
    let shape = tildes[0].shape().clone();
    let field = shape.field();
    let support = tildes[0].support().clone();
    let refs = ml_refs(reference, &support);
    // Joint rank-0.
    {
        let mut generators: Vec<(&MultiLinearMap, &IndexSet)> = Vec::new();
        let empty = IndexSet::empty();
        for t in tildes {
            generators.push((t, &empty));
        }
        for f in &refs {
            generators.push((&f.tilde, &f.cofactor_support));
        }
        let (mat, ranges, _) = ml_system(&shape, &support, &generators);
        for v in linalg::nullspace(&mat) {
            let a_block: Vec<Scalar> = (0..tildes.len()).map(|i| v[ranges[i].0]).collect();
            if let Some(first) = a_block.iter().position(|c| !c.is_zero()) {
                let inv = field.inv(a_block[first]);
                let a: Vec<Scalar> = a_block.iter().map(|c| field.mul(*c, inv)).collect();
                let mut multipliers = Vec::new();
                for (f, (s, e)) in refs.iter().zip(ranges[tildes.len()..].iter()) {
                    let cof = ml_cofactor(&shape, &f.cofactor_support, &v[*s..*e]);
                    let scaled = cof.scale(inv).neg();
                    if !scaled.is_zero() {
                        multipliers.push(MlMultiplier {
                            layer: f.layer,
                            index: f.index,
                            multiplier: scaled,
                        });
                    }
                }
                let cert = RankCertificate {
                    kind,
                    combination: Some(a.clone()),
                    claimed_rank: 0,
                    body: CertBody::Linear { pairs: Vec::new(), multipliers },
                };
                return Ok(LayerQueryOutcome {
                    lower: 0,
                    upper: Some(0),
                    witness: Some((a, cert)),
                    linear_convention: false,
                    complete: true,
                });
            }
        }
    }
    if support.len() <= 1 {
        let proxy = if support.is_empty() {
            shape.total_dim() as u64
        } else {
            shape.dims()[support.members()[0]] as u64
        };
        return Ok(LayerQueryOutcome {
            lower: proxy,
            upper: None,
            witness: None,
            linear_convention: true,
            complete: true,
        });
    }
    let combos = projective_combinations(field, tildes.len())?;
    counter.try_spend(combos.len() as u64)?;
    let combine = |a: &[Scalar]| -> MultiLinearMap {
        let mut acc = MultiLinearMap::zero(shape.clone(), support.clone());
        for (c, t) in a.iter().zip(tildes) {
            acc = acc.add(&t.scale(*c)).expect("same support");
        }
        acc
    };
    if support.len() == 2 {
        let mut best: Option<(u64, Vec<Scalar>, CertBody)> = None;
        let mut exact_all = true;
        for a in &combos {
            let target = combine(a);
            let dec = ml_relative_decide(&target, reference, level_cap, counter)?;
            if !dec.complete {
                exact_all = false;
                continue;
            }
            match dec.found {
                Some((r, body)) => {
                    if best.as_ref().map(|(b, _, _)| r < *b).unwrap_or(true) {
                        best = Some((r, a.clone(), body));
                    }
                }
                None => exact_all = false,
            }
        }
        return Ok(match best {
            Some((r, a, body)) => {
                let cert =
                    RankCertificate { kind, combination: Some(a.clone()), claimed_rank: r, body };
                LayerQueryOutcome {
                    lower: if exact_all { r } else { 0 },
                    upper: Some(r),
                    witness: if r <= level_cap { Some((a, cert)) } else { None },
                    linear_convention: false,
                    complete: exact_all,
                }
            }
            None => LayerQueryOutcome {
                lower: 0,
                upper: None,
                witness: None,
                linear_convention: false,
                complete: false,
            },
        });
    }
    let mut established = 1u64;
    for r in 1..=level_cap {
        for a in &combos {
            let target = combine(a);
            if target.is_zero() {
                continue;
            }
            match ml_sweep_level(&target, &refs, r, counter) {
                Ok(Some(body)) => {
                    let cert = RankCertificate {
                        kind,
                        combination: Some(a.clone()),
                        claimed_rank: r,
                        body,
                    };
                    return Ok(LayerQueryOutcome {
                        lower: r,
                        upper: Some(r),
                        witness: Some((a.clone(), cert)),
                        linear_convention: false,
                        complete: true,
                    });
                }
                Ok(None) => {}
                Err(Error::BudgetExhausted(_)) => {
                    return Ok(LayerQueryOutcome {
                        lower: established,
                        upper: None,
                        witness: None,
                        linear_convention: false,
                        complete: false,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        established = r + 1;
    }
    Ok(LayerQueryOutcome {
        lower: level_cap + 1,
        upper: None,
        witness: None,
        linear_convention: false,
        complete: true,
    })
}

// ---------------------------------------------------------------------------
// Public operations.
// ---------------------------------------------------------------------------

fn assemble(
    dec: Decision,
    kind: CertKind,
    normalized: bool,
    heuristic_lower: Option<u64>,
) -> RankBound {
    match dec.found {
        Some((r, body)) => {
            let exact = dec.proven_lower >= r;
            let cert = RankCertificate { kind, combination: None, claimed_rank: r, body };
            RankBound {
                lower: if exact { r } else { dec.proven_lower },
                upper: Some(r),
                status: if exact { RankStatus::Exact } else { RankStatus::Bounded },
                certificate: Some(cert),
                lower_source: dec.lower_source,
                linear_convention: false,
                heuristic_lower,
                normalized,
            }
        }
        None => RankBound {
            lower: dec.proven_lower,
            upper: None,
            status: if dec.complete { RankStatus::Bounded } else { RankStatus::Unknown },
            certificate: None,
            lower_source: dec.lower_source,
            linear_convention: dec.linear_convention,
            heuristic_lower,
            normalized,
        },
    }
}

/// Schmidt rank of a polynomial (of its top homogeneous component).
pub fn schmidt_rank(target: &Poly, budget: u64) -> Result<RankBound> {
    let mut counter = BudgetCounter::new(budget);
    let normalized = !target.is_homogeneous() && !target.is_zero();
    let cap = target.num_vars() as u64;
    let dec = poly_relative_decide(target, None, cap, &mut counter)?;
    let mut bound = assemble(dec, CertKind::Schmidt, normalized, None);
    // Sound bias route via polarization when the search was inconclusive.
    if bound.status == RankStatus::Unknown {
        let d = target.degree();
        let domain = (target.field().p() as u128)
            .checked_pow((target.num_vars() as u32) * d);
        if let Some(domain) = domain.filter(|&c| c <= BIAS_DOMAIN_CAP as u128) {
            let _ = domain;
            if let Ok(bar) = target.polarize() {
                if let Ok(lb) = bias_rank_lower_bound(&bar, BIAS_DOMAIN_CAP) {
                    let scaled = lb.div_ceil(1u64 << d.min(32));
                    if scaled > bound.lower {
                        bound.lower = scaled;
                        bound.lower_source = LowerBoundSource::Bias;
                    }
                }
            }
        }
    }
    Ok(bound)
}

/// Partition rank of a multilinear map.
pub fn partition_rank(target: &MultiLinearMap, budget: u64) -> Result<RankBound> {
    let mut counter = BudgetCounter::new(budget);
    let cap = target
        .support()
        .members()
        .iter()
        .map(|&f| target.shape().dims()[f])
        .min()
        .unwrap_or(0) as u64;
    let dec = ml_relative_decide(target, None, cap.max(1), &mut counter)?;
    let mut bound = assemble(dec, CertKind::Partition, false, None);
    // Exact-integer bias lower bound (Claim: prk(P) = r implies bias >= q^-r).
    if bound.status != RankStatus::Exact
        && target.shape().point_count() <= BIAS_DOMAIN_CAP as u128
    {
        let lb = bias_rank_lower_bound(target, BIAS_DOMAIN_CAP)?;
        if lb > bound.lower {
            bound.lower = lb;
            bound.lower_source = LowerBoundSource::Bias;
        }
        if bound.upper == Some(bound.lower) && bound.certificate.is_some() {
            bound.status = RankStatus::Exact;
        }
    }
    Ok(bound)
}

/// Relative Schmidt rank of a polynomial on a tower.
pub fn relative_rank(target: &Poly, tower: &Tower, budget: u64) -> Result<RankBound> {
    if tower.flavor() != Flavor::Polynomial {
        return Err(Error::FlavorMismatch("relative_rank needs a polynomial tower".into()));
    }
    let mut counter = BudgetCounter::new(budget);
    let normalized = !target.is_homogeneous() && !target.is_zero()
        || tower.all_poly_maps().iter().any(|m| !m.is_homogeneous());
    let cap = target.num_vars() as u64;
    let mut dec = poly_relative_decide(target, Some(tower), cap, &mut counter)?;
    // Exhaustive multiplier enumeration when the coefficient space is tiny
    // and the search was not already exact.
    if !dec.complete {
        if let Some(better) = poly_multiplier_enumeration(target, tower, &mut counter)? {
            dec = better;
        }
    }
    let heuristic = if !dec.complete {
        heuristic_relative_lower(target, tower)
    } else {
        None
    };
    Ok(assemble(dec, CertKind::Relative, normalized, heuristic))
}

fn poly_multiplier_enumeration(
    target: &Poly,
    tower: &Tower,
    counter: &mut BudgetCounter,
) -> Result<Option<Decision>> {
    let field = target.field();
    let n = target.num_vars();
    let tilde = target.homogeneous_part();
    let d = tilde.degree();
    let refs = poly_refs(Some(tower), d);
    let dims: Vec<usize> = refs
        .iter()
        .map(|f| monomials_exact_degree(n, f.cofactor_degree).len())
        .collect();
    let total: usize = dims.iter().sum();
    let space = (field.p() as u128).checked_pow(total as u32);
    let Some(space) = space.filter(|&s| s <= MULT_ENUM_CAP as u128) else {
        return Ok(None);
    };
    counter.try_spend(space as u64)?;
    let mut best: Option<(u64, Poly, Vec<Poly>)> = None;
    let mut digits = vec![0u32; total];
    loop {
        // Assemble the multipliers and the combined polynomial.
        let mut combined = tilde.clone();
        let mut cofs = Vec::with_capacity(refs.len());
        let mut off = 0;
        for (f, dim) in refs.iter().zip(&dims) {
            let coeffs: Vec<Scalar> = digits[off..off + dim].iter().map(|&d| Scalar(d)).collect();
            let cof = cofactor_from_solution(field, n, f.cofactor_degree, &coeffs);
            combined = combined.add(&cof.mul(&f.tilde)?)?;
            cofs.push(cof);
            off += dim;
        }
        let inner = schmidt_rank(&combined, counter.remaining().max(1))?;
        if inner.status == RankStatus::Exact {
            let r = inner.upper.expect("exact has an upper bound");
            if best.as_ref().map(|(b, _, _)| r < *b).unwrap_or(true) {
                best = Some((r, combined.clone(), cofs.clone()));
            }
        }
        // Advance.
        let mut pos = 0;
        loop {
            if pos == total {
                break;
            }
            digits[pos] += 1;
            if digits[pos] < field.p() {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
        if pos == total {
            break;
        }
    }
    let Some((r, combined, cofs)) = best else { return Ok(None) };
    // Rebuild a certificate: pairs from the inner decomposition of the best
    // combined polynomial, multipliers negated back to the target side.
    let inner = schmidt_rank(&combined, counter.remaining().max(1))?;
    let Some(inner_cert) = inner.certificate else { return Ok(None) };
    let CertBody::Poly { pairs, .. } = inner_cert.body else { return Ok(None) };
    let multipliers: Vec<PolyMultiplier> = refs
        .iter()
        .zip(&cofs)
        .filter(|(_, c)| !c.is_zero())
        .map(|(f, c)| PolyMultiplier { layer: f.layer, index: f.index, multiplier: c.neg() })
        .collect();
    Ok(Some(Decision {
        found: Some((r, CertBody::Poly { pairs, multipliers })),
        proven_lower: r,
        complete: true,
        linear_convention: false,
        lower_source: LowerBoundSource::ExhaustedSearch,
    }))
}

fn heuristic_relative_lower(target: &Poly, tower: &Tower) -> Option<u64> {
    // Bias of the target on Z(T), read as a rank lower bound through the
    // rank-bias direction; heuristic because the tower's regularity is not
    // established here.
    let report =
        analytic::bias(analytic::MapRef::Poly(target), Some(tower), BIAS_DOMAIN_CAP).ok()?;
    if report.bias <= 0.0 {
        return None;
    }
    Some(report.log_q_bias.floor().max(0.0) as u64)
}

/// Relative partition rank of a multilinear map on a multilinear tower.
pub fn relative_partition_rank(
    target: &MultiLinearMap,
    tower: &Tower,
    budget: u64,
) -> Result<RankBound> {
    if tower.flavor() == Flavor::Polynomial {
        return Err(Error::FlavorMismatch(
            "relative_partition_rank needs a product-space tower".into(),
        ));
    }
    let mut counter = BudgetCounter::new(budget);
    let cap = target
        .support()
        .members()
        .iter()
        .map(|&f| target.shape().dims()[f])
        .min()
        .unwrap_or(0) as u64;
    let dec = ml_relative_decide(target, Some(tower), cap.max(1), &mut counter)?;
    Ok(assemble(dec, CertKind::RelativePartition, false, None))
}

pub enum CollectionTarget<'a> {
    Polys(&'a [Poly]),
    Linears(&'a [MultiLinearMap]),
}

/// Minimum relative rank over every nonzero combination of the collection;
/// returns the bound and the witnessing combination when one is found.
pub fn collection_rank(
    collection: CollectionTarget<'_>,
    tower: &Tower,
    budget: u64,
) -> Result<(RankBound, Option<Vec<Scalar>>)> {
    let mut counter = BudgetCounter::new(budget);
    let outcome = match collection {
        CollectionTarget::Polys(maps) => {
            if maps.is_empty() {
                return Err(Error::Invalid("empty collection".into()));
            }
            let tildes: Vec<Poly> = maps.iter().map(|m| m.homogeneous_part()).collect();
            let cap = maps[0].num_vars() as u64;
            poly_collection_query(&tildes, Some(tower), cap, &mut counter, CertKind::Relative)?
        }
        CollectionTarget::Linears(maps) => {
            if maps.is_empty() {
                return Err(Error::Invalid("empty collection".into()));
            }
            let cap = maps[0]
                .support()
                .members()
                .iter()
                .map(|&f| maps[0].shape().dims()[f])
                .min()
                .unwrap_or(1) as u64;
            ml_collection_query(
                maps,
                Some(tower),
                cap.max(1),
                &mut counter,
                CertKind::RelativePartition,
            )?
        }
    };
    let status = if outcome.upper == Some(outcome.lower) && outcome.witness.is_some() {
        RankStatus::Exact
    } else if outcome.complete {
        RankStatus::Bounded
    } else {
        RankStatus::Unknown
    };
    let witness = outcome.witness.clone();
    Ok((
        RankBound {
            lower: outcome.lower,
            upper: outcome.upper,
            status,
            certificate: witness.as_ref().map(|(_, c)| c.clone()),
            lower_source: if outcome.linear_convention {
                LowerBoundSource::LinearAlgebra
            } else {
                LowerBoundSource::ExhaustedSearch
            },
            linear_convention: outcome.linear_convention,
            heuristic_lower: None,
            normalized: false,
        },
        witness.map(|(a, _)| a),
    ))
}

/// Certified partition-rank lower bound from the exact rational bias:
/// the smallest r with q^{-r} <= bias (contrapositive of low rank implies
/// bias). Pure integer arithmetic.
pub fn bias_rank_lower_bound(target: &MultiLinearMap, limit: u64) -> Result<u64> {
    let (num, den) = analytic::ml_bias_exact(target, limit)?;
    if num == 0 {
        // Bias zero never happens for finite partition rank; cap defensively.
        return Ok(u64::MAX);
    }
    let q = target.shape().field().p() as u128;
    let mut acc = num;
    let mut r = 0u64;
    while acc < den {
        acc = acc.saturating_mul(q);
        r += 1;
        if r > 512 {
            break;
        }
    }
    Ok(r)
}
