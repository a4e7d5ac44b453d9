//! Degree-bounded ideal membership by exact linear algebra: find multipliers
//! R with deg(R) + deg(Q) <= deg(P) and P = sum R Q, or certify that the
//! linear system is inconsistent.

use super::certificate::{CertBody, CertKind, MlMultiplier, PolyMultiplier, RankCertificate};
use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::linalg::{self, Mat};
use crate::multiaffine::{IndexSet, MultiLinearMap};
use crate::poly::{monomials_up_to_degree, Poly};
use crate::tower::{Flavor, Tower};

pub const DEFAULT_SYSTEM_CAP: usize = 100_000;

#[derive(Clone, Debug)]
pub struct MembershipSolution<M> {
    pub multipliers: Vec<M>,
}

#[derive(Clone, Debug)]
pub enum MembershipOutcome<M> {
    Solved(MembershipSolution<M>),
    Infeasible,
}

impl<M> MembershipOutcome<M> {
    pub fn is_solved(&self) -> bool {
        matches!(self, MembershipOutcome::Solved(_))
    }
}

impl MembershipSolution<PolyMultiplier> {
    /// The solution as a replayable rank-0 certificate.
    pub fn to_certificate(&self) -> RankCertificate {
        RankCertificate {
            kind: CertKind::Relative,
            combination: None,
            claimed_rank: 0,
            body: CertBody::Poly { pairs: Vec::new(), multipliers: self.multipliers.clone() },
        }
    }
}

impl MembershipSolution<MlMultiplier> {
    pub fn to_certificate(&self) -> RankCertificate {
        RankCertificate {
            kind: CertKind::RelativePartition,
            combination: None,
            claimed_rank: 0,
            body: CertBody::Linear { pairs: Vec::new(), multipliers: self.multipliers.clone() },
        }
    }
}

/// Solves P = sum_{i,j} R_{i,j} Q_{i,j} over all multipliers with
/// deg(R) + deg(Q) <= deg(P); the returned solution is canonical (free
/// variables zero). `Infeasible` is a certified answer: the exact linear
/// system has no solution.
pub fn nullstellensatz_solve(
    target: &Poly,
    tower: &Tower,
    max_unknowns: usize,
) -> Result<MembershipOutcome<PolyMultiplier>> {
    if tower.flavor() != Flavor::Polynomial {
        return Err(Error::FlavorMismatch("polynomial membership needs a polynomial tower".into()));
    }
    let field = target.field();
    let n = target.num_vars();
    let d = target.degree();
    // Collect participating maps and their multiplier monomial spaces.
    struct Slot {
        layer: usize,
        index: usize,
        map: Poly,
        monos: Vec<Vec<u32>>,
    }
    let mut slots: Vec<Slot> = Vec::new();
    for (li, layer) in tower.layers().iter().enumerate() {
        for (mi, map) in layer.poly_maps().iter().enumerate() {
            if map.degree() > d {
                continue;
            }
            slots.push(Slot {
                layer: li,
                index: mi,
                map: map.clone(),
                monos: monomials_up_to_degree(n, d - map.degree()),
            });
        }
    }
    let unknowns: usize = slots.iter().map(|s| s.monos.len()).sum();
    if unknowns > max_unknowns {
        return Err(Error::SystemTooLarge { unknowns, cap: max_unknowns });
    }
    let rows_monos = monomials_up_to_degree(n, d);
    let row_index: std::collections::HashMap<&[u32], usize> =
        rows_monos.iter().enumerate().map(|(i, m)| (m.as_slice(), i)).collect();
    let mut mat = Mat::zeros(field, rows_monos.len(), unknowns);
    let mut col = 0usize;
    for slot in &slots {
        for mono in &slot.monos {
            for t in slot.map.terms() {
                let prod: Vec<u32> = t.exps.iter().zip(mono).map(|(a, b)| a + b).collect();
                let r = row_index[prod.as_slice()];
                mat.set(r, col, field.add(mat.at(r, col), t.coeff));
            }
            col += 1;
        }
    }
    let mut rhs = vec![Scalar::ZERO; rows_monos.len()];
    for t in target.terms() {
        rhs[row_index[t.exps.as_slice()]] = t.coeff;
    }
    let Some(sol) = linalg::solve(&mat, &rhs) else {
        return Ok(MembershipOutcome::Infeasible);
    };
    let mut multipliers = Vec::new();
    let mut off = 0usize;
    for slot in &slots {
        let coeffs = &sol[off..off + slot.monos.len()];
        off += slot.monos.len();
        let raw: Vec<(Vec<u32>, Scalar)> = slot
            .monos
            .iter()
            .zip(coeffs)
            .filter(|(_, c)| !c.is_zero())
            .map(|(m, c)| (m.clone(), *c))
            .collect();
        if raw.is_empty() {
            continue;
        }
        multipliers.push(PolyMultiplier {
            layer: slot.layer,
            index: slot.index,
            multiplier: Poly::from_terms(field, n, raw)?,
        });
    }
    Ok(MembershipOutcome::Solved(MembershipSolution { multipliers }))
}

/// Expands a membership solution and checks P = sum R Q exactly.
pub fn check_poly_membership(
    target: &Poly,
    tower: &Tower,
    solution: &MembershipSolution<PolyMultiplier>,
) -> Result<bool> {
    let mut acc = Poly::zero(target.field(), target.num_vars());
    for m in &solution.multipliers {
        let map = tower
            .layers()
            .get(m.layer)
            .and_then(|l| l.poly_maps().get(m.index))
            .ok_or_else(|| Error::Invalid("multiplier addresses a missing map".into()))?;
        if m.multiplier.degree() + map.degree() > target.degree() {
            return Ok(false);
        }
        acc = acc.add(&m.multiplier.mul(map)?)?;
    }
    Ok(&acc == target)
}

/// The multilinear-category solver: P = sum Q_f (x) R_f with multilinear
/// multipliers on the complementary supports (maps with support outside P's
/// index set do not participate).
pub fn multilinear_nullstellensatz(
    target: &MultiLinearMap,
    tower: &Tower,
    max_unknowns: usize,
) -> Result<MembershipOutcome<MlMultiplier>> {
    if tower.flavor() == Flavor::Polynomial {
        return Err(Error::FlavorMismatch(
            "multilinear membership needs a product-space tower".into(),
        ));
    }
    let support = target.support().clone();
    struct Slot {
        layer: usize,
        index: usize,
        tilde: MultiLinearMap,
        cof: IndexSet,
    }
    let mut slots: Vec<Slot> = Vec::new();
    for (li, layer) in tower.layers().iter().enumerate() {
        for (mi, map) in layer.affine_maps().iter().enumerate() {
            let tilde = map.multilinear_part();
            if tilde.is_zero() || !tilde.support().is_subset_of(&support) {
                continue;
            }
            let cof = support.minus(tilde.support());
            slots.push(Slot { layer: li, index: mi, tilde, cof });
        }
    }
    let unknowns: usize = slots
        .iter()
        .map(|s| MultiLinearMap::full_index_space(target.shape(), &s.cof).len())
        .sum();
    if unknowns > max_unknowns {
        return Err(Error::SystemTooLarge { unknowns, cap: max_unknowns });
    }
    let generators: Vec<(&MultiLinearMap, &IndexSet)> =
        slots.iter().map(|s| (&s.tilde, &s.cof)).collect();
    let Some(cofs) = super::solve_ml_combination_public(target, &generators) else {
        return Ok(MembershipOutcome::Infeasible);
    };
    let multipliers: Vec<MlMultiplier> = slots
        .iter()
        .zip(cofs)
        .filter(|(_, c)| !c.is_zero())
        .map(|(s, c)| MlMultiplier { layer: s.layer, index: s.index, multiplier: c })
        .collect();
    Ok(MembershipOutcome::Solved(MembershipSolution { multipliers }))
}

pub fn check_ml_membership(
    target: &MultiLinearMap,
    tower: &Tower,
    solution: &MembershipSolution<MlMultiplier>,
) -> Result<bool> {
    let mut acc = MultiLinearMap::zero(target.shape().clone(), target.support().clone());
    for m in &solution.multipliers {
        let map = tower
            .layers()
            .get(m.layer)
            .and_then(|l| l.affine_maps().get(m.index))
            .ok_or_else(|| Error::Invalid("multiplier addresses a missing map".into()))?;
        acc = acc.add(&map.multilinear_part().outer_product(&m.multiplier)?)?;
    }
    Ok(&acc == target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CounterRng, PrimeField, SpaceShape};
    use crate::poly::monomials_up_to_degree;

    fn s(v: u32) -> Scalar {
        Scalar(v)
    }

    #[test]
    fn membership_by_inspection() {
        // P = x1 x2 + x3, T = (x1, x3): R = (x2, 1) is one valid solution.
        let f = PrimeField::new(5).unwrap();
        let shape = SpaceShape::single(f, 3).unwrap();
        let t = Tower::polynomial(
            shape,
            vec![(1, vec![Poly::variable(f, 3, 0), Poly::variable(f, 3, 2)])],
        )
        .unwrap();
        let p = Poly::from_terms(f, 3, vec![(vec![1, 1, 0], s(1)), (vec![0, 0, 1], s(1))]).unwrap();
        match nullstellensatz_solve(&p, &t, DEFAULT_SYSTEM_CAP).unwrap() {
            MembershipOutcome::Solved(sol) => {
                assert!(check_poly_membership(&p, &t, &sol).unwrap());
            }
            MembershipOutcome::Infeasible => panic!("expected a solution"),
        }
    }

    #[test]
    fn constant_one_is_infeasible() {
        // P = 1, T = (x1): degree bounds force constant multipliers and
        // c * x1 never equals 1.
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::single(f, 2).unwrap();
        let t = Tower::polynomial(shape, vec![(1, vec![Poly::variable(f, 2, 0)])]).unwrap();
        let one = Poly::constant(f, 2, s(1));
        assert!(matches!(
            nullstellensatz_solve(&one, &t, DEFAULT_SYSTEM_CAP).unwrap(),
            MembershipOutcome::Infeasible
        ));
    }

    #[test]
    fn randomized_roundtrip() {
        // Construct P = sum R Q, recover some valid solution, and replay it.
        let f = PrimeField::new(5).unwrap();
        let mut rng = CounterRng::new(1234);
        for _ in 0..50 {
            let n = 2 + rng.below(4) as usize;
            let shape = SpaceShape::single(f, n).unwrap();
            let num_maps = 1 + rng.below(3) as usize;
            let mut layers: Vec<(u32, Vec<Poly>)> = Vec::new();
            let mut maps = Vec::new();
            for _ in 0..num_maps {
                let deg = 1 + rng.below(2) as u32;
                let monos = monomials_up_to_degree(n, deg);
                let raw: Vec<(Vec<u32>, Scalar)> = monos
                    .iter()
                    .filter(|m| m.iter().sum::<u32>() == deg || rng.below(2) == 0)
                    .map(|m| (m.clone(), rng.scalar(f)))
                    .collect();
                let q = Poly::from_terms(f, n, raw).unwrap();
                if q.is_zero() || q.degree() != deg {
                    continue;
                }
                maps.push(q.clone());
                match layers.iter_mut().find(|(d, _)| *d == deg) {
                    Some((_, v)) => v.push(q),
                    None => layers.push((deg, vec![q])),
                }
            }
            if maps.is_empty() {
                continue;
            }
            layers.sort_by_key(|(d, _)| *d);
            let tower = Tower::polynomial(shape, layers).unwrap();
            // Random multipliers within the degree budget d = 3.
            let d = 3u32;
            let mut p = Poly::zero(f, n);
            for map in tower.layers().iter().flat_map(|l| l.poly_maps()) {
                let monos = monomials_up_to_degree(n, d - map.degree());
                let raw: Vec<(Vec<u32>, Scalar)> =
                    monos.iter().map(|m| (m.clone(), rng.scalar(f))).collect();
                let r = Poly::from_terms(f, n, raw).unwrap();
                p = p.add(&r.mul(map).unwrap()).unwrap();
            }
            if p.is_zero() {
                continue;
            }
            match nullstellensatz_solve(&p, &tower, DEFAULT_SYSTEM_CAP).unwrap() {
                MembershipOutcome::Solved(sol) => {
                    assert!(check_poly_membership(&p, &tower, &sol).unwrap());
                }
                MembershipOutcome::Infeasible => panic!("constructed member must solve"),
            }
        }
    }

    #[test]
    fn nonmember_witnessed_by_point() {
        // A map nonzero somewhere on Z(T) can never be in the ideal.
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::single(f, 3).unwrap();
        let t =
            Tower::polynomial(shape, vec![(1, vec![Poly::variable(f, 3, 0)])]).unwrap();
        let p = Poly::from_terms(f, 3, vec![(vec![0, 1, 0], s(1)), (vec![0, 0, 2], s(2))]).unwrap();
        // Witness: x = (0, 1, 0) lies in Z(x1) and P(x) = 1 != 0.
        assert_eq!(p.evaluate(&[s(0), s(1), s(0)]).unwrap(), s(1));
        assert!(matches!(
            nullstellensatz_solve(&p, &t, DEFAULT_SYSTEM_CAP).unwrap(),
            MembershipOutcome::Infeasible
        ));
    }

    #[test]
    fn ml_membership_examples() {
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::new(f, vec![2, 2]).unwrap();
        let q1 = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::new(vec![0]),
            vec![(vec![0], s(1)), (vec![1], s(1))],
        )
        .unwrap();
        let lin = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::new(vec![1]),
            vec![(vec![1], s(2))],
        )
        .unwrap();
        let target = q1.outer_product(&lin).unwrap();
        let tower = Tower::affine(
            shape.clone(),
            Flavor::MultiLinear,
            vec![vec![crate::multiaffine::MultiAffineMap::from_multilinear(q1)]],
        )
        .unwrap();
        match multilinear_nullstellensatz(&target, &tower, DEFAULT_SYSTEM_CAP).unwrap() {
            MembershipOutcome::Solved(sol) => {
                assert!(check_ml_membership(&target, &tower, &sol).unwrap())
            }
            MembershipOutcome::Infeasible => panic!("expected a solution"),
        }
        // A target with a nonzero value on Z(T) is infeasible.
        let bad = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::new(vec![1]),
            vec![(vec![0], s(1))],
        )
        .unwrap();
        assert!(matches!(
            multilinear_nullstellensatz(&bad, &tower, DEFAULT_SYSTEM_CAP).unwrap(),
            MembershipOutcome::Infeasible
        ));
    }
}
