//! Machine-checkable rank certificates: an explicit presentation
//! target-tilde = sum of product pairs + sum of multiplier * tower-map-tilde,
//! with the degree and support side conditions of the rank definitions.

use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::multiaffine::MultiLinearMap;
use crate::poly::Poly;
use crate::tower::{Flavor, Tower};

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum CertKind {
    Schmidt,
    Partition,
    Relative,
    RelativePartition,
}

/// A degree-bounded multiplier against one tower map, addressed by
/// (layer, index) into the tower (0-based).
#[derive(Clone, PartialEq, Debug)]
pub struct PolyMultiplier {
    pub layer: usize,
    pub index: usize,
    pub multiplier: Poly,
}

#[derive(Clone, PartialEq, Debug)]
pub struct MlMultiplier {
    pub layer: usize,
    pub index: usize,
    pub multiplier: MultiLinearMap,
}

#[derive(Clone, PartialEq, Debug)]
pub enum CertBody {
    Poly { pairs: Vec<(Poly, Poly)>, multipliers: Vec<PolyMultiplier> },
    Linear { pairs: Vec<(MultiLinearMap, MultiLinearMap)>, multipliers: Vec<MlMultiplier> },
}

#[derive(Clone, PartialEq, Debug)]
pub struct RankCertificate {
    pub kind: CertKind,
    /// Witness combination for collection queries (the certified target is
    /// the tilde of combination . collection).
    pub combination: Option<Vec<Scalar>>,
    pub claimed_rank: u64,
    pub body: CertBody,
}

/// Outcome of replaying a certificate; failure is a value, not an error.
#[derive(Clone, Debug)]
pub struct CertCheck {
    pub pass: bool,
    pub reason: Option<String>,
}

impl CertCheck {
    fn ok() -> CertCheck {
        CertCheck { pass: true, reason: None }
    }
    fn fail(reason: impl Into<String>) -> CertCheck {
        CertCheck { pass: false, reason: Some(reason.into()) }
    }
}

/// Replays a polynomial certificate against a target and optional tower:
/// expands the presentation symbolically and compares coefficients, checking
/// every degree side condition.
pub fn verify_poly_certificate(
    target: &Poly,
    tower: Option<&Tower>,
    cert: &RankCertificate,
) -> CertCheck {
    let (pairs, multipliers) = match &cert.body {
        CertBody::Poly { pairs, multipliers } => (pairs, multipliers),
        CertBody::Linear { .. } => return CertCheck::fail("multilinear body for a polynomial target"),
    };
    let tilde = target.homogeneous_part();
    let d = target.degree();
    if cert.claimed_rank != pairs.len() as u64 {
        return CertCheck::fail(format!(
            "claimed rank {} but {} product pairs",
            cert.claimed_rank,
            pairs.len()
        ));
    }
    let mut sum = Poly::zero(target.field(), target.num_vars());
    for (i, (q, r)) in pairs.iter().enumerate() {
        if q.is_zero() || r.is_zero() {
            return CertCheck::fail(format!("pair {i} has a zero factor"));
        }
        if !q.is_homogeneous() || !r.is_homogeneous() {
            return CertCheck::fail(format!("pair {i} has an inhomogeneous factor"));
        }
        if q.degree() == 0 || r.degree() == 0 || q.degree() + r.degree() != d {
            return CertCheck::fail(format!(
                "pair {i} degrees {} + {} incompatible with target degree {d}",
                q.degree(),
                r.degree()
            ));
        }
        sum = match q.mul(r).and_then(|p| sum.add(&p)) {
            Ok(s) => s,
            Err(e) => return CertCheck::fail(format!("pair {i}: {e}")),
        };
    }
    for (i, m) in multipliers.iter().enumerate() {
        let Some(t) = tower else {
            return CertCheck::fail("certificate uses tower multipliers but no tower was given");
        };
        if t.flavor() != Flavor::Polynomial {
            return CertCheck::fail("polynomial multipliers against a non-polynomial tower");
        }
        let Some(layer) = t.layers().get(m.layer) else {
            return CertCheck::fail(format!("multiplier {i} addresses missing layer {}", m.layer));
        };
        let Some(map) = layer.poly_maps().get(m.index) else {
            return CertCheck::fail(format!(
                "multiplier {i} addresses missing map {} in layer {}",
                m.index, m.layer
            ));
        };
        if m.multiplier.is_zero() {
            continue;
        }
        if m.multiplier.degree() + map.degree() > d {
            return CertCheck::fail(format!(
                "multiplier {i} violates deg(R) + deg(Q) <= deg(P): {} + {} > {d}",
                m.multiplier.degree(),
                map.degree()
            ));
        }
        let map_tilde = map.homogeneous_part();
        let contrib = m
            .multiplier
            .homogeneous_part()
            .mul(&map_tilde)
            .and_then(|p| sum.add(&p));
        sum = match contrib {
            Ok(s) => s,
            Err(e) => return CertCheck::fail(format!("multiplier {i}: {e}")),
        };
    }
    if sum != tilde {
        return CertCheck::fail("presentation does not expand to the target's top component");
    }
    CertCheck::ok()
}

/// Replays a multilinear certificate: the target's multilinear part must
/// equal the sum of outer products plus multiplier contractions, with the
/// partition side conditions on supports.
pub fn verify_ml_certificate(
    target: &MultiLinearMap,
    tower: Option<&Tower>,
    cert: &RankCertificate,
) -> CertCheck {
    let (pairs, multipliers) = match &cert.body {
        CertBody::Linear { pairs, multipliers } => (pairs, multipliers),
        CertBody::Poly { .. } => return CertCheck::fail("polynomial body for a multilinear target"),
    };
    if cert.claimed_rank != pairs.len() as u64 {
        return CertCheck::fail(format!(
            "claimed rank {} but {} product pairs",
            cert.claimed_rank,
            pairs.len()
        ));
    }
    let support = target.support().clone();
    let mut sum = MultiLinearMap::zero(target.shape().clone(), support.clone());
    for (i, (q, r)) in pairs.iter().enumerate() {
        if q.is_zero() || r.is_zero() {
            return CertCheck::fail(format!("pair {i} has a zero factor"));
        }
        if q.support().is_empty() || q.support().len() >= support.len() {
            return CertCheck::fail(format!(
                "pair {i} does not split the index set properly"
            ));
        }
        if !q.support().is_subset_of(&support)
            || r.support() != &support.minus(q.support())
        {
            return CertCheck::fail(format!("pair {i} supports do not partition the index set"));
        }
        sum = match q.outer_product(r).and_then(|p| sum.add(&p)) {
            Ok(s) => s,
            Err(e) => return CertCheck::fail(format!("pair {i}: {e}")),
        };
    }
    for (i, m) in multipliers.iter().enumerate() {
        let Some(t) = tower else {
            return CertCheck::fail("certificate uses tower multipliers but no tower was given");
        };
        if t.flavor() == Flavor::Polynomial {
            return CertCheck::fail("multilinear multipliers against a polynomial tower");
        }
        let Some(layer) = t.layers().get(m.layer) else {
            return CertCheck::fail(format!("multiplier {i} addresses missing layer {}", m.layer));
        };
        let Some(map) = layer.affine_maps().get(m.index) else {
            return CertCheck::fail(format!(
                "multiplier {i} addresses missing map {} in layer {}",
                m.index, m.layer
            ));
        };
        if m.multiplier.is_zero() {
            continue;
        }
        let map_tilde = map.multilinear_part();
        if !map_tilde.support().is_subset_of(&support) {
            return CertCheck::fail(format!(
                "multiplier {i}: tower map support outside the target index set"
            ));
        }
        if m.multiplier.support() != &support.minus(map_tilde.support()) {
            return CertCheck::fail(format!("multiplier {i} has the wrong complementary support"));
        }
        sum = match map_tilde.outer_product(&m.multiplier).and_then(|p| sum.add(&p)) {
            Ok(s) => s,
            Err(e) => return CertCheck::fail(format!("multiplier {i}: {e}")),
        };
    }
    if &sum != target {
        return CertCheck::fail("presentation does not expand to the target map");
    }
    CertCheck::ok()
}

/// Verifies a certificate for a collection by first folding the stored
/// witness combination.
pub fn verify_collection_certificate(
    maps: &[Poly],
    tower: Option<&Tower>,
    cert: &RankCertificate,
) -> Result<CertCheck> {
    let Some(a) = &cert.combination else {
        return Err(Error::Invalid("collection certificate lacks a combination".into()));
    };
    if a.len() != maps.len() {
        return Err(Error::Invalid("combination length differs from collection size".into()));
    }
    let field = maps
        .first()
        .map(|m| m.field())
        .ok_or_else(|| Error::Invalid("empty collection".into()))?;
    let n = maps[0].num_vars();
    let mut target = Poly::zero(field, n);
    for (c, m) in a.iter().zip(maps) {
        target = target.add(&m.homogeneous_part().scale(*c))?;
    }
    Ok(verify_poly_certificate(&target, tower, cert))
}
