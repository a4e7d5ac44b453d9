//! Multilinear and multi-affine maps on products of vector spaces.
//!
//! A multilinear map on V^I is stored as a sparse tensor with one basis index
//! per factor in I. A multi-affine map is its unique decomposition into
//! multilinear components P_J, one per subset J of I.

use crate::error::{Error, Result};
use crate::field::{Point, Scalar, SpaceShape};
use crate::poly::Poly;
use std::collections::{BTreeMap, HashMap};

/// A sorted subset of the factor indices of a shape (0-based).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(mut members: Vec<usize>) -> IndexSet {
        members.sort_unstable();
        members.dedup();
        IndexSet(members)
    }

    pub fn empty() -> IndexSet {
        IndexSet(Vec::new())
    }

    /// {0, 1, ..., k-1}.
    pub fn full(k: usize) -> IndexSet {
        IndexSet((0..k).collect())
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Position of factor `i` within this set, if present.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.0.binary_search(&i).ok()
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        IndexSet::new(v)
    }

    pub fn minus(&self, other: &IndexSet) -> IndexSet {
        IndexSet(self.0.iter().copied().filter(|i| !other.contains(*i)).collect())
    }

    pub fn intersect(&self, other: &IndexSet) -> IndexSet {
        IndexSet(self.0.iter().copied().filter(|i| other.contains(*i)).collect())
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|i| !other.contains(*i))
    }

    /// Bitmask with bit `i` set per member (factors must fit in 64 bits).
    pub fn bitmask(&self) -> u64 {
        self.0.iter().fold(0u64, |m, &i| m | (1u64 << i))
    }

    pub fn from_bitmask(mask: u64) -> IndexSet {
        IndexSet((0..64).filter(|i| mask >> i & 1 == 1).collect())
    }

    /// All subsets, in (size, lexicographic) order; includes the empty set.
    pub fn subsets(&self) -> Vec<IndexSet> {
        let k = self.0.len();
        let mut out: Vec<IndexSet> = (0u64..(1 << k))
            .map(|mask| {
                IndexSet(
                    (0..k).filter(|j| mask >> j & 1 == 1).map(|j| self.0[j]).collect(),
                )
            })
            .collect();
        out.sort_by_key(|s| (s.len(), s.0.clone()));
        out
    }
}

/// Cartesian product of per-factor index ranges, lexicographic.
fn index_space(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &d in dims {
        let mut next = Vec::with_capacity(out.len() * d);
        for prefix in &out {
            for i in 0..d {
                let mut v = prefix.clone();
                v.push(i);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// A multilinear map V^I -> F stored as a sparse tensor.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MultiLinearMap {
    shape: SpaceShape,
    support: IndexSet,
    entries: BTreeMap<Vec<usize>, Scalar>,
}

impl MultiLinearMap {
    pub fn zero(shape: SpaceShape, support: IndexSet) -> MultiLinearMap {
        MultiLinearMap { shape, support, entries: BTreeMap::new() }
    }

    /// The constant map with empty support.
    pub fn constant(shape: SpaceShape, c: Scalar) -> MultiLinearMap {
        let mut entries = BTreeMap::new();
        if !c.is_zero() {
            entries.insert(Vec::new(), c);
        }
        MultiLinearMap { shape, support: IndexSet::empty(), entries }
    }

    pub fn from_entries(
        shape: SpaceShape,
        support: IndexSet,
        raw: Vec<(Vec<usize>, Scalar)>,
    ) -> Result<MultiLinearMap> {
        if support.members().iter().any(|&i| i >= shape.factors()) {
            return Err(Error::ShapeMismatch(format!(
                "support {:?} outside a {}-factor shape",
                support.members(),
                shape.factors()
            )));
        }
        let field = shape.field();
        let mut entries: BTreeMap<Vec<usize>, Scalar> = BTreeMap::new();
        for (idx, c) in raw {
            if idx.len() != support.len() {
                return Err(Error::ShapeMismatch(format!(
                    "index of arity {} for support of size {}",
                    idx.len(),
                    support.len()
                )));
            }
            for (pos, &f) in support.members().iter().enumerate() {
                if idx[pos] >= shape.dims()[f] {
                    return Err(Error::ShapeMismatch(format!(
                        "index {} out of range for factor {} of dimension {}",
                        idx[pos],
                        f,
                        shape.dims()[f]
                    )));
                }
            }
            let slot = entries.entry(idx).or_insert(Scalar::ZERO);
            *slot = field.add(*slot, c);
        }
        entries.retain(|_, c| !c.is_zero());
        Ok(MultiLinearMap { shape, support, entries })
    }

    pub fn shape(&self) -> &SpaceShape {
        &self.shape
    }

    pub fn support(&self) -> &IndexSet {
        &self.support
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Arity |I|, the degree of the map.
    pub fn degree(&self) -> usize {
        self.support.len()
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, Scalar)> + '_ {
        self.entries.iter().map(|(k, v)| (k.clone(), *v))
    }

    /// Dimension of the full tensor space on this support.
    pub fn tensor_dim(&self) -> usize {
        self.support.members().iter().map(|&f| self.shape.dims()[f]).product()
    }

    /// The full index space of the tensor, lexicographic.
    pub fn full_index_space(shape: &SpaceShape, support: &IndexSet) -> Vec<Vec<usize>> {
        let dims: Vec<usize> = support.members().iter().map(|&f| shape.dims()[f]).collect();
        index_space(&dims)
    }

    pub fn coeff(&self, idx: &[usize]) -> Scalar {
        self.entries.get(idx).copied().unwrap_or(Scalar::ZERO)
    }

    pub fn evaluate(&self, x: &Point) -> Result<Scalar> {
        if !x.matches(&self.shape) {
            return Err(Error::ShapeMismatch("point does not match shape".into()));
        }
        let f = self.shape.field();
        let mut acc = Scalar::ZERO;
        for (idx, c) in &self.entries {
            let mut v = *c;
            for (pos, &fac) in self.support.members().iter().enumerate() {
                v = f.mul(v, x.factor(fac)[idx[pos]]);
            }
            acc = f.add(acc, v);
        }
        Ok(acc)
    }

    /// Evaluates on coordinate blocks given per support factor, in support
    /// order.
    pub fn evaluate_blocks(&self, blocks: &[Vec<Scalar>]) -> Result<Scalar> {
        if blocks.len() != self.support.len() {
            return Err(Error::ShapeMismatch("wrong number of blocks".into()));
        }
        let f = self.shape.field();
        let mut acc = Scalar::ZERO;
        for (idx, c) in &self.entries {
            let mut v = *c;
            for (pos, block) in blocks.iter().enumerate() {
                v = f.mul(v, block[idx[pos]]);
            }
            acc = f.add(acc, v);
        }
        Ok(acc)
    }

    fn same_layout(&self, other: &MultiLinearMap) -> Result<()> {
        if self.shape != other.shape || self.support != other.support {
            return Err(Error::ShapeMismatch("multilinear maps on different supports".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &MultiLinearMap) -> Result<MultiLinearMap> {
        self.same_layout(other)?;
        let f = self.shape.field();
        let mut entries = self.entries.clone();
        for (idx, c) in &other.entries {
            let slot = entries.entry(idx.clone()).or_insert(Scalar::ZERO);
            *slot = f.add(*slot, *c);
        }
        entries.retain(|_, c| !c.is_zero());
        Ok(MultiLinearMap { shape: self.shape.clone(), support: self.support.clone(), entries })
    }

    pub fn sub(&self, other: &MultiLinearMap) -> Result<MultiLinearMap> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> MultiLinearMap {
        let f = self.shape.field();
        let entries = self.entries.iter().map(|(k, v)| (k.clone(), f.neg(*v))).collect();
        MultiLinearMap { shape: self.shape.clone(), support: self.support.clone(), entries }
    }

    pub fn scale(&self, c: Scalar) -> MultiLinearMap {
        if c.is_zero() {
            return MultiLinearMap::zero(self.shape.clone(), self.support.clone());
        }
        let f = self.shape.field();
        let entries = self.entries.iter().map(|(k, v)| (k.clone(), f.mul(*v, c))).collect();
        MultiLinearMap { shape: self.shape.clone(), support: self.support.clone(), entries }
    }

    /// Outer product with a map on a disjoint support.
    pub fn outer_product(&self, other: &MultiLinearMap) -> Result<MultiLinearMap> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch("outer product across shapes".into()));
        }
        if !self.support.is_disjoint(&other.support) {
            return Err(Error::ShapeMismatch("outer product requires disjoint supports".into()));
        }
        let f = self.shape.field();
        let support = self.support.union(&other.support);
        let mut raw = Vec::with_capacity(self.entries.len() * other.entries.len());
        for (ia, ca) in &self.entries {
            for (ib, cb) in &other.entries {
                // Interleave indices into the union support order.
                let mut idx = Vec::with_capacity(support.len());
                let mut pa = 0;
                let mut pb = 0;
                for &fac in support.members() {
                    if self.support.contains(fac) {
                        idx.push(ia[pa]);
                        pa += 1;
                    } else {
                        idx.push(ib[pb]);
                        pb += 1;
                    }
                }
                raw.push((idx, f.mul(*ca, *cb)));
            }
        }
        MultiLinearMap::from_entries(self.shape.clone(), support, raw)
    }

    /// Partial evaluation at coordinates for the given factors; the result
    /// lives on `support minus assigned`.
    pub fn substitute(&self, assign: &[(usize, Vec<Scalar>)]) -> Result<MultiLinearMap> {
        for (fac, coords) in assign {
            if *fac >= self.shape.factors() || coords.len() != self.shape.dims()[*fac] {
                return Err(Error::ShapeMismatch(format!("bad assignment for factor {fac}")));
            }
        }
        let assigned = IndexSet::new(assign.iter().map(|(f, _)| *f).collect());
        let f = self.shape.field();
        let new_support = self.support.minus(&assigned);
        let mut raw: Vec<(Vec<usize>, Scalar)> = Vec::new();
        for (idx, c) in &self.entries {
            let mut coeff = *c;
            let mut new_idx = Vec::with_capacity(new_support.len());
            for (pos, &fac) in self.support.members().iter().enumerate() {
                if let Some((_, coords)) = assign.iter().find(|(g, _)| *g == fac) {
                    coeff = f.mul(coeff, coords[idx[pos]]);
                } else {
                    new_idx.push(idx[pos]);
                }
            }
            if !coeff.is_zero() {
                raw.push((new_idx, coeff));
            }
        }
        MultiLinearMap::from_entries(self.shape.clone(), new_support, raw)
    }

    /// Writes P(x) = A(x without pivot) . x_pivot: one multilinear map per
    /// basis coordinate of the pivot factor.
    pub fn contract_last(&self, pivot: usize) -> Result<Vec<MultiLinearMap>> {
        let pos = self.support.position(pivot).ok_or_else(|| {
            Error::ShapeMismatch(format!("pivot factor {pivot} not in support"))
        })?;
        let dim = self.shape.dims()[pivot];
        let rest = self.support.minus(&IndexSet::new(vec![pivot]));
        let mut raws: Vec<Vec<(Vec<usize>, Scalar)>> = vec![Vec::new(); dim];
        for (idx, c) in &self.entries {
            let j = idx[pos];
            let mut rest_idx = idx.clone();
            rest_idx.remove(pos);
            raws[j].push((rest_idx, *c));
        }
        raws.into_iter()
            .map(|raw| MultiLinearMap::from_entries(self.shape.clone(), rest.clone(), raw))
            .collect()
    }

    /// True when all support factors have equal dimension and the tensor is
    /// invariant under permuting its arguments.
    pub fn is_symmetric(&self) -> bool {
        let dims: Vec<usize> =
            self.support.members().iter().map(|&f| self.shape.dims()[f]).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return false;
        }
        for (idx, c) in &self.entries {
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            for perm in permutations_of(&sorted) {
                if self.coeff(&perm) != *c {
                    return false;
                }
            }
        }
        true
    }

    /// Pre-composition with the diagonal: the polynomial x -> P(x, ..., x).
    /// All support factors must have the same dimension.
    pub fn diagonal_poly(&self) -> Result<Poly> {
        let dims: Vec<usize> =
            self.support.members().iter().map(|&f| self.shape.dims()[f]).collect();
        let n = dims.first().copied().unwrap_or(1);
        if dims.iter().any(|&d| d != n) {
            return Err(Error::ShapeMismatch(
                "diagonal restriction needs equal factor dimensions".into(),
            ));
        }
        let raw: Vec<(Vec<u32>, Scalar)> = self
            .entries
            .iter()
            .map(|(idx, c)| {
                let mut exps = vec![0u32; n];
                for &v in idx {
                    exps[v] += 1;
                }
                (exps, *c)
            })
            .collect();
        Poly::from_terms(self.shape.field(), n, raw)
    }

    /// Transplants the map onto a new shape via an old-factor to new-factor
    /// mapping (injective on the support).
    pub fn remap_factors(
        &self,
        new_shape: SpaceShape,
        mapping: &HashMap<usize, usize>,
    ) -> Result<MultiLinearMap> {
        let mut pairs: Vec<(usize, usize)> = self
            .support
            .members()
            .iter()
            .enumerate()
            .map(|(pos, &f)| {
                mapping
                    .get(&f)
                    .copied()
                    .map(|nf| (nf, pos))
                    .ok_or_else(|| Error::ShapeMismatch(format!("factor {f} unmapped")))
            })
            .collect::<Result<_>>()?;
        pairs.sort_unstable();
        let new_support = IndexSet::new(pairs.iter().map(|(nf, _)| *nf).collect());
        if new_support.len() != pairs.len() {
            return Err(Error::ShapeMismatch("factor mapping is not injective".into()));
        }
        let raw: Vec<(Vec<usize>, Scalar)> = self
            .entries
            .iter()
            .map(|(idx, c)| (pairs.iter().map(|&(_, pos)| idx[pos]).collect(), *c))
            .collect();
        MultiLinearMap::from_entries(new_shape, new_support, raw)
    }
}

fn permutations_of(sorted: &[usize]) -> Vec<Vec<usize>> {
    // Distinct permutations via repeated next_permutation on a sorted start.
    let mut cur = sorted.to_vec();
    let mut out = Vec::new();
    loop {
        out.push(cur.clone());
        let n = cur.len();
        if n < 2 {
            break;
        }
        let mut i = n - 1;
        while i > 0 && cur[i - 1] >= cur[i] {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        let mut j = n - 1;
        while cur[j] <= cur[i - 1] {
            j -= 1;
        }
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// A multi-affine map stored by its unique multilinear component
/// decomposition P(x_I) = sum over J of P_J(x_J).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MultiAffineMap {
    shape: SpaceShape,
    support: IndexSet,
    components: BTreeMap<Vec<usize>, MultiLinearMap>,
}

impl MultiAffineMap {
    pub fn zero(shape: SpaceShape, support: IndexSet) -> MultiAffineMap {
        MultiAffineMap { shape, support, components: BTreeMap::new() }
    }

    pub fn from_components(
        shape: SpaceShape,
        support: IndexSet,
        comps: Vec<MultiLinearMap>,
    ) -> Result<MultiAffineMap> {
        let mut components: BTreeMap<Vec<usize>, MultiLinearMap> = BTreeMap::new();
        for c in comps {
            if c.shape() != &shape {
                return Err(Error::ShapeMismatch("component on a different shape".into()));
            }
            if !c.support().is_subset_of(&support) {
                return Err(Error::ShapeMismatch(format!(
                    "component support {:?} not inside {:?}",
                    c.support().members(),
                    support.members()
                )));
            }
            let key = c.support().members().to_vec();
            match components.remove(&key) {
                Some(prev) => {
                    let merged = prev.add(&c)?;
                    components.insert(key, merged);
                }
                None => {
                    components.insert(key, c);
                }
            }
        }
        components.retain(|_, c| !c.is_zero());
        Ok(MultiAffineMap { shape, support, components })
    }

    pub fn from_multilinear(m: MultiLinearMap) -> MultiAffineMap {
        let shape = m.shape().clone();
        let support = m.support().clone();
        MultiAffineMap::from_components(shape, support, vec![m]).expect("consistent by construction")
    }

    pub fn constant(shape: SpaceShape, support: IndexSet, c: Scalar) -> MultiAffineMap {
        let k = MultiLinearMap::constant(shape.clone(), c);
        MultiAffineMap::from_components(shape, support, vec![k]).expect("constant component fits")
    }

    pub fn shape(&self) -> &SpaceShape {
        &self.shape
    }

    pub fn support(&self) -> &IndexSet {
        &self.support
    }

    pub fn is_zero(&self) -> bool {
        self.components.is_empty()
    }

    /// Nominal degree |I| of the support.
    pub fn degree(&self) -> usize {
        self.support.len()
    }

    /// Largest arity among nonzero components.
    pub fn effective_degree(&self) -> usize {
        self.components.keys().map(|k| k.len()).max().unwrap_or(0)
    }

    pub fn components(&self) -> impl Iterator<Item = &MultiLinearMap> + '_ {
        self.components.values()
    }

    pub fn component(&self, support: &IndexSet) -> Option<&MultiLinearMap> {
        self.components.get(support.members())
    }

    /// The top multilinear component P_I (zero map when absent). The map is
    /// "full" when this is nonzero.
    pub fn multilinear_part(&self) -> MultiLinearMap {
        self.components
            .get(self.support.members())
            .cloned()
            .unwrap_or_else(|| MultiLinearMap::zero(self.shape.clone(), self.support.clone()))
    }

    pub fn is_full(&self) -> bool {
        !self.multilinear_part().is_zero()
    }

    pub fn is_multilinear(&self) -> bool {
        self.components.is_empty()
            || (self.components.len() == 1 && self.components.contains_key(self.support.members()))
    }

    pub fn evaluate(&self, x: &Point) -> Result<Scalar> {
        if !x.matches(&self.shape) {
            return Err(Error::ShapeMismatch("point does not match shape".into()));
        }
        let f = self.shape.field();
        let mut acc = Scalar::ZERO;
        for c in self.components.values() {
            acc = f.add(acc, c.evaluate(x)?);
        }
        Ok(acc)
    }

    pub fn add(&self, other: &MultiAffineMap) -> Result<MultiAffineMap> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch("adding maps on different shapes".into()));
        }
        let support = self.support.union(&other.support);
        let comps: Vec<MultiLinearMap> =
            self.components.values().chain(other.components.values()).cloned().collect();
        MultiAffineMap::from_components(self.shape.clone(), support, comps)
    }

    pub fn neg(&self) -> MultiAffineMap {
        let comps = self.components.values().map(|c| c.neg()).collect();
        MultiAffineMap::from_components(self.shape.clone(), self.support.clone(), comps)
            .expect("negation preserves structure")
    }

    pub fn sub(&self, other: &MultiAffineMap) -> Result<MultiAffineMap> {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: Scalar) -> MultiAffineMap {
        let comps = self.components.values().map(|m| m.scale(c)).collect();
        MultiAffineMap::from_components(self.shape.clone(), self.support.clone(), comps)
            .expect("scaling preserves structure")
    }

    /// Adds a constant (shifts the empty-support component).
    pub fn add_constant(&self, c: Scalar) -> MultiAffineMap {
        let k = MultiLinearMap::constant(self.shape.clone(), c);
        let mut comps: Vec<MultiLinearMap> = self.components.values().cloned().collect();
        comps.push(k);
        MultiAffineMap::from_components(self.shape.clone(), self.support.clone(), comps)
            .expect("constant component fits")
    }

    /// Partial evaluation on the assigned factors; support shrinks to
    /// I minus assigned.
    pub fn substitute(&self, assign: &[(usize, Vec<Scalar>)]) -> Result<MultiAffineMap> {
        let assigned = IndexSet::new(assign.iter().map(|(f, _)| *f).collect());
        let support = self.support.minus(&assigned);
        let comps: Vec<MultiLinearMap> = self
            .components
            .values()
            .map(|c| c.substitute(assign))
            .collect::<Result<_>>()?;
        MultiAffineMap::from_components(self.shape.clone(), support, comps)
    }

    /// Diagonal restriction to a polynomial (all factor dimensions equal).
    pub fn diagonal_poly(&self) -> Result<Poly> {
        let n = self.shape.dims().first().copied().unwrap_or(1);
        if self.shape.dims().iter().any(|&d| d != n) {
            return Err(Error::ShapeMismatch(
                "diagonal restriction needs equal factor dimensions".into(),
            ));
        }
        let mut out = Poly::zero(self.shape.field(), n);
        for c in self.components.values() {
            out = out.add(&c.diagonal_poly()?)?;
        }
        Ok(out)
    }

    pub fn remap_factors(
        &self,
        new_shape: SpaceShape,
        mapping: &HashMap<usize, usize>,
    ) -> Result<MultiAffineMap> {
        let support = IndexSet::new(
            self.support
                .members()
                .iter()
                .map(|f| {
                    mapping
                        .get(f)
                        .copied()
                        .ok_or_else(|| Error::ShapeMismatch(format!("factor {f} unmapped")))
                })
                .collect::<Result<_>>()?,
        );
        let comps: Vec<MultiLinearMap> = self
            .components
            .values()
            .map(|c| c.remap_factors(new_shape.clone(), mapping))
            .collect::<Result<_>>()?;
        MultiAffineMap::from_components(new_shape, support, comps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{enumerate, CounterRng, PrimeField, DEFAULT_ENUM_LIMIT};

    fn s(v: u32) -> Scalar {
        Scalar(v)
    }

    fn bilinear_x1y1(p: u32) -> MultiLinearMap {
        let f = PrimeField::new(p).unwrap();
        let shape = SpaceShape::new(f, vec![1, 1]).unwrap();
        MultiLinearMap::from_entries(shape, IndexSet::full(2), vec![(vec![0, 0], s(1))]).unwrap()
    }

    #[test]
    fn evaluate_bilinear() {
        let m = bilinear_x1y1(3);
        let x = Point { coords: vec![vec![s(2)], vec![s(2)]] };
        assert_eq!(m.evaluate(&x).unwrap(), s(1)); // 4 mod 3
    }

    #[test]
    fn constant_component_at_zero() {
        let f = PrimeField::new(5).unwrap();
        let shape = SpaceShape::new(f, vec![2, 2]).unwrap();
        let top = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::full(2),
            vec![(vec![0, 1], s(3))],
        )
        .unwrap();
        let c = MultiLinearMap::constant(shape.clone(), s(4));
        let ma =
            MultiAffineMap::from_components(shape.clone(), IndexSet::full(2), vec![top, c]).unwrap();
        assert!(ma.is_full());
        let zero = Point::zero(&shape);
        assert_eq!(ma.evaluate(&zero).unwrap(), s(4));
    }

    #[test]
    fn evaluate_matches_diagonal_poly() {
        // Exhaustive: p=5, dims <= 2 per factor, k <= 3.
        let f = PrimeField::new(5).unwrap();
        let mut rng = CounterRng::new(17);
        for k in 1..=3usize {
            for n in 1..=2usize {
                let shape = SpaceShape::new(f, vec![n; k]).unwrap();
                let full = IndexSet::full(k);
                // Random multi-affine map: random entries per component.
                let comps: Vec<MultiLinearMap> = full
                    .subsets()
                    .iter()
                    .map(|sub| {
                        let idxs = MultiLinearMap::full_index_space(&shape, sub);
                        let raw: Vec<(Vec<usize>, Scalar)> =
                            idxs.into_iter().map(|i| (i, rng.scalar(f))).collect();
                        MultiLinearMap::from_entries(shape.clone(), sub.clone(), raw).unwrap()
                    })
                    .collect();
                let ma = MultiAffineMap::from_components(shape.clone(), full, comps).unwrap();
                let poly = ma.diagonal_poly().unwrap();
                for x in 0..5u64.pow(n as u32) {
                    let mut coords = Vec::with_capacity(n);
                    let mut r = x;
                    for _ in 0..n {
                        coords.push(s((r % 5) as u32));
                        r /= 5;
                    }
                    let pt = Point { coords: vec![coords.clone(); k] };
                    assert_eq!(ma.evaluate(&pt).unwrap(), poly.evaluate(&coords).unwrap());
                }
            }
        }
    }

    #[test]
    fn multilinear_part_examples() {
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::new(f, vec![1, 1]).unwrap();
        let top = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::full(2),
            vec![(vec![0, 0], s(1))],
        )
        .unwrap();
        // Multilinear input: itself.
        let ma = MultiAffineMap::from_multilinear(top.clone());
        assert_eq!(ma.multilinear_part(), top);
        // Only lower components: zero part.
        let lower = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::new(vec![0]),
            vec![(vec![0], s(1))],
        )
        .unwrap();
        let ma2 =
            MultiAffineMap::from_components(shape.clone(), IndexSet::full(2), vec![lower.clone()])
                .unwrap();
        assert!(ma2.multilinear_part().is_zero());
        assert!(!ma2.is_full());
        // x1y1 + x1 + 1: part is x1y1.
        let one = MultiLinearMap::constant(shape.clone(), s(1));
        let ma3 = MultiAffineMap::from_components(
            shape,
            IndexSet::full(2),
            vec![top.clone(), lower, one],
        )
        .unwrap();
        assert_eq!(ma3.multilinear_part(), top);
    }

    #[test]
    fn substitute_examples() {
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::new(f, vec![1, 1, 1]).unwrap();
        let tri = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::full(3),
            vec![(vec![0, 0, 0], s(1))],
        )
        .unwrap();
        let ma = MultiAffineMap::from_multilinear(tri);
        // Substitute z = (1): bilinear x1 y1.
        let sub = ma.substitute(&[(2, vec![s(1)])]).unwrap();
        assert_eq!(sub.support(), &IndexSet::new(vec![0, 1]));
        let pt = Point { coords: vec![vec![s(2)], vec![s(2)], vec![s(0)]] };
        assert_eq!(sub.evaluate(&pt).unwrap(), s(1));
        // Substitute everything: a constant equal to full evaluation.
        let all = ma
            .substitute(&[(0, vec![s(2)]), (1, vec![s(2)]), (2, vec![s(2)])])
            .unwrap();
        assert!(all.support().is_empty());
        let full_pt = Point { coords: vec![vec![s(2)], vec![s(2)], vec![s(2)]] };
        assert_eq!(all.evaluate(&full_pt).unwrap(), ma.evaluate(&full_pt).unwrap());
    }

    #[test]
    fn substitution_then_evaluation_matches_direct() {
        let f = PrimeField::new(3).unwrap();
        let mut rng = CounterRng::new(4242);
        let shape = SpaceShape::new(f, vec![2, 1, 2]).unwrap();
        let full = IndexSet::full(3);
        for _ in 0..10 {
            let comps: Vec<MultiLinearMap> = full
                .subsets()
                .iter()
                .map(|sub| {
                    let idxs = MultiLinearMap::full_index_space(&shape, sub);
                    let raw: Vec<(Vec<usize>, Scalar)> =
                        idxs.into_iter().map(|i| (i, rng.scalar(f))).collect();
                    MultiLinearMap::from_entries(shape.clone(), sub.clone(), raw).unwrap()
                })
                .collect();
            let ma = MultiAffineMap::from_components(shape.clone(), full.clone(), comps).unwrap();
            for pt in enumerate(&shape, DEFAULT_ENUM_LIMIT).unwrap() {
                let sub = ma
                    .substitute(&[(1, pt.factor(1).to_vec())])
                    .unwrap();
                assert_eq!(sub.evaluate(&pt).unwrap(), ma.evaluate(&pt).unwrap());
            }
        }
    }

    #[test]
    fn contract_last_examples() {
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::new(f, vec![2, 2]).unwrap();
        // x1y1 + x2y2, pivot on factor 1 (the y's): A(x) = (x1, x2).
        let m = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::full(2),
            vec![(vec![0, 0], s(1)), (vec![1, 1], s(1))],
        )
        .unwrap();
        let a = m.contract_last(1).unwrap();
        assert_eq!(a.len(), 2);
        let e0 = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::new(vec![0]),
            vec![(vec![0], s(1))],
        )
        .unwrap();
        let e1 = MultiLinearMap::from_entries(
            shape.clone(),
            IndexSet::new(vec![0]),
            vec![(vec![1], s(1))],
        )
        .unwrap();
        assert_eq!(a[0], e0);
        assert_eq!(a[1], e1);
        // Zero map contracts to zero vector map.
        let z = MultiLinearMap::zero(shape.clone(), IndexSet::full(2));
        assert!(z.contract_last(0).unwrap().iter().all(|c| c.is_zero()));
    }

    #[test]
    fn contract_reconstruction_random_trilinear() {
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::new(f, vec![2, 2, 2]).unwrap();
        let mut rng = CounterRng::new(31337);
        for _ in 0..10 {
            let idxs = MultiLinearMap::full_index_space(&shape, &IndexSet::full(3));
            let raw: Vec<(Vec<usize>, Scalar)> =
                idxs.into_iter().map(|i| (i, rng.scalar(f))).collect();
            let m = MultiLinearMap::from_entries(shape.clone(), IndexSet::full(3), raw).unwrap();
            for pivot in 0..3usize {
                let a = m.contract_last(pivot).unwrap();
                for pt in enumerate(&shape, DEFAULT_ENUM_LIMIT).unwrap() {
                    let mut dot = Scalar::ZERO;
                    for (j, aj) in a.iter().enumerate() {
                        dot = f.add(dot, f.mul(aj.evaluate(&pt).unwrap(), pt.factor(pivot)[j]));
                    }
                    assert_eq!(dot, m.evaluate(&pt).unwrap());
                }
            }
        }
    }

    #[test]
    fn component_decomposition_roundtrip() {
        let f = PrimeField::new(3).unwrap();
        let shape = SpaceShape::new(f, vec![2, 2]).unwrap();
        let mut rng = CounterRng::new(808);
        let full = IndexSet::full(2);
        let comps: Vec<MultiLinearMap> = full
            .subsets()
            .iter()
            .map(|sub| {
                let idxs = MultiLinearMap::full_index_space(&shape, sub);
                let raw: Vec<(Vec<usize>, Scalar)> =
                    idxs.into_iter().map(|i| (i, rng.scalar(f))).collect();
                MultiLinearMap::from_entries(shape.clone(), sub.clone(), raw).unwrap()
            })
            .collect();
        let ma = MultiAffineMap::from_components(shape.clone(), full.clone(), comps).unwrap();
        // Rebuild from the very same components; the map must be identical.
        let rebuilt = MultiAffineMap::from_components(
            shape,
            full,
            ma.components().cloned().collect(),
        )
        .unwrap();
        assert_eq!(ma, rebuilt);
    }

    #[test]
    fn outer_product_evaluates_as_product() {
        let f = PrimeField::new(5).unwrap();
        let shape = SpaceShape::new(f, vec![2, 2, 2]).unwrap();
        let mut rng = CounterRng::new(606);
        let a_sup = IndexSet::new(vec![0, 2]);
        let b_sup = IndexSet::new(vec![1]);
        let a = MultiLinearMap::from_entries(
            shape.clone(),
            a_sup.clone(),
            MultiLinearMap::full_index_space(&shape, &a_sup)
                .into_iter()
                .map(|i| (i, rng.scalar(f)))
                .collect(),
        )
        .unwrap();
        let b = MultiLinearMap::from_entries(
            shape.clone(),
            b_sup.clone(),
            MultiLinearMap::full_index_space(&shape, &b_sup)
                .into_iter()
                .map(|i| (i, rng.scalar(f)))
                .collect(),
        )
        .unwrap();
        let prod = a.outer_product(&b).unwrap();
        for pt in enumerate(&shape, 100_000).unwrap() {
            assert_eq!(
                prod.evaluate(&pt).unwrap(),
                f.mul(a.evaluate(&pt).unwrap(), b.evaluate(&pt).unwrap())
            );
        }
    }
}
