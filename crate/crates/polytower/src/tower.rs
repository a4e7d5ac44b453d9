//! Towers: ordered layers of maps of a common degree, in polynomial,
//! multi-affine, or multilinear flavor, together with the derived-tower
//! constructions (truncation, restriction, substitution, coordinate
//! multiplication, parallelepiped, polarization, diagonal, derivative) and
//! the regularity predicate.

use crate::error::{Error, Result};
use crate::field::{Scalar, SpaceShape};
use crate::multiaffine::{IndexSet, MultiAffineMap};
use crate::poly::Poly;
use crate::rank::{self, BudgetCounter};
use std::collections::HashMap;

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Flavor {
    Polynomial,
    MultiAffine,
    MultiLinear,
}

#[derive(Clone, PartialEq, Debug)]
pub enum LayerMaps {
    Poly(Vec<Poly>),
    Affine(Vec<MultiAffineMap>),
}

/// One layer: maps sharing a degree. Zero maps are dropped on construction;
/// `original_size` remembers how many maps the layer was built from.
#[derive(Clone, PartialEq, Debug)]
pub struct Layer {
    pub degree: u32,
    maps: LayerMaps,
    pub original_size: usize,
}

impl Layer {
    pub fn size(&self) -> usize {
        match &self.maps {
            LayerMaps::Poly(v) => v.len(),
            LayerMaps::Affine(v) => v.len(),
        }
    }

    pub fn poly_maps(&self) -> &[Poly] {
        match &self.maps {
            LayerMaps::Poly(v) => v,
            LayerMaps::Affine(_) => &[],
        }
    }

    pub fn affine_maps(&self) -> &[MultiAffineMap] {
        match &self.maps {
            LayerMaps::Affine(v) => v,
            LayerMaps::Poly(_) => &[],
        }
    }

    /// Common support when every map in the layer shares one.
    pub fn common_support(&self) -> Option<IndexSet> {
        match &self.maps {
            LayerMaps::Poly(_) => None,
            LayerMaps::Affine(v) => {
                let first = v.first()?.support().clone();
                if v.iter().all(|m| m.support() == &first) {
                    Some(first)
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Tower {
    shape: SpaceShape,
    flavor: Flavor,
    layers: Vec<Layer>,
}

impl Tower {
    pub fn empty(shape: SpaceShape, flavor: Flavor) -> Tower {
        Tower { shape, flavor, layers: Vec::new() }
    }

    /// Polynomial tower on F_p^n from (degree, maps) layers, bottom first.
    pub fn polynomial(shape: SpaceShape, layers: Vec<(u32, Vec<Poly>)>) -> Result<Tower> {
        if shape.factors() != 1 {
            return Err(Error::ShapeMismatch("polynomial towers live on a single factor".into()));
        }
        let n = shape.dims()[0];
        let mut out = Vec::with_capacity(layers.len());
        for (degree, maps) in layers {
            let original_size = maps.len();
            let mut kept = Vec::with_capacity(maps.len());
            for m in maps {
                if m.field() != shape.field() || m.num_vars() != n {
                    return Err(Error::ShapeMismatch("polynomial does not match tower space".into()));
                }
                if m.is_zero() {
                    continue;
                }
                if m.degree() != degree {
                    return Err(Error::ShapeMismatch(format!(
                        "map of degree {} in a layer of degree {}",
                        m.degree(),
                        degree
                    )));
                }
                kept.push(m);
            }
            out.push(Layer { degree, maps: LayerMaps::Poly(kept), original_size });
        }
        Ok(Tower { shape, flavor: Flavor::Polynomial, layers: out })
    }

    /// Multi-affine or multilinear tower from (maps) layers; each layer's
    /// maps must share a support.
    pub fn affine(shape: SpaceShape, flavor: Flavor, layers: Vec<Vec<MultiAffineMap>>) -> Result<Tower> {
        if flavor == Flavor::Polynomial {
            return Err(Error::FlavorMismatch("use Tower::polynomial for that flavor".into()));
        }
        let mut out = Vec::with_capacity(layers.len());
        for maps in layers {
            let original_size = maps.len();
            let mut kept: Vec<MultiAffineMap> = Vec::with_capacity(maps.len());
            for m in maps {
                if m.shape() != &shape {
                    return Err(Error::ShapeMismatch("map does not match tower shape".into()));
                }
                if flavor == Flavor::MultiLinear && !m.is_multilinear() {
                    return Err(Error::FlavorMismatch(
                        "non-multilinear map in a multilinear tower".into(),
                    ));
                }
                if m.is_zero() {
                    continue;
                }
                kept.push(m);
            }
            if let Some(first) = kept.first() {
                let sup = first.support().clone();
                if kept.iter().any(|m| m.support() != &sup) {
                    return Err(Error::ShapeMismatch("layer maps on mixed supports".into()));
                }
            }
            let degree = kept.first().map(|m| m.degree() as u32).unwrap_or(0);
            out.push(Layer { degree, maps: LayerMaps::Affine(kept), original_size });
        }
        Ok(Tower { shape, flavor, layers: out })
    }

    pub fn shape(&self) -> &SpaceShape {
        &self.shape
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn height(&self) -> usize {
        self.layers.len()
    }

    /// Total number of maps across layers (current sizes).
    pub fn dimension(&self) -> usize {
        self.layers.iter().map(|l| l.size()).sum()
    }

    pub fn degree(&self) -> u32 {
        self.layers.iter().map(|l| l.degree).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.dimension() == 0
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.size()).collect()
    }

    pub fn all_poly_maps(&self) -> Vec<&Poly> {
        self.layers.iter().flat_map(|l| l.poly_maps().iter()).collect()
    }

    pub fn all_affine_maps(&self) -> Vec<&MultiAffineMap> {
        self.layers.iter().flat_map(|l| l.affine_maps().iter()).collect()
    }

    /// Whether all maps vanish at the point (flat coordinates for the
    /// polynomial flavor come from the single factor).
    pub fn vanishes_at_flat(&self, flat: &[Scalar]) -> Result<bool> {
        match self.flavor {
            Flavor::Polynomial => {
                for m in self.all_poly_maps() {
                    if !m.evaluate(flat)?.is_zero() {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            _ => {
                let pt = self.shape.point_from_flat(flat);
                for m in self.all_affine_maps() {
                    if !m.evaluate(&pt)?.is_zero() {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    /// Stacks `top`'s layers above this tower's.
    pub fn stacked(&self, top: &Tower) -> Result<Tower> {
        if self.shape != top.shape {
            return Err(Error::ShapeMismatch("stacking towers on different shapes".into()));
        }
        let flavor = match (self.flavor, top.flavor) {
            (a, b) if a == b => a,
            (Flavor::MultiAffine, Flavor::MultiLinear) | (Flavor::MultiLinear, Flavor::MultiAffine) => {
                Flavor::MultiAffine
            }
            _ => return Err(Error::FlavorMismatch("stacking incompatible flavors".into())),
        };
        let mut layers = self.layers.clone();
        layers.extend(top.layers.clone());
        Ok(Tower { shape: self.shape.clone(), flavor, layers })
    }

    /// The truncated tower with layers 1..i-1 (1-based, i in [1, h+1]).
    pub fn truncate_below(&self, i: usize) -> Result<Tower> {
        if i == 0 || i > self.height() + 1 {
            return Err(Error::IndexOutOfRange { index: i, height: self.height() });
        }
        Ok(Tower {
            shape: self.shape.clone(),
            flavor: self.flavor,
            layers: self.layers[..i - 1].to_vec(),
        })
    }

    /// Keeps exactly the layers whose support lies inside `index_set`.
    pub fn restrict_index(&self, index_set: &IndexSet) -> Result<Tower> {
        if self.flavor == Flavor::Polynomial {
            return Err(Error::FlavorMismatch("restrict_index needs a product-space tower".into()));
        }
        let layers = self
            .layers
            .iter()
            .filter(|l| {
                l.affine_maps().iter().all(|m| m.support().is_subset_of(index_set))
            })
            .cloned()
            .collect();
        Ok(Tower { shape: self.shape.clone(), flavor: self.flavor, layers })
    }

    /// The derived tower Q(y) on the remaining factors after substituting the
    /// assigned ones. Layers are kept (possibly emptied) so indices stay
    /// stable; the result lives on the reduced shape.
    pub fn derive(&self, assign: &[(usize, Vec<Scalar>)]) -> Result<Tower> {
        if self.flavor == Flavor::Polynomial {
            return Err(Error::FlavorMismatch("derive needs a product-space tower".into()));
        }
        let removed: Vec<usize> = {
            let mut v: Vec<usize> = assign.iter().map(|(f, _)| *f).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        if removed.len() == self.shape.factors() {
            return Err(Error::ShapeMismatch("cannot remove every factor".into()));
        }
        let new_shape = self.shape.without_factors(&removed)?;
        let mut mapping: HashMap<usize, usize> = HashMap::new();
        let mut next = 0usize;
        for f in 0..self.shape.factors() {
            if !removed.contains(&f) {
                mapping.insert(f, next);
                next += 1;
            }
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut kept = Vec::new();
            for m in layer.affine_maps() {
                let sub = m.substitute(assign)?;
                if sub.is_zero() {
                    continue;
                }
                kept.push(sub.remap_factors(new_shape.clone(), &mapping)?);
            }
            let degree = kept.first().map(|m| m.degree() as u32).unwrap_or(0);
            layers.push(Layer {
                degree,
                maps: LayerMaps::Affine(kept),
                original_size: layer.size(),
            });
        }
        Ok(Tower { shape: new_shape, flavor: self.flavor, layers })
    }

    fn factor_offsets(&self, multiplicity: &[usize]) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(multiplicity.len());
        let mut acc = 0usize;
        for &l in multiplicity {
            offsets.push(acc);
            acc += l;
        }
        offsets
    }

    fn multiplied_shape(&self, multiplicity: &[usize]) -> Result<SpaceShape> {
        if multiplicity.len() != self.shape.factors() || multiplicity.iter().any(|&l| l == 0) {
            return Err(Error::ShapeMismatch("multiplicity vector does not match factors".into()));
        }
        let mut dims = Vec::new();
        for (f, &l) in multiplicity.iter().enumerate() {
            for _ in 0..l {
                dims.push(self.shape.dims()[f]);
            }
        }
        SpaceShape::new(self.shape.field(), dims)
    }

    /// All choices of one copy index per support factor, lexicographic.
    fn copy_choices(support: &IndexSet, multiplicity: &[usize]) -> Vec<Vec<(usize, usize)>> {
        let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
        for &f in support.members() {
            let mut next = Vec::new();
            for prefix in &out {
                for j in 0..multiplicity[f] {
                    let mut v = prefix.clone();
                    v.push((f, j));
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }

    /// Q tensor l: each layer expands to one copy of each map per choice of
    /// copy indices over its support; the shape repeats factor t `l_t` times.
    pub fn tensor_multiply(&self, multiplicity: &[usize]) -> Result<Tower> {
        if self.flavor != Flavor::MultiLinear {
            return Err(Error::FlavorMismatch("tensor_multiply needs a multilinear tower".into()));
        }
        let new_shape = self.multiplied_shape(multiplicity)?;
        let offsets = self.factor_offsets(multiplicity);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut maps = Vec::new();
            for m in layer.affine_maps() {
                for choice in Self::copy_choices(m.support(), multiplicity) {
                    let mapping: HashMap<usize, usize> =
                        choice.iter().map(|&(f, j)| (f, offsets[f] + j)).collect();
                    maps.push(m.remap_factors(new_shape.clone(), &mapping)?);
                }
            }
            let original_size = maps.len();
            let degree = layer.degree;
            layers.push(Layer { degree, maps: LayerMaps::Affine(maps), original_size });
        }
        Ok(Tower { shape: new_shape, flavor: self.flavor, layers })
    }

    /// Q times l: the same equations as Q tensor l, but each original layer
    /// splits into one layer per copy choice (lexicographic within a layer,
    /// original layer order preserved).
    pub fn split_layers(&self, multiplicity: &[usize]) -> Result<Tower> {
        if self.flavor != Flavor::MultiLinear {
            return Err(Error::FlavorMismatch("split_layers needs a multilinear tower".into()));
        }
        let new_shape = self.multiplied_shape(multiplicity)?;
        let offsets = self.factor_offsets(multiplicity);
        let mut layers = Vec::new();
        for layer in &self.layers {
            let support = layer
                .common_support()
                .ok_or_else(|| Error::ShapeMismatch("split_layers needs uniform layer supports".into()))?;
            for choice in Self::copy_choices(&support, multiplicity) {
                let mapping: HashMap<usize, usize> =
                    choice.iter().map(|&(f, j)| (f, offsets[f] + j)).collect();
                let maps: Vec<MultiAffineMap> = layer
                    .affine_maps()
                    .iter()
                    .map(|m| m.remap_factors(new_shape.clone(), &mapping))
                    .collect::<Result<_>>()?;
                let original_size = maps.len();
                layers.push(Layer {
                    degree: layer.degree,
                    maps: LayerMaps::Affine(maps),
                    original_size,
                });
            }
            if layer.size() == 0 {
                layers.push(Layer { degree: layer.degree, maps: LayerMaps::Affine(Vec::new()), original_size: 0 });
            }
        }
        Ok(Tower { shape: new_shape, flavor: self.flavor, layers })
    }

    /// The parallelepiped tower Q_{x,l} on l copies of the space: for each
    /// map of degree d, the maps t -> Q(x + omega . t) over 0 < |omega| <= d.
    pub fn parallelepiped(&self, x: &[Scalar], l: usize) -> Result<Tower> {
        if self.flavor != Flavor::Polynomial {
            return Err(Error::FlavorMismatch("parallelepiped needs a polynomial tower".into()));
        }
        if l == 0 {
            return Err(Error::Invalid("parallelepiped needs l >= 1".into()));
        }
        let n = self.shape.dims()[0];
        if x.len() != n {
            return Err(Error::ShapeMismatch("base point has wrong length".into()));
        }
        let f = self.shape.field();
        let new_shape = SpaceShape::single(f, n * l)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut maps = Vec::new();
            for m in layer.poly_maps() {
                for omega in 1u32..(1 << l) {
                    if omega.count_ones() > layer.degree {
                        continue;
                    }
                    // Affine map F^{nl} -> F^n: x_v + sum over chosen blocks of t_{b,v}.
                    let matrix: Vec<Vec<Scalar>> = (0..n)
                        .map(|v| {
                            let mut row = vec![Scalar::ZERO; n * l];
                            for b in 0..l {
                                if omega >> b & 1 == 1 {
                                    row[b * n + v] = Scalar::ONE;
                                }
                            }
                            row
                        })
                        .collect();
                    let composed = m.restrict_affine(&matrix, x)?;
                    if !composed.is_zero() {
                        maps.push(composed);
                    }
                }
            }
            let original_size = maps.len();
            layers.push(Layer { degree: layer.degree, maps: LayerMaps::Poly(maps), original_size });
        }
        Ok(Tower { shape: new_shape, flavor: Flavor::Polynomial, layers })
    }

    /// The polarized tower Q(k) on V^k: a layer of degree e expands into one
    /// layer per size-e subset E of [k], holding the polarizations with
    /// support E.
    pub fn polarized(&self, k: usize) -> Result<Tower> {
        if self.flavor != Flavor::Polynomial {
            return Err(Error::FlavorMismatch("polarized needs a polynomial tower".into()));
        }
        let p = self.shape.field().p();
        if (k as u64) >= p as u64 || self.degree() as usize > k {
            return Err(Error::CharacteristicTooSmall { degree: k as u32, p });
        }
        let n = self.shape.dims()[0];
        let new_shape = SpaceShape::new(self.shape.field(), vec![n; k])?;
        let mut layers = Vec::new();
        for layer in &self.layers {
            if layer.size() == 0 {
                continue;
            }
            let e = layer.degree as usize;
            if e == 0 {
                return Err(Error::Invalid("cannot polarize a degree-0 layer".into()));
            }
            for subset in size_e_subsets(k, e) {
                let maps: Vec<MultiAffineMap> = layer
                    .poly_maps()
                    .iter()
                    .map(|m| {
                        let bar = m.polarize()?;
                        let mapping: HashMap<usize, usize> =
                            subset.iter().enumerate().map(|(pos, &f)| (pos, f)).collect();
                        Ok(MultiAffineMap::from_multilinear(
                            bar.remap_factors(new_shape.clone(), &mapping)?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                let original_size = maps.len();
                layers.push(Layer { degree: e as u32, maps: LayerMaps::Affine(maps), original_size });
            }
        }
        Ok(Tower { shape: new_shape, flavor: Flavor::MultiLinear, layers })
    }

    /// Pre-composition with the diagonal: a multilinear tower on V^k with all
    /// factors equal becomes a polynomial tower on V.
    pub fn diagonal(&self) -> Result<Tower> {
        if self.flavor != Flavor::MultiLinear {
            return Err(Error::FlavorMismatch("diagonal needs a multilinear tower".into()));
        }
        let n = self.shape.dims()[0];
        if self.shape.dims().iter().any(|&d| d != n) {
            return Err(Error::ShapeMismatch("diagonal needs equal factor dimensions".into()));
        }
        let new_shape = SpaceShape::single(self.shape.field(), n)?;
        let mut out = Tower::empty(new_shape, Flavor::Polynomial);
        for layer in &self.layers {
            for m in layer.affine_maps() {
                let poly = m.diagonal_poly()?;
                if !poly.is_zero() {
                    out.place_poly_map(poly);
                }
            }
        }
        Ok(out)
    }

    /// The union tower Q_t = Q with all difference maps x -> Q(x+t) - Q(x)
    /// placed by degree; zero differences are dropped.
    pub fn derivative_tower(&self, t: &[Scalar]) -> Result<Tower> {
        if self.flavor != Flavor::Polynomial {
            return Err(Error::FlavorMismatch("derivative_tower needs a polynomial tower".into()));
        }
        let mut out = self.clone();
        for layer in &self.layers {
            for m in layer.poly_maps() {
                let d = m.discrete_derivative(t)?;
                if !d.is_zero() {
                    out.place_poly_map(d);
                }
            }
        }
        Ok(out)
    }

    /// Placement rule for generated maps: append to the top-most layer of
    /// equal degree, else create a new layer below all layers of higher
    /// degree.
    pub fn place_poly_map(&mut self, m: Poly) {
        debug_assert_eq!(self.flavor, Flavor::Polynomial);
        if m.is_zero() {
            return;
        }
        let e = m.degree();
        if let Some(layer) = self
            .layers
            .iter_mut()
            .rev()
            .find(|l| l.degree == e)
        {
            if let LayerMaps::Poly(v) = &mut layer.maps {
                v.push(m);
                layer.original_size += 1;
                return;
            }
        }
        let pos = self.layers.iter().position(|l| l.degree > e).unwrap_or(self.layers.len());
        self.layers.insert(
            pos,
            Layer { degree: e, maps: LayerMaps::Poly(vec![m]), original_size: 1 },
        );
    }

    /// Per-layer (A,B,s)-regularity check, delegated to the rank engine.
    pub fn check_regularity(&self, a: f64, b: f64, s: f64, budget: u64) -> Result<RegularityReport> {
        self.check_regularity_relative(None, a, b, s, budget)
    }

    /// Regularity of `self` relative to a base tower: layer i must have
    /// rank relative to base + own lower layers above A(suffix sizes + s)^B.
    pub fn check_regularity_relative(
        &self,
        base: Option<&Tower>,
        a: f64,
        b: f64,
        s: f64,
        budget: u64,
    ) -> Result<RegularityReport> {
        let sizes = self.layer_sizes();
        let mut entries = Vec::with_capacity(self.height());
        let mut overall = RegularityStatus::Proven;
        for i in 0..self.height() {
            let suffix: usize = sizes[i..].iter().sum();
            let threshold = a * ((suffix as f64) + s).powf(b);
            let layer = &self.layers[i];
            if layer.size() == 0 {
                entries.push(LayerRegularity {
                    layer: i + 1,
                    threshold,
                    lower: u64::MAX,
                    upper: None,
                    status: RegularityStatus::Proven,
                    linear_convention: false,
                });
                continue;
            }
            let below = self.truncate_below(i + 1)?;
            let reference = match base {
                Some(q) => q.stacked(&below)?,
                None => below,
            };
            let mut counter = BudgetCounter::new(budget);
            let level_cap = threshold.floor().max(0.0) as u64;
            let query = rank::layer_collection_rank(layer, &reference, level_cap, &mut counter)?;
            let status = if query.lower as f64 > threshold {
                RegularityStatus::Proven
            } else if query.upper.map(|u| u as f64 <= threshold).unwrap_or(false) {
                RegularityStatus::Refuted
            } else {
                RegularityStatus::Unknown
            };
            entries.push(LayerRegularity {
                layer: i + 1,
                threshold,
                lower: query.lower,
                upper: query.upper,
                status,
                linear_convention: query.linear_convention,
            });
            overall = match (overall, status) {
                (RegularityStatus::Refuted, _) | (_, RegularityStatus::Refuted) => {
                    RegularityStatus::Refuted
                }
                (RegularityStatus::Unknown, _) | (_, RegularityStatus::Unknown) => {
                    RegularityStatus::Unknown
                }
                _ => RegularityStatus::Proven,
            };
        }
        Ok(RegularityReport { entries, overall })
    }
}

/// Size-e subsets of {0..k-1} in lexicographic order.
pub(crate) fn size_e_subsets(k: usize, e: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    fn rec(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, start: usize, k: usize, left: usize) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            if k - i < left {
                break;
            }
            cur.push(i);
            rec(out, cur, i + 1, k, left - 1);
            cur.pop();
        }
    }
    rec(&mut out, &mut cur, 0, k, e);
    out
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum RegularityStatus {
    Proven,
    Refuted,
    Unknown,
}

#[derive(Clone, Debug)]
pub struct LayerRegularity {
    pub layer: usize,
    pub threshold: f64,
    pub lower: u64,
    pub upper: Option<u64>,
    pub status: RegularityStatus,
    /// Set when the rank value came from the degree-1 convention (rank of an
    /// irreducible linear combination reported as the ambient dimension).
    pub linear_convention: bool,
}

#[derive(Clone, Debug)]
pub struct RegularityReport {
    pub entries: Vec<LayerRegularity>,
    pub overall: RegularityStatus,
}
