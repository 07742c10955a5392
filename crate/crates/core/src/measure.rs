//! Probability vectors over marginal type spaces.
//!
//! A distribution on `A_U` is a dense weight vector in mixed-radix order: the
//! sites of `U` in increasing order, first site slowest. Products never permute
//! that layout; a tensor product interleaves its factors into global site order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{LabelledPartition, SiteSet, MAX_SITES};

/// Normalisation tolerance enforced when distributions are built from user data.
pub const NORMALISATION_TOL: f64 = 1e-12;

/// Per-site alphabet sizes `|A_1|, .., |A_n|`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSpace {
    sizes: Vec<usize>,
}

impl TypeSpace {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidModel("type space needs at least one site".into()));
        }
        if sizes.len() > MAX_SITES {
            return Err(Error::SiteOutOfRange(sizes.len()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidModel(format!("site {} has an empty alphabet", i + 1)));
        }
        Ok(TypeSpace { sizes })
    }

    pub fn binary(n: usize) -> Result<Self> {
        Self::new(vec![2; n])
    }

    pub fn num_sites(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn full_set(&self) -> SiteSet {
        SiteSet::full(self.sizes.len()).expect("checked at construction")
    }

    /// `|A_U|`.
    pub fn cardinality(&self, set: SiteSet) -> usize {
        set.iter().map(|s| self.sizes[s]).product()
    }

    fn check_set(&self, set: SiteSet) -> Result<()> {
        if !set.is_subset(self.full_set()) {
            return Err(Error::NotSubset(set.to_string(), self.full_set().to_string()));
        }
        Ok(())
    }

    fn radices(&self, set: SiteSet) -> Vec<usize> {
        set.iter().map(|s| self.sizes[s]).collect()
    }
}

/// A probability vector on `A_U`. Empty support is the unit mass on the empty sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Distribution {
    support: SiteSet,
    #[serde(skip)]
    radices: Vec<usize>,
    weights: Vec<f64>,
}

impl Distribution {
    /// Validates length, non-negativity and normalisation (no renormalisation).
    pub fn new(space: &TypeSpace, support: SiteSet, weights: Vec<f64>) -> Result<Self> {
        space.check_set(support)?;
        let radices = space.radices(support);
        let len: usize = radices.iter().product();
        if weights.len() != len {
            return Err(Error::InvalidDistribution(format!(
                "expected {len} weights on {support}, got {}",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidDistribution(format!("weight {w} is not a probability")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALISATION_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Distribution {
            support,
            radices,
            weights,
        })
    }

    /// Unvalidated constructor for intermediate results and signed measures.
    pub(crate) fn from_parts(support: SiteSet, radices: Vec<usize>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(radices.iter().product::<usize>(), weights.len());
        Distribution {
            support,
            radices,
            weights,
        }
    }

    /// The scalar 1: unit mass on `A_∅`.
    pub fn unit() -> Self {
        Distribution {
            support: SiteSet::empty(),
            radices: Vec::new(),
            weights: vec![1.0],
        }
    }

    pub fn uniform(space: &TypeSpace, support: SiteSet) -> Result<Self> {
        space.check_set(support)?;
        let len = space.cardinality(support);
        Ok(Distribution {
            support,
            radices: space.radices(support),
            weights: vec![1.0 / len as f64; len],
        })
    }

    /// Point mass at the sequence `letters` (one letter per site of `support`).
    pub fn point_mass(space: &TypeSpace, support: SiteSet, letters: &[usize]) -> Result<Self> {
        space.check_set(support)?;
        let radices = space.radices(support);
        let mut d = Distribution {
            support,
            weights: vec![0.0; radices.iter().product()],
            radices,
        };
        let idx = d.index_of(letters)?;
        d.weights[idx] = 1.0;
        Ok(d)
    }

    /// Product of per-site marginals on the full type space.
    pub fn product_of(space: &TypeSpace, marginals: &[Vec<f64>]) -> Result<Self> {
        if marginals.len() != space.num_sites() {
            return Err(Error::InvalidDistribution(format!(
                "{} marginals for {} sites",
                marginals.len(),
                space.num_sites()
            )));
        }
        let factors = marginals
            .iter()
            .enumerate()
            .map(|(i, w)| Distribution::new(space, SiteSet::singleton(i)?, w.clone()))
            .collect::<Result<Vec<_>>>()?;
        tensor(&factors.iter().collect::<Vec<_>>())
    }

    pub fn support(&self) -> SiteSet {
        self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mixed-radix index of a sequence over the support.
    pub fn index_of(&self, letters: &[usize]) -> Result<usize> {
        if letters.len() != self.radices.len() {
            return Err(Error::InvalidDistribution(format!(
                "sequence of length {} on {} sites",
                letters.len(),
                self.radices.len()
            )));
        }
        let mut idx = 0;
        for (&a, &r) in letters.iter().zip(&self.radices) {
            if a >= r {
                return Err(Error::InvalidDistribution(format!("letter {a} outside alphabet of size {r}")));
            }
            idx = idx * r + a;
        }
        Ok(idx)
    }

    pub fn letters_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        for (slot, &r) in out.iter_mut().zip(&self.radices).rev() {
            *slot = index % r;
            index /= r;
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        assert_eq!(self.support, other.support, "comparing distributions on different supports");
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Marginal on `v ⊆ support`: the push-forward under projection onto `A_v`.
    pub fn marginalise(&self, v: SiteSet) -> Result<Distribution> {
        if !v.is_subset(self.support) {
            return Err(Error::NotSubset(v.to_string(), self.support.to_string()));
        }
        if v == self.support {
            return Ok(self.clone());
        }
        let keep: Vec<bool> = self.support.iter().map(|s| v.contains(s)).collect();
        let radices: Vec<usize> = self
            .radices
            .iter()
            .zip(&keep)
            .filter_map(|(&r, &k)| k.then_some(r))
            .collect();
        // target stride of every source digit (0 for summed-out sites)
        let mut strides = vec![0usize; keep.len()];
        let mut acc = 1;
        for k in (0..keep.len()).rev() {
            if keep[k] {
                strides[k] = acc;
                acc *= self.radices[k];
            }
        }
        let mut out = vec![0.0; acc];
        let mut digits = vec![0usize; keep.len()];
        let mut target = 0usize;
        for &w in &self.weights {
            out[target] += w;
            // odometer increment, last digit fastest
            for k in (0..digits.len()).rev() {
                digits[k] += 1;
                target += strides[k];
                if digits[k] < self.radices[k] {
                    break;
                }
                target -= strides[k] * digits[k];
                digits[k] = 0;
            }
        }
        Ok(Distribution::from_parts(v, radices, out))
    }
}

/// Product measure of factors with pairwise disjoint supports, laid out in global site order.
pub fn tensor(factors: &[&Distribution]) -> Result<Distribution> {
    let mut support = SiteSet::empty();
    for f in factors {
        if !f.support.is_disjoint(support) {
            return Err(Error::OverlappingSupports(
                f.support.to_string(),
                support.to_string(),
            ));
        }
        support = support.union(f.support);
    }
    let live: Vec<&Distribution> = factors.iter().copied().filter(|f| !f.support.is_empty()).collect();
    match live.len() {
        0 => return Ok(Distribution::unit()),
        1 => return Ok(live[0].clone()),
        _ => {}
    }
    // per global site: (factor, stride inside that factor)
    let mut owner = Vec::with_capacity(support.len());
    let mut radices = Vec::with_capacity(support.len());
    for site in support.iter() {
        let (k, f) = live
            .iter()
            .enumerate()
            .find(|(_, f)| f.support.contains(site))
            .expect("site covered by some factor");
        let pos = f.support.rank_of(site).expect("site in support");
        let stride: usize = f.radices[pos + 1..].iter().product();
        owner.push((k, stride));
        radices.push(f.radices[pos]);
    }
    let len: usize = radices.iter().product();
    let mut out = Vec::with_capacity(len);
    let mut digits = vec![0usize; radices.len()];
    let mut idx = vec![0usize; live.len()];
    for _ in 0..len {
        out.push(live.iter().zip(&idx).map(|(f, &i)| f.weights[i]).product());
        for k in (0..digits.len()).rev() {
            let (fk, stride) = owner[k];
            digits[k] += 1;
            idx[fk] += stride;
            if digits[k] < radices[k] {
                break;
            }
            idx[fk] -= stride * digits[k];
            digits[k] = 0;
        }
    }
    Ok(Distribution::from_parts(support, radices, out))
}

/// One distribution per location, all on the same support.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metapopulation {
    locations: Vec<Distribution>,
}

impl Metapopulation {
    pub fn new(locations: Vec<Distribution>) -> Result<Self> {
        let first = locations
            .first()
            .ok_or_else(|| Error::InvalidModel("metapopulation needs at least one location".into()))?;
        if let Some((k, d)) = locations
            .iter()
            .enumerate()
            .find(|(_, d)| d.support != first.support || d.radices != first.radices)
        {
            return Err(Error::InvalidDistribution(format!(
                "location {k} has support {} but location 0 has {}",
                d.support, first.support
            )));
        }
        Ok(Metapopulation { locations })
    }

    pub(crate) fn from_parts(locations: Vec<Distribution>) -> Self {
        Metapopulation { locations }
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn support(&self) -> SiteSet {
        self.locations[0].support
    }

    pub fn get(&self, location: usize) -> &Distribution {
        &self.locations[location]
    }

    pub fn locations(&self) -> &[Distribution] {
        &self.locations
    }

    pub fn into_locations(self) -> Vec<Distribution> {
        self.locations
    }

    pub fn marginalise(&self, v: SiteSet) -> Result<Metapopulation> {
        Ok(Metapopulation {
            locations: self
                .locations
                .iter()
                .map(|d| d.marginalise(v))
                .collect::<Result<_>>()?,
        })
    }

    /// Largest entrywise deviation across all locations.
    pub fn max_abs_diff(&self, other: &Metapopulation) -> f64 {
        self.locations
            .iter()
            .zip(&other.locations)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

/// Labelled recombinator `⊗_{(d,λ)} ν^d(λ)`.
pub fn recombinator(bdelta: &LabelledPartition, nu: &Metapopulation) -> Result<Distribution> {
    if bdelta.base_set() != nu.support() {
        return Err(Error::BaseMismatch(
            bdelta.base_set().to_string(),
            nu.support().to_string(),
        ));
    }
    bdelta.check_labels(nu.num_locations())?;
    let marginals = bdelta
        .blocks()
        .map(|(d, l)| nu.get(l).marginalise(d))
        .collect::<Result<Vec<_>>>()?;
    tensor(&marginals.iter().collect::<Vec<_>>())
}

/// Recombinator evaluation with the block marginals memoised per `(block, location)`.
pub(crate) struct MarginalCache<'a> {
    nu: &'a Metapopulation,
    cache: std::collections::HashMap<(SiteSet, usize), Distribution>,
}

impl<'a> MarginalCache<'a> {
    pub(crate) fn new(nu: &'a Metapopulation) -> Self {
        MarginalCache {
            nu,
            cache: Default::default(),
        }
    }

    pub(crate) fn recombinator(&mut self, bdelta: &LabelledPartition) -> Distribution {
        for (d, l) in bdelta.blocks() {
            if !self.cache.contains_key(&(d, l)) {
                let m = self.nu.get(l).marginalise(d).expect("block inside support");
                self.cache.insert((d, l), m);
            }
        }
        let factors: Vec<&Distribution> = bdelta.blocks().map(|key| &self.cache[&key]).collect();
        tensor(&factors).expect("blocks are disjoint")
    }
}
