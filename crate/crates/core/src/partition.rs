//! Set partitions of finite site sets and their labelled variants.
//!
//! Sites are 0-based internally and 1-based whenever they are printed or
//! serialised. A [`SiteSet`] is a bitmask, so at most [`MAX_SITES`] sites are
//! supported. Partitions are kept in canonical form (blocks sorted by their
//! minimal site), which makes structural equality the mathematical one and
//! lets partitions act as matrix indices and hash keys.
//!
//! The total order on partitions of a fixed set is the lexicographic order of
//! their restricted growth strings. Coarser partitions always come first: if
//! `eps` is strictly finer than `delta`, then `delta < eps`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MAX_SITES: usize = 32;

/// A subset of the sites `0..MAX_SITES`, iterated in increasing order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SiteSet(u32);

impl SiteSet {
    pub const fn empty() -> Self {
        SiteSet(0)
    }

    /// The set `{0, .., n-1}`.
    pub fn full(n: usize) -> Result<Self> {
        if n > MAX_SITES {
            return Err(Error::SiteOutOfRange(n));
        }
        Ok(if n == MAX_SITES {
            SiteSet(u32::MAX)
        } else {
            SiteSet((1u32 << n) - 1)
        })
    }

    pub fn singleton(site: usize) -> Result<Self> {
        if site >= MAX_SITES {
            return Err(Error::SiteOutOfRange(site));
        }
        Ok(SiteSet(1 << site))
    }

    /// Builds a set from 0-based site indices; duplicates are rejected.
    pub fn from_sites<I: IntoIterator<Item = usize>>(sites: I) -> Result<Self> {
        let mut bits = 0u32;
        for s in sites {
            if s >= MAX_SITES {
                return Err(Error::SiteOutOfRange(s));
            }
            if bits & (1 << s) != 0 {
                return Err(Error::InvalidPartition(format!("site {} repeated", s + 1)));
            }
            bits |= 1 << s;
        }
        Ok(SiteSet(bits))
    }

    /// Builds a set from 1-based site numbers (the external convention).
    pub fn from_one_based(sites: &[usize]) -> Result<Self> {
        if let Some(&bad) = sites.iter().find(|&&s| s == 0 || s > MAX_SITES) {
            return Err(Error::SiteOutOfRange(bad));
        }
        Self::from_sites(sites.iter().map(|s| s - 1))
    }

    pub const fn from_bits(bits: u32) -> Self {
        SiteSet(bits)
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub const fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub const fn contains(self, site: usize) -> bool {
        site < MAX_SITES && self.0 & (1 << site) != 0
    }

    /// Smallest site, if any.
    pub fn min(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub const fn is_subset(self, other: SiteSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub const fn is_disjoint(self, other: SiteSet) -> bool {
        self.0 & other.0 == 0
    }

    pub const fn intersection(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 & other.0)
    }

    pub const fn union(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 | other.0)
    }

    pub const fn difference(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 & !other.0)
    }

    pub fn iter(self) -> SiteIter {
        SiteIter(self.0)
    }

    /// 1-based site numbers in increasing order.
    pub fn to_one_based(self) -> Vec<usize> {
        self.iter().map(|s| s + 1).collect()
    }

    /// Position of `site` within the ordered set.
    pub fn rank_of(self, site: usize) -> Option<usize> {
        self.contains(site)
            .then(|| (self.0 & ((1u32 << site) - 1)).count_ones() as usize)
    }
}

impl fmt::Debug for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, s) in self.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", s + 1)?;
        }
        f.write_str("}")
    }
}

impl Serialize for SiteSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SiteSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let sites = Vec::<usize>::deserialize(d)?;
        SiteSet::from_one_based(&sites).map_err(serde::de::Error::custom)
    }
}

impl IntoIterator for SiteSet {
    type Item = usize;
    type IntoIter = SiteIter;

    fn into_iter(self) -> SiteIter {
        self.iter()
    }
}

#[derive(Clone, Debug)]
pub struct SiteIter(u32);

impl Iterator for SiteIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let s = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for SiteIter {}

/// A partition of a site set into non-empty, pairwise disjoint blocks.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    base: SiteSet,
    blocks: Vec<SiteSet>,
}

impl Partition {
    /// Canonicalises `blocks` into a partition of their union.
    pub fn new(mut blocks: Vec<SiteSet>) -> Result<Self> {
        let mut base = SiteSet::empty();
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            if !b.is_disjoint(base) {
                return Err(Error::InvalidPartition(format!(
                    "block {b} overlaps another block"
                )));
            }
            base = base.union(*b);
        }
        if base.is_empty() {
            return Err(Error::EmptySiteSet);
        }
        blocks.sort_unstable_by_key(|b| b.bits().trailing_zeros());
        Ok(Partition { base, blocks })
    }

    /// Blocks given as lists of 1-based sites, e.g. `[[1, 2], [3]]`.
    pub fn from_one_based(blocks: &[Vec<usize>]) -> Result<Self> {
        let sets = blocks
            .iter()
            .map(|b| {
                if b.is_empty() {
                    Err(Error::InvalidPartition("empty block".into()))
                } else {
                    SiteSet::from_one_based(b)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sets)
    }

    /// The single-block partition of `set`.
    pub fn coarsest(set: SiteSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptySiteSet);
        }
        Ok(Partition {
            base: set,
            blocks: vec![set],
        })
    }

    /// The partition of `set` into singletons.
    pub fn finest(set: SiteSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptySiteSet);
        }
        let blocks = set.iter().map(|s| SiteSet(1 << s)).collect();
        Ok(Partition { base: set, blocks })
    }

    /// Builds a partition from a restricted growth string over the sites of `base`.
    pub fn from_rgs(base: SiteSet, rgs: &[usize]) -> Result<Self> {
        if rgs.len() != base.len() {
            return Err(Error::InvalidPartition(format!(
                "growth string of length {} for a set of {} sites",
                rgs.len(),
                base.len()
            )));
        }
        let mut blocks: Vec<SiteSet> = Vec::new();
        for (site, &b) in base.iter().zip(rgs) {
            match b.cmp(&blocks.len()) {
                Ordering::Less => blocks[b].0 |= 1 << site,
                Ordering::Equal => blocks.push(SiteSet(1 << site)),
                Ordering::Greater => {
                    return Err(Error::InvalidPartition("not a restricted growth string".into()))
                }
            }
        }
        Partition::new(blocks)
    }

    pub fn base(&self) -> SiteSet {
        self.base
    }

    pub fn blocks(&self) -> &[SiteSet] {
        &self.blocks
    }

    /// Number of blocks.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn is_coarsest(&self) -> bool {
        self.blocks.len() == 1
    }

    pub fn is_finest(&self) -> bool {
        self.blocks.len() == self.base.len()
    }

    pub fn block_of(&self, site: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(site))
    }

    /// Restricted growth string: the block index of each site, in site order.
    pub fn rgs(&self) -> Vec<usize> {
        self.base
            .iter()
            .map(|s| self.block_of(s).expect("site in base"))
            .collect()
    }

    fn check_same_base(&self, other: &Partition) -> Result<()> {
        if self.base != other.base {
            return Err(Error::BaseMismatch(
                self.base.to_string(),
                other.base.to_string(),
            ));
        }
        Ok(())
    }

    /// `self ≼ other`: every block of `self` lies inside a block of `other`.
    pub fn is_finer_than(&self, other: &Partition) -> Result<bool> {
        self.check_same_base(other)?;
        Ok(self.refines_unchecked(other))
    }

    pub(crate) fn refines_unchecked(&self, other: &Partition) -> bool {
        self.blocks
            .iter()
            .all(|e| other.blocks.iter().any(|d| e.is_subset(*d)))
    }

    /// Coarsest common refinement.
    pub fn meet(&self, other: &Partition) -> Result<Partition> {
        self.check_same_base(other)?;
        let blocks = self
            .blocks
            .iter()
            .flat_map(|d| other.blocks.iter().map(move |e| d.intersection(*e)))
            .filter(|b| !b.is_empty())
            .collect();
        Partition::new(blocks)
    }

    /// The partition `{d ∩ V ≠ ∅}` of `V`.
    pub fn induced(&self, v: SiteSet) -> Result<Partition> {
        if v.is_empty() {
            return Err(Error::EmptySiteSet);
        }
        if !v.is_subset(self.base) {
            return Err(Error::NotSubset(v.to_string(), self.base.to_string()));
        }
        Ok(self.induced_unchecked(v))
    }

    pub(crate) fn induced_unchecked(&self, v: SiteSet) -> Partition {
        let mut blocks: Vec<SiteSet> = self
            .blocks
            .iter()
            .map(|d| d.intersection(v))
            .filter(|b| !b.is_empty())
            .collect();
        // intersection can change block minima
        blocks.sort_by_key(|b| SiteSet::min(*b));
        Partition { base: v, blocks }
    }

    /// Blocks as lists of 1-based sites.
    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|b| b.to_one_based()).collect()
    }
}

/// `eps ≼ delta`.
pub fn is_refinement(eps: &Partition, delta: &Partition) -> Result<bool> {
    eps.is_finer_than(delta)
}

pub fn meet(delta: &Partition, eps: &Partition) -> Result<Partition> {
    delta.meet(eps)
}

impl PartialOrd for Partition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Partition {
    fn cmp(&self, other: &Self) -> Ordering {
        self.base
            .cmp(&other.base)
            .then_with(|| self.rgs().cmp(&other.rgs()))
    }
}

impl fmt::Debug for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, b) in self.blocks.iter().enumerate() {
            if k > 0 {
                f.write_str("|")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl Serialize for Partition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let blocks = Vec::<Vec<usize>>::deserialize(d)?;
        Partition::from_one_based(&blocks).map_err(serde::de::Error::custom)
    }
}

/// All partitions of `set`, in lexicographic order of restricted growth strings.
///
/// The first entry is the single-block partition and the last the finest one;
/// there are `B(|set|)` entries (Bell number).
pub fn enumerate_partitions(set: SiteSet) -> Result<Vec<Partition>> {
    if set.is_empty() {
        return Err(Error::EmptySiteSet);
    }
    let sites: Vec<usize> = set.iter().collect();
    let mut out = Vec::new();
    let mut blocks: Vec<SiteSet> = Vec::with_capacity(sites.len());
    grow(&sites, 0, &mut blocks, set, &mut out);
    Ok(out)
}

fn grow(
    sites: &[usize],
    k: usize,
    blocks: &mut Vec<SiteSet>,
    base: SiteSet,
    out: &mut Vec<Partition>,
) {
    if k == sites.len() {
        out.push(Partition {
            base,
            blocks: blocks.clone(),
        });
        return;
    }
    let bit = 1u32 << sites[k];
    for b in 0..blocks.len() {
        blocks[b].0 |= bit;
        grow(sites, k + 1, blocks, base, out);
        blocks[b].0 &= !bit;
    }
    blocks.push(SiteSet(bit));
    grow(sites, k + 1, blocks, base, out);
    blocks.pop();
}

/// A partition whose blocks carry location labels, aligned with the canonical block order.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelledPartition {
    base: Partition,
    labels: Vec<usize>,
}

impl LabelledPartition {
    pub fn new(base: Partition, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != base.len() {
            return Err(Error::InvalidPartition(format!(
                "{} labels for {} blocks",
                labels.len(),
                base.len()
            )));
        }
        Ok(LabelledPartition { base, labels })
    }

    /// Builds from `(block, label)` pairs in any order.
    pub fn from_blocks(mut pairs: Vec<(SiteSet, usize)>) -> Result<Self> {
        pairs.sort_unstable_by_key(|(b, _)| b.bits().trailing_zeros());
        let (blocks, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let base = Partition::new(blocks)?;
        Ok(LabelledPartition { base, labels })
    }

    /// `{(set, label)}`: the single block carrying `label`.
    pub fn coarsest(set: SiteSet, label: usize) -> Result<Self> {
        Ok(LabelledPartition {
            base: Partition::coarsest(set)?,
            labels: vec![label],
        })
    }

    pub fn base(&self) -> &Partition {
        &self.base
    }

    pub fn base_set(&self) -> SiteSet {
        self.base.base
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(block, label)` pairs in canonical order.
    pub fn blocks(&self) -> impl ExactSizeIterator<Item = (SiteSet, usize)> + '_ {
        self.base.blocks.iter().copied().zip(self.labels.iter().copied())
    }

    pub fn check_labels(&self, num_locations: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= num_locations) {
            Some(l) => Err(Error::InvalidPartition(format!(
                "label {l} out of range for {num_locations} locations"
            ))),
            None => Ok(()),
        }
    }

    /// The labelled partition induced on `v`: blocks `d ∩ v ≠ ∅` keep their parent's label.
    pub fn induced(&self, v: SiteSet) -> Result<LabelledPartition> {
        if v.is_empty() {
            return Err(Error::EmptySiteSet);
        }
        if !v.is_subset(self.base_set()) {
            return Err(Error::NotSubset(v.to_string(), self.base_set().to_string()));
        }
        let mut pairs: Vec<(SiteSet, usize)> = self
            .blocks()
            .map(|(d, l)| (d.intersection(v), l))
            .filter(|(b, _)| !b.is_empty())
            .collect();
        pairs.sort_by_key(|(b, _)| SiteSet::min(*b));
        let (blocks, labels) = pairs.into_iter().unzip();
        Ok(LabelledPartition {
            base: Partition { base: v, blocks },
            labels,
        })
    }

    /// Labelled refinement order; labels play no role.
    pub fn is_finer_than(&self, other: &LabelledPartition) -> Result<bool> {
        self.base.is_finer_than(&other.base)
    }

    pub fn display_with(&self, names: &[String]) -> String {
        let mut s = String::new();
        for (k, (b, l)) in self.blocks().enumerate() {
            if k > 0 {
                s.push('|');
            }
            let name = names.get(l).cloned().unwrap_or_else(|| l.to_string());
            s.push_str(&format!("{b}:{name}"));
        }
        s
    }
}

/// Joins labelled partitions of the blocks of `delta` into one labelled partition of its base.
///
/// `parts[k]` must be a labelled partition of `delta.blocks()[k]`.
pub fn union_over_blocks(
    delta: &Partition,
    parts: &[LabelledPartition],
) -> Result<LabelledPartition> {
    if parts.len() != delta.len() {
        return Err(Error::InvalidPartition(format!(
            "{} parts for {} blocks",
            parts.len(),
            delta.len()
        )));
    }
    let mut pairs = Vec::with_capacity(delta.base.len());
    for (d, part) in delta.blocks.iter().zip(parts) {
        if part.base_set() != *d {
            return Err(Error::BaseMismatch(
                part.base_set().to_string(),
                d.to_string(),
            ));
        }
        pairs.extend(part.blocks());
    }
    LabelledPartition::from_blocks(pairs)
}

/// All labelled partitions of `set` with labels in `0..num_locations`.
///
/// Ordered by partition, then by label vector in mixed-radix order (first block slowest).
pub fn enumerate_labelled_partitions(
    set: SiteSet,
    num_locations: usize,
) -> Result<Vec<LabelledPartition>> {
    if num_locations == 0 {
        return Err(Error::InvalidArgument("at least one location required".into()));
    }
    let mut out = Vec::new();
    for p in enumerate_partitions(set)? {
        for labels in label_vectors(p.len(), num_locations) {
            out.push(LabelledPartition {
                base: p.clone(),
                labels,
            });
        }
    }
    Ok(out)
}

/// All vectors in `0..radix` of length `len`, first coordinate slowest.
pub(crate) fn label_vectors(len: usize, radix: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = radix.checked_pow(len as u32).expect("label space overflow");
    (0..total).map(move |mut code| {
        let mut v = vec![0; len];
        for slot in v.iter_mut().rev() {
            *slot = code % radix;
            code /= radix;
        }
        v
    })
}

impl fmt::Debug for LabelledPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for LabelledPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (b, l)) in self.blocks().enumerate() {
            if k > 0 {
                f.write_str("|")?;
            }
            write!(f, "{b}:{l}")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LabelledBlock {
    sites: Vec<usize>,
    label: usize,
}

impl Serialize for LabelledPartition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let recs: Vec<LabelledBlock> = self
            .blocks()
            .map(|(b, label)| LabelledBlock {
                sites: b.to_one_based(),
                label,
            })
            .collect();
        recs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelledPartition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let recs = Vec::<LabelledBlock>::deserialize(d)?;
        let pairs = recs
            .into_iter()
            .map(|r| {
                if r.sites.is_empty() {
                    return Err(Error::InvalidPartition("empty block".into()));
                }
                Ok((SiteSet::from_one_based(&r.sites)?, r.label))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        LabelledPartition::from_blocks(pairs).map_err(serde::de::Error::custom)
    }
}
