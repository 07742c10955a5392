//! Forward-in-time migration-recombination dynamics.
//!
//! One generation is migration (backward matrix `M`) followed by recombination
//! (distribution `r` over partitions of the sites). Two independent code paths
//! compute a step: [`step`] composes the two stages directly; [`step_labelled`]
//! sums recombinators over labelled partitions weighted by the
//! migration-recombination probabilities.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::measure::{recombinator, tensor, Distribution, MarginalCache, Metapopulation, TypeSpace};
use crate::partition::{label_vectors, LabelledPartition, Partition, SiteSet};

/// Tolerance for stochasticity of `r` and `M`.
pub const MODEL_TOL: f64 = 1e-12;
/// Tolerance for the population-size constancy check on forward migration.
pub const CONSTANCY_TOL: f64 = 1e-9;

/// Non-negative weights on partitions of a fixed site set (probabilities or rates).
///
/// Only partitions with positive weight are stored, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionWeights {
    base: SiteSet,
    entries: Vec<(Partition, f64)>,
}

impl PartitionWeights {
    pub fn new(base: SiteSet, entries: Vec<(Partition, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (p, w) in entries {
            if p.base() != base {
                return Err(Error::BaseMismatch(p.base().to_string(), base.to_string()));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidModel(format!("weight {w} of {p} is not a non-negative number")));
            }
            if map.insert(p.clone(), w).is_some() {
                return Err(Error::InvalidModel(format!("partition {p} listed twice")));
            }
        }
        Ok(PartitionWeights {
            base,
            entries: map.into_iter().filter(|(_, w)| *w > 0.0).collect(),
        })
    }

    pub fn base(&self) -> SiteSet {
        self.base
    }

    pub fn entries(&self) -> &[(Partition, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }

    pub fn get(&self, p: &Partition) -> f64 {
        self.entries
            .iter()
            .find(|(q, _)| q == p)
            .map_or(0.0, |(_, w)| *w)
    }

    /// Induced weights on `d`: `w^d_ε = Σ_{δ: δ|_d = ε} w_δ`.
    pub fn marginal(&self, d: SiteSet) -> Result<Vec<(Partition, f64)>> {
        if d.is_empty() {
            return Err(Error::EmptySiteSet);
        }
        if !d.is_subset(self.base) {
            return Err(Error::NotSubset(d.to_string(), self.base.to_string()));
        }
        let mut map: BTreeMap<Partition, f64> = BTreeMap::new();
        for (p, w) in &self.entries {
            *map.entry(p.induced_unchecked(d)).or_insert(0.0) += w;
        }
        Ok(map.into_iter().collect())
    }

    /// Marginal weights for every block reachable from the full set by repeated splitting.
    pub fn block_marginals(&self) -> HashMap<SiteSet, Vec<(Partition, f64)>> {
        let mut out = HashMap::new();
        let mut stack = vec![self.base];
        while let Some(d) = stack.pop() {
            if out.contains_key(&d) {
                continue;
            }
            let m = self.marginal(d).expect("block inside base");
            for (eps, _) in &m {
                stack.extend(eps.blocks().iter().filter(|b| !out.contains_key(*b)));
            }
            out.insert(d, m);
        }
        out
    }

    /// Coarsest common refinement of all partitions with positive weight.
    pub fn support_meet(&self) -> Option<Partition> {
        let mut it = self.entries.iter().map(|(p, _)| p);
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, p| acc.meet(p).expect("same base")))
    }
}

/// Discrete-time model: recombination distribution plus backward migration matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RecombinationModel {
    type_space: TypeSpace,
    recomb: PartitionWeights,
    migration: DenseMatrix,
    locations: Vec<String>,
}

impl RecombinationModel {
    pub fn new(
        type_space: TypeSpace,
        recomb: Vec<(Partition, f64)>,
        migration: DenseMatrix,
        locations: Vec<String>,
    ) -> Result<Self> {
        let recomb = PartitionWeights::new(type_space.full_set(), recomb)?;
        let total = recomb.total();
        if (total - 1.0).abs() > MODEL_TOL {
            return Err(Error::InvalidModel(format!(
                "recombination probabilities sum to {total}, not 1"
            )));
        }
        if migration.rows() != locations.len() {
            return Err(Error::Dimension(format!(
                "{}x{} migration matrix for {} locations",
                migration.rows(),
                migration.cols(),
                locations.len()
            )));
        }
        if locations.is_empty() {
            return Err(Error::InvalidModel("at least one location required".into()));
        }
        migration.check_stochastic(MODEL_TOL)?;
        Ok(RecombinationModel {
            type_space,
            recomb,
            migration,
            locations,
        })
    }

    /// Locations named `0, 1, ..` after the rows of `migration`.
    pub fn with_default_names(
        type_space: TypeSpace,
        recomb: Vec<(Partition, f64)>,
        migration: DenseMatrix,
    ) -> Result<Self> {
        let names = (0..migration.rows()).map(|i| i.to_string()).collect();
        Self::new(type_space, recomb, migration, names)
    }

    pub fn type_space(&self) -> &TypeSpace {
        &self.type_space
    }

    pub fn num_sites(&self) -> usize {
        self.type_space.num_sites()
    }

    pub fn full_set(&self) -> SiteSet {
        self.type_space.full_set()
    }

    pub fn recombination(&self) -> &PartitionWeights {
        &self.recomb
    }

    pub fn migration(&self) -> &DenseMatrix {
        &self.migration
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    /// `r` restricted to `U` (the marginal recombination distribution).
    pub fn marginal_recombination(&self, u: SiteSet) -> Result<Vec<(Partition, f64)>> {
        self.recomb.marginal(u)
    }

    pub(crate) fn check_population(&self, mu: &Metapopulation, support: SiteSet) -> Result<()> {
        if mu.num_locations() != self.num_locations() {
            return Err(Error::Dimension(format!(
                "{} locations in the population, {} in the model",
                mu.num_locations(),
                self.num_locations()
            )));
        }
        if mu.support() != support {
            return Err(Error::BaseMismatch(mu.support().to_string(), support.to_string()));
        }
        if mu.get(0).radices() != support.iter().map(|s| self.type_space.sizes()[s]).collect::<Vec<_>>() {
            return Err(Error::Dimension("population alphabet sizes differ from the model".into()));
        }
        Ok(())
    }
}

/// Backward migration matrix `M(α,β) = c(β)/c(α) M̃(β,α)` from forward migration and stationary sizes.
pub fn backward_from_forward(forward: &DenseMatrix, sizes: &[f64]) -> Result<DenseMatrix> {
    forward.check_stochastic(MODEL_TOL)?;
    let l = forward.rows();
    if sizes.len() != l {
        return Err(Error::Dimension(format!("{} sizes for {l} locations", sizes.len())));
    }
    if let Some(c) = sizes.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(Error::InvalidModel(format!("population size {c} is not positive")));
    }
    for a in 0..l {
        let inflow: f64 = (0..l).map(|b| sizes[b] * forward[(b, a)]).sum();
        if (inflow - sizes[a]).abs() > CONSTANCY_TOL * sizes[a].max(1.0) {
            return Err(Error::NotStationary);
        }
    }
    let mut m = DenseMatrix::zeros(l, l);
    for a in 0..l {
        for b in 0..l {
            m[(a, b)] = sizes[b] / sizes[a] * forward[(b, a)];
        }
    }
    m.check_stochastic(CONSTANCY_TOL)?;
    Ok(m)
}

/// `μ_{t+1/2}(α) = Σ_β M(α,β) μ_t(β)`.
pub fn migrate(mu: &Metapopulation, m: &DenseMatrix) -> Result<Metapopulation> {
    let l = mu.num_locations();
    if m.rows() != l || m.cols() != l {
        return Err(Error::Dimension(format!(
            "{}x{} migration matrix for {l} locations",
            m.rows(),
            m.cols()
        )));
    }
    let out = (0..l)
        .map(|a| {
            let mut w = vec![0.0; mu.get(0).len()];
            for (b, nu) in mu.locations().iter().enumerate() {
                let c = m[(a, b)];
                if c != 0.0 {
                    w.iter_mut().zip(nu.weights()).for_each(|(x, y)| *x += c * y);
                }
            }
            Distribution::from_parts(mu.support(), mu.get(0).radices().to_vec(), w)
        })
        .collect();
    Ok(Metapopulation::from_parts(out))
}

/// `μ(α) ↦ Σ_δ r_δ ⊗_{d∈δ} μ^d(α)` at every location; `recomb` must live on the population's support.
pub fn recombine(mu: &Metapopulation, recomb: &PartitionWeights) -> Result<Metapopulation> {
    if recomb.base() != mu.support() {
        return Err(Error::BaseMismatch(recomb.base().to_string(), mu.support().to_string()));
    }
    let out = mu
        .locations()
        .iter()
        .map(|nu| recombine_one(nu, recomb.entries()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metapopulation::from_parts(out))
}

fn recombine_one(nu: &Distribution, entries: &[(Partition, f64)]) -> Result<Distribution> {
    let mut w = vec![0.0; nu.len()];
    for (delta, r) in entries {
        let marginals = delta
            .blocks()
            .iter()
            .map(|d| nu.marginalise(*d))
            .collect::<Result<Vec<_>>>()?;
        let prod = tensor(&marginals.iter().collect::<Vec<_>>())?;
        w.iter_mut().zip(prod.weights()).for_each(|(x, y)| *x += r * y);
    }
    Ok(Distribution::from_parts(nu.support(), nu.radices().to_vec(), renormalised(w)))
}

// The recombination map is quadratic, so rounding drift of the total mass away
// from 1 is amplified by up to (1 + r_min) per generation. Projecting back is a
// no-op in exact arithmetic and keeps long runs stable.
fn renormalised(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    }
    w
}

/// One generation: recombination after migration.
pub fn step(mu: &Metapopulation, model: &RecombinationModel) -> Result<Metapopulation> {
    model.check_population(mu, model.full_set())?;
    recombine(&migrate(mu, model.migration())?, model.recombination())
}

/// One generation as `Σ_{bδ} p_bδ(α) R_bδ(μ)` over labelled partitions of all sites.
pub fn step_labelled(mu: &Metapopulation, model: &RecombinationModel) -> Result<Metapopulation> {
    model.check_population(mu, model.full_set())?;
    let entries: Vec<(Partition, f64)> = model.recombination().entries().to_vec();
    weighted_recombinator_sum(mu, model, &entries)
}

// Σ over labelled partitions with base in `entries`, labels enumerated lazily per partition.
fn weighted_recombinator_sum(
    mu: &Metapopulation,
    model: &RecombinationModel,
    entries: &[(Partition, f64)],
) -> Result<Metapopulation> {
    let l = model.num_locations();
    let m = model.migration();
    let len = mu.get(0).len();
    let mut out = vec![vec![0.0; len]; l];
    let mut cache = MarginalCache::new(mu);
    for (delta, r) in entries {
        for labels in label_vectors(delta.len(), l) {
            let bdelta = LabelledPartition::new(delta.clone(), labels)?;
            let rec = cache.recombinator(&bdelta);
            for (a, acc) in out.iter_mut().enumerate() {
                let p: f64 = r * bdelta.labels().iter().map(|&lam| m[(a, lam)]).product::<f64>();
                if p != 0.0 {
                    acc.iter_mut().zip(rec.weights()).for_each(|(x, y)| *x += p * y);
                }
            }
        }
    }
    let radices = mu.get(0).radices().to_vec();
    Ok(Metapopulation::from_parts(
        out.into_iter()
            .map(|w| Distribution::from_parts(mu.support(), radices.clone(), renormalised(w)))
            .collect(),
    ))
}

/// `μ_0, .., μ_t` by repeated [`step`].
pub fn iterate(mu0: &Metapopulation, model: &RecombinationModel, t: u64) -> Result<Vec<Metapopulation>> {
    model.check_population(mu0, model.full_set())?;
    let mut out = Vec::with_capacity(t as usize + 1);
    out.push(mu0.clone());
    for _ in 0..t {
        let next = step(out.last().unwrap(), model)?;
        out.push(next);
    }
    Ok(out)
}

/// Trajectory together with the post-migration half steps `μ_{s+1/2}`, `s < t`.
pub fn iterate_with_half_steps(
    mu0: &Metapopulation,
    model: &RecombinationModel,
    t: u64,
) -> Result<(Vec<Metapopulation>, Vec<Metapopulation>)> {
    model.check_population(mu0, model.full_set())?;
    let mut states = vec![mu0.clone()];
    let mut halves = Vec::with_capacity(t as usize);
    for _ in 0..t {
        let half = migrate(states.last().unwrap(), model.migration())?;
        let next = recombine(&half, model.recombination())?;
        halves.push(half);
        states.push(next);
    }
    Ok((states, halves))
}

/// Marginal migration-recombination probabilities `p^U_bδ(α)`.
#[derive(Clone, Debug)]
pub struct MigRecombProbs {
    support: SiteSet,
    states: Vec<LabelledPartition>,
    /// `probs[α][k]` for `states[k]`.
    probs: Vec<Vec<f64>>,
}

impl MigRecombProbs {
    pub fn support(&self) -> SiteSet {
        self.support
    }

    /// Labelled partitions of the support, in canonical order.
    pub fn states(&self) -> &[LabelledPartition] {
        &self.states
    }

    pub fn at(&self, location: usize) -> &[f64] {
        &self.probs[location]
    }

    pub fn get(&self, location: usize, bdelta: &LabelledPartition) -> f64 {
        self.states
            .binary_search(bdelta)
            .map_or(0.0, |k| self.probs[location][k])
    }
}

/// `p^U_bδ(α) = r^U_δ ∏_{(d,λ)} M(α,λ)` for every labelled partition of `U`.
pub fn migrecomb_probs(model: &RecombinationModel, u: SiteSet) -> Result<MigRecombProbs> {
    let marginal = model.marginal_recombination(u)?;
    let l = model.num_locations();
    let m = model.migration();
    let mut states = Vec::new();
    let mut probs = vec![Vec::new(); l];
    for delta in crate::partition::enumerate_partitions(u)? {
        let r = marginal
            .iter()
            .find(|(p, _)| *p == delta)
            .map_or(0.0, |(_, w)| *w);
        for labels in label_vectors(delta.len(), l) {
            for (a, row) in probs.iter_mut().enumerate() {
                row.push(r * labels.iter().map(|&lam| m[(a, lam)]).product::<f64>());
            }
            states.push(LabelledPartition::new(delta.clone(), labels)?);
        }
    }
    Ok(MigRecombProbs {
        support: u,
        states,
        probs,
    })
}

/// One step of the dynamics of the marginal population `μ^U`.
pub fn marginal_step(mu_u: &Metapopulation, model: &RecombinationModel) -> Result<Metapopulation> {
    let u = mu_u.support();
    if u.is_empty() {
        return Err(Error::EmptySiteSet);
    }
    model.check_population(mu_u, u)?;
    let marginal = model.marginal_recombination(u)?;
    weighted_recombinator_sum(mu_u, model, &marginal)
}

/// The labelled recombinator on a marginal population, for callers outside this module.
pub fn marginal_recombinator(bdelta: &LabelledPartition, mu_u: &Metapopulation) -> Result<Distribution> {
    recombinator(bdelta, mu_u)
}
