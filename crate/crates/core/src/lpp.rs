//! The labelled partitioning process (LPP) and duality-based Monte Carlo.
//!
//! Each step splits every labelled block by a partition drawn from `r`
//! (restricted to the block) and then relabels each new block by a draw from
//! the migration row of its parent's label. Replicate `k` of a run with seed
//! `s` uses ChaCha8 stream `k` under key `s`, so ensembles do not depend on
//! scheduling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{map_indices, pairwise_sum, Execution};
use crate::forward::RecombinationModel;
use crate::measure::{tensor, Distribution, MarginalCache, Metapopulation};
use crate::partition::{LabelledPartition, Partition, SiteSet};

/// Replicates per reduction unit in [`duality_estimate`].
pub const CHUNK: usize = 1024;

/// Samplers for `r` and for the rows of `M`.
pub struct LppSampler<'a> {
    model: &'a RecombinationModel,
    partitions: Vec<&'a Partition>,
    recomb: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl<'a> LppSampler<'a> {
    pub fn new(model: &'a RecombinationModel) -> Self {
        let entries = model.recombination().entries();
        let recomb = WeightedIndex::new(entries.iter().map(|(_, w)| *w)).expect("positive recombination weights");
        let m = model.migration();
        let rows = (0..m.rows())
            .map(|a| WeightedIndex::new(m.row(a).iter().copied()).expect("stochastic row"))
            .collect();
        LppSampler {
            model,
            partitions: entries.iter().map(|(p, _)| p).collect(),
            recomb,
            rows,
        }
    }

    pub fn model(&self) -> &RecombinationModel {
        self.model
    }

    /// One LPP transition.
    pub fn step<R: Rng + ?Sized>(&self, state: &LabelledPartition, rng: &mut R) -> LabelledPartition {
        let mut pairs = Vec::with_capacity(self.model.num_sites());
        for (d, lam) in state.blocks() {
            let row = &self.rows[lam];
            if d.len() == 1 {
                pairs.push((d, row.sample(rng)));
                continue;
            }
            let delta = self.partitions[self.recomb.sample(rng)];
            for e in delta.blocks() {
                let piece = e.intersection(d);
                if !piece.is_empty() {
                    pairs.push((piece, row.sample(rng)));
                }
            }
        }
        LabelledPartition::from_blocks(pairs).expect("blocks partition the base")
    }
}

/// One LPP transition from `state`.
pub fn lpp_step<R: Rng + ?Sized>(state: &LabelledPartition, model: &RecombinationModel, rng: &mut R) -> LabelledPartition {
    LppSampler::new(model).step(state, rng)
}

/// A sampled path `Σ_0, .., Σ_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LppTrajectory {
    pub states: Vec<LabelledPartition>,
    /// First generation whose base is the all-singleton partition.
    pub absorption_time: Option<u64>,
}

impl LppTrajectory {
    /// `(t, state)` at time 0 and at every generation where the base partition splits.
    pub fn split_events(&self) -> Vec<(u64, &LabelledPartition)> {
        let mut out = Vec::new();
        for (t, s) in self.states.iter().enumerate() {
            if t == 0 || s.base() != self.states[t - 1].base() {
                out.push((t as u64, s));
            }
        }
        out
    }
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

fn check_start(start: &LabelledPartition, model: &RecombinationModel) -> Result<()> {
    if start.base_set() != model.full_set() {
        return Err(Error::BaseMismatch(start.base_set().to_string(), model.full_set().to_string()));
    }
    start.check_labels(model.num_locations())
}

/// `replicates` independent trajectories of length `t` from `start`.
pub fn simulate(
    start: &LabelledPartition,
    model: &RecombinationModel,
    t: u64,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<LppTrajectory>> {
    check_start(start, model)?;
    if replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate required".into()));
    }
    let sampler = LppSampler::new(model);
    Ok(map_indices(exec, replicates, |k| {
        let mut rng = replicate_rng(seed, k as u64);
        let mut states = Vec::with_capacity(t as usize + 1);
        states.push(start.clone());
        let mut absorption_time = start.base().is_finest().then_some(0);
        for s in 1..=t {
            let next = sampler.step(states.last().unwrap(), &mut rng);
            if absorption_time.is_none() && next.base().is_finest() {
                absorption_time = Some(s);
            }
            states.push(next);
        }
        LppTrajectory { states, absorption_time }
    }))
}

/// `Σ_t` only, without storing the path.
fn sample_endpoint(sampler: &LppSampler, start: &LabelledPartition, t: u64, rng: &mut ChaCha8Rng) -> LabelledPartition {
    let mut state = start.clone();
    for _ in 0..t {
        state = sampler.step(&state, rng);
    }
    state
}

/// Monte Carlo mean with entrywise standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub mean: Distribution,
    pub stderr: Vec<f64>,
    pub replicates: usize,
}

/// `μ_t(α) ≈ mean of R_{Σ_t}(μ_0)` over LPP replicates started at `1^α`.
pub fn duality_estimate(
    alpha: usize,
    t: u64,
    mu0: &Metapopulation,
    model: &RecombinationModel,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<Estimate> {
    model.check_population(mu0, model.full_set())?;
    if alpha >= model.num_locations() {
        return Err(Error::InvalidArgument(format!("location {alpha} out of range")));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate required".into()));
    }
    let start = LabelledPartition::coarsest(model.full_set(), alpha)?;
    let sampler = LppSampler::new(model);
    let len = mu0.get(0).len();
    let chunks = replicates.div_ceil(CHUNK);
    // each chunk returns [Σ x, Σ x²]
    let parts = map_indices(exec, chunks, |c| {
        let mut cache = MarginalCache::new(mu0);
        let mut acc = vec![0.0; 2 * len];
        for k in c * CHUNK..((c + 1) * CHUNK).min(replicates) {
            let mut rng = replicate_rng(seed, k as u64);
            let end = sample_endpoint(&sampler, &start, t, &mut rng);
            let rec = cache.recombinator(&end);
            let (sum, sq) = acc.split_at_mut(len);
            for ((s, q), x) in sum.iter_mut().zip(sq.iter_mut()).zip(rec.weights()) {
                *s += x;
                *q += x * x;
            }
        }
        acc
    });
    let total = pairwise_sum(parts);
    let n = replicates as f64;
    let mean: Vec<f64> = total[..len].iter().map(|s| s / n).collect();
    let stderr = total[len..]
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            if replicates < 2 {
                return 0.0;
            }
            let var = ((q / n - m * m) * n / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    let template = mu0.get(0);
    Ok(Estimate {
        mean: Distribution::from_parts(template.support(), template.radices().to_vec(), mean),
        stderr,
        replicates,
    })
}

/// Exact two-site solution by conditioning on the first separation time.
pub fn two_site_closed_form(alpha: usize, t: u64, mu0: &Metapopulation, model: &RecombinationModel) -> Result<Distribution> {
    if model.num_sites() != 2 {
        return Err(Error::NotTwoSites(model.num_sites()));
    }
    model.check_population(mu0, model.full_set())?;
    let l = model.num_locations();
    if alpha >= l {
        return Err(Error::InvalidArgument(format!("location {alpha} out of range")));
    }
    let full = model.full_set();
    let r_max = model.recombination().get(&Partition::coarsest(full)?);
    let r_min = model.recombination().get(&Partition::finest(full)?);
    let m = model.migration();
    // pops[k] = M^k μ_0, rows[k] = row α of M^k
    let mut pops = vec![mu0.clone()];
    let mut rows = vec![(0..l).map(|b| if b == alpha { 1.0 } else { 0.0 }).collect::<Vec<f64>>()];
    for _ in 0..t {
        pops.push(crate::forward::migrate(pops.last().unwrap(), m)?);
        rows.push(m.vecmul(rows.last().unwrap()));
    }
    let s1 = SiteSet::singleton(0)?;
    let s2 = SiteSet::singleton(1)?;
    let len = mu0.get(0).len();
    let mut w: Vec<f64> = pops[t as usize].get(alpha).weights().iter().map(|x| r_max.powi(t as i32) * x).collect();
    for sigma in 1..=t {
        let coeff = r_max.powi(sigma as i32 - 1) * r_min;
        if coeff == 0.0 {
            continue;
        }
        let pop = &pops[(t - sigma + 1) as usize];
        let row = &rows[(sigma - 1) as usize];
        let mut acc = vec![0.0; len];
        for (g, weight) in row.iter().enumerate() {
            if *weight == 0.0 {
                continue;
            }
            let nu = pop.get(g);
            let prod = tensor(&[&nu.marginalise(s1)?, &nu.marginalise(s2)?])?;
            acc.iter_mut().zip(prod.weights()).for_each(|(a, x)| *a += weight * x);
        }
        w.iter_mut().zip(&acc).for_each(|(x, a)| *x += coeff * a);
    }
    let template = mu0.get(0);
    Ok(Distribution::from_parts(template.support(), template.radices().to_vec(), w))
}

/// Empirical law of `Σ_t` over an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateFrequency {
    pub t: u64,
    pub state: LabelledPartition,
    pub probability: f64,
    pub stderr: f64,
}

pub fn summarise(ensemble: &[LppTrajectory], t: u64) -> Result<Vec<StateFrequency>> {
    let n = ensemble.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let mut counts = std::collections::BTreeMap::new();
    for traj in ensemble {
        let s = traj
            .states
            .get(t as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("trajectory shorter than {t}")))?;
        *counts.entry(s.clone()).or_insert(0usize) += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(state, c)| {
            let p = c as f64 / n as f64;
            StateFrequency {
                t,
                state,
                probability: p,
                stderr: (p * (1.0 - p) / n as f64).sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::iterate;
    use crate::linear::{build_t, build_tul};
    use crate::matrix::DenseMatrix;
    use crate::measure::TypeSpace;
    use crate::random::{random_metapopulation, random_model};

    #[test]
    fn singleton_blocks_only_relabel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 1, 3, None);
        let start = LabelledPartition::coarsest(model.full_set(), 1).unwrap();
        let sampler = LppSampler::new(&model);
        let mut counts = [0usize; 3];
        let n = 200_000;
        for _ in 0..n {
            let next = sampler.step(&start, &mut rng);
            assert_eq!(next.base(), start.base());
            counts[next.labels()[0]] += 1;
        }
        for (g, c) in counts.iter().enumerate() {
            let p = model.migration()[(1, g)];
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn identity_migration_keeps_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = random_model(&mut rng, 3, 2, None);
        let model = RecombinationModel::with_default_names(
            base.type_space().clone(),
            base.recombination().entries().to_vec(),
            DenseMatrix::identity(2),
        )
        .unwrap();
        let start = LabelledPartition::coarsest(model.full_set(), 1).unwrap();
        for traj in simulate(&start, &model, 10, 50, 3, Execution::Sequential).unwrap() {
            assert!(traj.states.iter().all(|s| s.labels().iter().all(|&l| l == 1)));
        }
    }

    #[test]
    fn trajectories_refine_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 4, 2, None);
        let start = LabelledPartition::coarsest(model.full_set(), 0).unwrap();
        for traj in simulate(&start, &model, 30, 100, 7, Execution::Parallel).unwrap() {
            for w in traj.states.windows(2) {
                assert!(w[1].is_finer_than(&w[0]).unwrap());
            }
            if let Some(tau) = traj.absorption_time {
                assert!(traj.states[tau as usize].base().is_finest());
                assert!(traj.states[..tau as usize].iter().all(|s| !s.base().is_finest()));
            } else {
                assert!(traj.states.iter().all(|s| !s.base().is_finest()));
            }
            let events = traj.split_events();
            assert_eq!(events[0].0, 0);
            assert!(events.len() <= 4);
        }
    }

    #[test]
    fn reproducible_and_schedule_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&mut rng, 3, 2, None);
        let start = LabelledPartition::coarsest(model.full_set(), 0).unwrap();
        let a = simulate(&start, &model, 8, 64, 99, Execution::Sequential).unwrap();
        let b = simulate(&start, &model, 8, 64, 99, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let c = simulate(&start, &model, 8, 64, 100, Execution::Sequential).unwrap();
        assert_ne!(a, c);
        let mu = random_metapopulation(&mut rng, model.type_space(), 2);
        let e1 = duality_estimate(1, 4, &mu, &model, 3000, 5, Execution::Sequential).unwrap();
        let e2 = duality_estimate(1, 4, &mu, &model, 3000, 5, Execution::Parallel).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn one_step_law_matches_t_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 3, 2, None);
        let sys = build_t(&model);
        let start = LabelledPartition::coarsest(model.full_set(), 0).unwrap();
        let n = 100_000;
        let ens = simulate(&start, &model, 1, n, 11, Execution::Parallel).unwrap();
        let freq = summarise(&ens, 1).unwrap();
        for s in sys.states() {
            let p = sys.t_entry(&start, s);
            let emp = freq.iter().find(|f| &f.state == s).map_or(0.0, |f| f.probability);
            if p == 0.0 {
                assert_eq!(emp, 0.0);
            } else {
                let sd = (p * (1.0 - p) / n as f64).sqrt();
                assert!((emp - p).abs() < 5.0 * sd + 1e-12, "{s}: {emp} vs {p}");
            }
        }
    }

    #[test]
    fn survival_matches_tul_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = random_model(&mut rng, 3, 2, None);
        let (parts, tul) = build_tul(&model);
        let start = LabelledPartition::coarsest(model.full_set(), 0).unwrap();
        let n = 40_000;
        let t = 3;
        let ens = simulate(&start, &model, t, n, 12, Execution::Parallel).unwrap();
        let alive = ens.iter().filter(|tr| tr.absorption_time.is_none_or(|a| a > t)).count() as f64 / n as f64;
        let row = tul.pow(t, Execution::Sequential);
        let i0 = parts.iter().position(|p| p.is_coarsest()).unwrap();
        let fin = parts.iter().position(|p| p.is_finest()).unwrap();
        let exact = 1.0 - row[(i0, fin)];
        let sd = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((alive - exact).abs() < 4.0 * sd + 1e-12);
    }

    #[test]
    fn trivial_model_has_zero_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let space = TypeSpace::binary(2).unwrap();
        let model = RecombinationModel::with_default_names(
            space.clone(),
            vec![(Partition::coarsest(space.full_set()).unwrap(), 1.0)],
            DenseMatrix::identity(2),
        )
        .unwrap();
        let mu = random_metapopulation(&mut rng, &space, 2);
        let e = duality_estimate(1, 6, &mu, &model, 500, 1, Execution::default()).unwrap();
        assert!(e.mean.max_abs_diff(mu.get(1)) < 1e-14);
        assert!(e.stderr.iter().all(|s| *s < 1e-9));
    }

    #[test]
    fn closed_form_matches_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for l in 1..=3 {
            let model = random_model(&mut rng, 2, l, None);
            let mu = random_metapopulation(&mut rng, model.type_space(), l);
            let traj = iterate(&mu, &model, 10).unwrap();
            for (t, mu_t) in traj.iter().enumerate() {
                for a in 0..l {
                    let cf = two_site_closed_form(a, t as u64, &mu, &model).unwrap();
                    assert!(cf.max_abs_diff(mu_t.get(a)) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn closed_form_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = random_model(&mut rng, 2, 2, None);
        let full = base.full_set();
        let model = RecombinationModel::with_default_names(
            base.type_space().clone(),
            vec![(Partition::coarsest(full).unwrap(), 1.0)],
            base.migration().clone(),
        )
        .unwrap();
        let mu = random_metapopulation(&mut rng, model.type_space(), 2);
        let mut pop = mu.clone();
        for t in 0..5 {
            let cf = two_site_closed_form(0, t, &mu, &model).unwrap();
            assert!(cf.max_abs_diff(pop.get(0)) < 1e-15);
            pop = crate::forward::migrate(&pop, model.migration()).unwrap();
        }
        assert_eq!(two_site_closed_form(1, 0, &mu, &base).unwrap(), *mu.get(1));
        let three = random_model(&mut rng, 3, 2, None);
        let mu3 = random_metapopulation(&mut rng, three.type_space(), 2);
        assert_eq!(two_site_closed_form(0, 1, &mu3, &three), Err(Error::NotTwoSites(3)));
    }

    #[test]
    fn duality_estimate_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = random_model(&mut rng, 3, 2, None);
        let mu = random_metapopulation(&mut rng, model.type_space(), 2);
        let exact = iterate(&mu, &model, 4).unwrap().pop().unwrap();
        let est = duality_estimate(0, 4, &mu, &model, 20_000, 3, Execution::Parallel).unwrap();
        for ((m, s), x) in est.mean.weights().iter().zip(&est.stderr).zip(exact.get(0).weights()) {
            assert!((m - x).abs() < 4.0 * s.max(1e-6));
        }
    }

    #[test]
    fn summary_serialises() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = random_model(&mut rng, 2, 2, None);
        let start = LabelledPartition::coarsest(model.full_set(), 0).unwrap();
        let ens = simulate(&start, &model, 2, 10, 1, Execution::Sequential).unwrap();
        let s = summarise(&ens, 2).unwrap();
        assert!((s.iter().map(|f| f.probability).sum::<f64>() - 1.0).abs() < 1e-12);
        let json = serde_json::to_string(&s[0]).unwrap();
        assert!(json.contains("\"state\":[{\"sites\":"));
        assert!(summarise(&ens, 3).is_err());
    }
}
