//! Linearisation over labelled partitions.
//!
//! The vector of recombinators `R(μ_t)` evolves linearly, `R(μ_{t+1}) = T R(μ_t)`,
//! with `T` a stochastic matrix on labelled partitions. `T` is stored dense over
//! the states reachable from the chosen start states.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use crate::error::{Error, Result};
use crate::exec::{map_indices, Execution};
use crate::forward::RecombinationModel;
use crate::matrix::DenseMatrix;
use crate::measure::{Distribution, MarginalCache, Metapopulation};
use crate::partition::{label_vectors, LabelledPartition, Partition, SiteSet};

type BlockOptions = Vec<(Vec<(SiteSet, usize)>, f64)>;

/// One-step successor laws of labelled and unlabelled partitions.
pub(crate) struct Kernel {
    marginals: HashMap<SiteSet, Vec<(Partition, f64)>>,
    labelled: HashMap<(SiteSet, usize), BlockOptions>,
}

impl Kernel {
    pub(crate) fn new(model: &RecombinationModel) -> Self {
        let marginals = model.recombination().block_marginals();
        let m = model.migration();
        let l = model.num_locations();
        let mut labelled = HashMap::new();
        for (d, marg) in &marginals {
            for lam in 0..l {
                let mut opts = Vec::new();
                for (eps, r) in marg {
                    for labels in label_vectors(eps.len(), l) {
                        let p = labels.iter().fold(*r, |acc, &g| acc * m[(lam, g)]);
                        if p > 0.0 {
                            opts.push((eps.blocks().iter().copied().zip(labels).collect(), p));
                        }
                    }
                }
                labelled.insert((*d, lam), opts);
            }
        }
        Kernel { marginals, labelled }
    }

    /// `bε ↦ T_{bδ,bε}` for all `bε` with positive probability.
    pub(crate) fn labelled_successors(&self, state: &LabelledPartition) -> Vec<(LabelledPartition, f64)> {
        let options: Vec<&BlockOptions> = state.blocks().map(|key| &self.labelled[&key]).collect();
        let mut out = Vec::new();
        product_walk(&options, &mut Vec::new(), 1.0, &mut |pairs, p| {
            out.push((LabelledPartition::from_blocks(pairs.to_vec()).expect("disjoint blocks"), p));
        });
        out
    }

    /// `ε ↦ Tul_{δε}` for all `ε` with positive probability.
    pub(crate) fn unlabelled_successors(&self, delta: &Partition) -> Vec<(Partition, f64)> {
        let options: Vec<BlockOptions> = delta
            .blocks()
            .iter()
            .map(|d| {
                self.marginals[d]
                    .iter()
                    .map(|(eps, r)| (eps.blocks().iter().map(|b| (*b, 0)).collect(), *r))
                    .collect()
            })
            .collect();
        let refs: Vec<&BlockOptions> = options.iter().collect();
        let mut out = Vec::new();
        product_walk(&refs, &mut Vec::new(), 1.0, &mut |pairs, p| {
            let blocks = pairs.iter().map(|(b, _)| *b).collect();
            out.push((Partition::new(blocks).expect("disjoint blocks"), p));
        });
        out
    }
}

fn product_walk(
    options: &[&BlockOptions],
    acc: &mut Vec<(SiteSet, usize)>,
    p: f64,
    emit: &mut dyn FnMut(&[(SiteSet, usize)], f64),
) {
    match options.split_first() {
        None => emit(acc, p),
        Some((first, rest)) => {
            for (pairs, q) in first.iter() {
                let mark = acc.len();
                acc.extend_from_slice(pairs);
                product_walk(rest, acc, p * q, emit);
                acc.truncate(mark);
            }
        }
    }
}

// Level-synchronous closure; successor lists of each level are computed under `exec`.
pub(crate) fn closure<S, F>(starts: Vec<S>, exec: Execution, succ: F) -> (Vec<S>, HashMap<S, Vec<(S, f64)>>)
where
    S: Clone + Eq + std::hash::Hash + Ord + Send + Sync,
    F: Fn(&S) -> Vec<(S, f64)> + Send + Sync,
{
    let mut seen: HashSet<S> = starts.iter().cloned().collect();
    let mut frontier: Vec<S> = seen.iter().cloned().collect();
    frontier.sort();
    let mut rows = HashMap::new();
    while !frontier.is_empty() {
        let lists = map_indices(exec, frontier.len(), |i| succ(&frontier[i]));
        let mut next = Vec::new();
        for (s, list) in frontier.into_iter().zip(lists) {
            for (e, _) in &list {
                if seen.insert(e.clone()) {
                    next.push(e.clone());
                }
            }
            rows.insert(s, list);
        }
        next.sort();
        frontier = next;
    }
    let mut states: Vec<S> = seen.into_iter().collect();
    states.sort();
    (states, rows)
}

fn dense_from_rows<S: Eq + std::hash::Hash + Sync>(
    states: &[S],
    index: &HashMap<S, usize>,
    rows: &HashMap<S, Vec<(S, f64)>>,
    exec: Execution,
) -> DenseMatrix {
    let n = states.len();
    let mut t = DenseMatrix::zeros(n, n);
    if n == 0 {
        return t;
    }
    let data: Vec<Vec<f64>> = map_indices(exec, n, |i| {
        let mut row = vec![0.0; n];
        for (e, p) in &rows[&states[i]] {
            row[index[e]] += p;
        }
        row
    });
    for (i, row) in data.into_iter().enumerate() {
        t.row_mut(i).copy_from_slice(&row);
    }
    t
}

/// `T` on reachable labelled partitions and `Tul` on reachable partitions.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    states: Vec<LabelledPartition>,
    index: HashMap<LabelledPartition, usize>,
    t: DenseMatrix,
    partitions: Vec<Partition>,
    ul_index: HashMap<Partition, usize>,
    tul: DenseMatrix,
    locations: Vec<String>,
    support: SiteSet,
}

/// `T` and `Tul` reachable from the single-block states `1^α`.
pub fn build_t(model: &RecombinationModel) -> LinearSystem {
    build_t_with(model, Execution::default())
}

pub fn build_t_with(model: &RecombinationModel, exec: Execution) -> LinearSystem {
    let full = model.full_set();
    let starts = (0..model.num_locations())
        .map(|a| LabelledPartition::coarsest(full, a).expect("non-empty"))
        .collect();
    build_t_from(model, starts, exec).expect("valid start states")
}

/// `T` on the closure of `starts` under one-step transitions.
pub fn build_t_from(
    model: &RecombinationModel,
    starts: Vec<LabelledPartition>,
    exec: Execution,
) -> Result<LinearSystem> {
    let full = model.full_set();
    for s in &starts {
        if s.base_set() != full {
            return Err(Error::BaseMismatch(s.base_set().to_string(), full.to_string()));
        }
        s.check_labels(model.num_locations())?;
    }
    let kernel = Kernel::new(model);
    let (states, rows) = closure(starts, exec, |s| kernel.labelled_successors(s));
    let index: HashMap<_, _> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let t = dense_from_rows(&states, &index, &rows, exec);

    let (partitions, ul_rows) = closure(
        vec![Partition::coarsest(full).expect("non-empty")],
        exec,
        |d| kernel.unlabelled_successors(d),
    );
    let ul_index: HashMap<_, _> = partitions.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let tul = dense_from_rows(&partitions, &ul_index, &ul_rows, exec);
    Ok(LinearSystem {
        states,
        index,
        t,
        partitions,
        ul_index,
        tul,
        locations: model.locations().to_vec(),
        support: full,
    })
}

/// `Tul` alone, on partitions reachable from the coarsest one.
pub fn build_tul(model: &RecombinationModel) -> (Vec<Partition>, DenseMatrix) {
    let kernel = Kernel::new(model);
    let full = model.full_set();
    let exec = Execution::default();
    let (partitions, rows) = closure(vec![Partition::coarsest(full).expect("non-empty")], exec, |d| {
        kernel.unlabelled_successors(d)
    });
    let index: HashMap<_, _> = partitions.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let tul = dense_from_rows(&partitions, &index, &rows, exec);
    (partitions, tul)
}

impl LinearSystem {
    /// Labelled states in canonical order (coarser partitions first).
    pub fn states(&self) -> &[LabelledPartition] {
        &self.states
    }

    pub fn index_of(&self, state: &LabelledPartition) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn t(&self) -> &DenseMatrix {
        &self.t
    }

    /// Unlabelled states in canonical order.
    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn partition_index(&self, p: &Partition) -> Option<usize> {
        self.ul_index.get(p).copied()
    }

    pub fn tul(&self) -> &DenseMatrix {
        &self.tul
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    /// `T_{bδ,bε}`, zero for unreachable states.
    pub fn t_entry(&self, from: &LabelledPartition, to: &LabelledPartition) -> f64 {
        match (self.index_of(from), self.index_of(to)) {
            (Some(i), Some(j)) => self.t[(i, j)],
            _ => 0.0,
        }
    }

    pub fn tul_entry(&self, from: &Partition, to: &Partition) -> f64 {
        match (self.partition_index(from), self.partition_index(to)) {
            (Some(i), Some(j)) => self.tul[(i, j)],
            _ => 0.0,
        }
    }

    /// `R(μ)` over the system's states.
    pub fn build_r(&self, mu: &Metapopulation) -> Result<RecombinatorVector> {
        if mu.support() != self.support {
            return Err(Error::BaseMismatch(mu.support().to_string(), self.support.to_string()));
        }
        if mu.num_locations() != self.locations.len() {
            return Err(Error::Dimension(format!(
                "{} locations in the population, {} in the system",
                mu.num_locations(),
                self.locations.len()
            )));
        }
        let mut cache = MarginalCache::new(mu);
        let entries = self.states.iter().map(|s| cache.recombinator(s)).collect();
        Ok(RecombinatorVector {
            states: self.states.clone(),
            entries,
        })
    }

    /// `T^t R` as a recombinator vector.
    pub fn propagate(&self, r: &RecombinatorVector, t: u64, exec: Execution) -> Result<RecombinatorVector> {
        if r.states != self.states {
            return Err(Error::Dimension("recombinator vector indexed by different states".into()));
        }
        let stacked = r.stacked();
        let out = self.t.pow(t, exec).matmul(&stacked, exec);
        Ok(r.with_stacked(&out))
    }

    /// `μ_t` read off the `1^α` components of `T^t R(μ_0)`.
    pub fn solve(&self, mu0: &Metapopulation, t: u64, exec: Execution) -> Result<Metapopulation> {
        let r0 = self.build_r(mu0)?;
        let stacked = r0.stacked();
        let tp = self.t.pow(t, exec);
        let template = mu0.get(0);
        let out = (0..self.locations.len())
            .map(|a| {
                let key = LabelledPartition::coarsest(self.support, a).expect("non-empty");
                let i = self
                    .index_of(&key)
                    .ok_or_else(|| Error::InvalidArgument(format!("state {key} not in the system")))?;
                Ok(Distribution::from_parts(
                    template.support(),
                    template.radices().to_vec(),
                    stacked.vecmul(tp.row(i)),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Metapopulation::from_parts(out))
    }

    /// Writes the non-zero entries of `T` as `row,column,value` CSV.
    pub fn write_t_csv<W: Write>(&self, out: W) -> Result<()> {
        let labels: Vec<String> = self.states.iter().map(|s| s.display_with(&self.locations)).collect();
        write_matrix_csv(out, &labels, &self.t)
    }

    /// Writes the non-zero entries of `Tul` as `row,column,value` CSV.
    pub fn write_tul_csv<W: Write>(&self, out: W) -> Result<()> {
        let labels: Vec<String> = self.partitions.iter().map(|p| p.to_string()).collect();
        write_matrix_csv(out, &labels, &self.tul)
    }
}

fn write_matrix_csv<W: Write>(out: W, labels: &[String], m: &DenseMatrix) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidArgument(format!("csv output: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "column", "value"]).map_err(io)?;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let v = m[(i, j)];
            if v != 0.0 {
                w.write_record([labels[i].as_str(), labels[j].as_str(), &format!("{v:.17e}")])
                    .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("csv output: {e}")))?;
    Ok(())
}

/// `R(μ)`: one distribution per labelled partition.
#[derive(Clone, Debug, PartialEq)]
pub struct RecombinatorVector {
    states: Vec<LabelledPartition>,
    entries: Vec<Distribution>,
}

impl RecombinatorVector {
    pub fn states(&self) -> &[LabelledPartition] {
        &self.states
    }

    pub fn entries(&self) -> &[Distribution] {
        &self.entries
    }

    pub fn get(&self, state: &LabelledPartition) -> Option<&Distribution> {
        self.states.iter().position(|s| s == state).map(|i| &self.entries[i])
    }

    /// Entries stacked as rows of a `states x |A|` matrix.
    pub fn stacked(&self) -> DenseMatrix {
        let cols = self.entries.first().map_or(0, |d| d.len());
        let data = self.entries.iter().flat_map(|d| d.weights().iter().copied()).collect();
        DenseMatrix::from_vec(self.entries.len(), cols, data).expect("equal lengths")
    }

    fn with_stacked(&self, m: &DenseMatrix) -> RecombinatorVector {
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, d)| Distribution::from_parts(d.support(), d.radices().to_vec(), m.row(i).to_vec()))
            .collect();
        RecombinatorVector {
            states: self.states.clone(),
            entries,
        }
    }
}

/// `μ_t` via `T^t`, building `T` from the model.
pub fn solve_linear(mu0: &Metapopulation, model: &RecombinationModel, t: u64) -> Result<Metapopulation> {
    model.check_population(mu0, model.full_set())?;
    let exec = Execution::default();
    build_t_with(model, exec).solve(mu0, t, exec)
}
