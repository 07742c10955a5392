//! Random models and populations for property tests and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::continuous::CtModel;
use crate::forward::RecombinationModel;
use crate::matrix::DenseMatrix;
use crate::measure::{Distribution, Metapopulation, TypeSpace};
use crate::partition::{enumerate_partitions, Partition};

/// Probability vector of length `n`, all entries positive.
pub fn random_probability_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = raw.iter().sum();
    let mut v: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // push the rounding residue into the largest entry
    let residue = 1.0 - v.iter().sum::<f64>();
    let (k, _) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    v[k] += residue;
    v
}

/// Strictly positive row-stochastic `l x l` matrix.
pub fn random_stochastic<R: Rng + ?Sized>(rng: &mut R, l: usize) -> DenseMatrix {
    let rows: Vec<Vec<f64>> = (0..l).map(|_| random_probability_vector(rng, l)).collect();
    DenseMatrix::from_rows(&rows).expect("square")
}

/// Binary model on `n` sites and `l` locations with positive migration.
///
/// `support` bounds how many partitions receive positive recombination
/// probability; the finest partition is always among them.
pub fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    l: usize,
    support: Option<usize>,
) -> RecombinationModel {
    let space = TypeSpace::binary(n).expect("valid site count");
    let full = space.full_set();
    let mut all = enumerate_partitions(full).expect("non-empty");
    let finest = Partition::finest(full).expect("non-empty");
    all.retain(|p| *p != finest);
    all.shuffle(rng);
    let k = support.unwrap_or(all.len() + 1).clamp(1, all.len() + 1);
    let mut chosen: Vec<Partition> = all.into_iter().take(k - 1).collect();
    chosen.push(finest);
    let probs = random_probability_vector(rng, chosen.len());
    RecombinationModel::with_default_names(
        space,
        chosen.into_iter().zip(probs).collect(),
        random_stochastic(rng, l),
    )
    .expect("valid random model")
}

/// Markov generator with off-diagonal rates in `[0, 1)`.
pub fn random_generator<R: Rng + ?Sized>(rng: &mut R, l: usize) -> DenseMatrix {
    let mut n = DenseMatrix::zeros(l, l);
    for a in 0..l {
        let mut total = 0.0;
        for b in (0..l).filter(|&b| b != a) {
            let r = rng.random::<f64>();
            n[(a, b)] = r;
            total += r;
        }
        n[(a, a)] = -total;
    }
    n
}

/// Binary continuous-time model: random rates on a few partitions (always including
/// the finest) and a random generator.
pub fn random_ct_model<R: Rng + ?Sized>(rng: &mut R, n: usize, l: usize) -> CtModel {
    let space = TypeSpace::binary(n).expect("valid site count");
    let full = space.full_set();
    let mut all = enumerate_partitions(full).expect("non-empty");
    let finest = Partition::finest(full).expect("non-empty");
    all.retain(|p| *p != finest && !p.is_coarsest());
    all.shuffle(rng);
    let k = rng.random_range(0..=all.len().min(3));
    let mut rates: Vec<(Partition, f64)> = all.into_iter().take(k).map(|p| (p, rng.random::<f64>())).collect();
    rates.push((finest, 0.2 + rng.random::<f64>()));
    CtModel::with_default_names(space, rates, random_generator(rng, l)).expect("valid random model")
}

/// Random distribution on all sites of `space`.
pub fn random_distribution<R: Rng + ?Sized>(rng: &mut R, space: &TypeSpace) -> Distribution {
    let full = space.full_set();
    let w = random_probability_vector(rng, space.cardinality(full));
    Distribution::new(space, full, w).expect("normalised")
}

/// Independent random distributions at `l` locations.
pub fn random_metapopulation<R: Rng + ?Sized>(rng: &mut R, space: &TypeSpace, l: usize) -> Metapopulation {
    Metapopulation::new((0..l).map(|_| random_distribution(rng, space)).collect()).expect("common support")
}
