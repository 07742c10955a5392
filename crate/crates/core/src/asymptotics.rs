//! Long-time behaviour: stationary migration profile, the limit `μ_∞`,
//! absorption tails and the quasi-limiting distribution of the partitioning process.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forward::RecombinationModel;
use crate::linear::{build_t_from, build_tul};
use crate::matrix::DenseMatrix;
use crate::measure::{tensor, Distribution, Metapopulation};
use crate::partition::{label_vectors, LabelledPartition, Partition, SiteSet};

/// Residual tolerance for `qᵀ = qᵀM`.
pub const STATIONARY_TOL: f64 = 1e-12;
/// Errors below this are treated as rounding noise when fitting decay rates.
pub const NOISE_FLOOR: f64 = 1e-13;

/// Stationary distribution of a primitive migration matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationaryProfile {
    pub q: Vec<f64>,
    /// Smallest `k` with `M^k > 0` entrywise.
    pub primitivity_certificate: usize,
}

fn bool_mul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).any(|k| a[i][k] && b[k][j])).collect())
        .collect()
}

/// Smallest `k ≤ (L−1)²+1` with `M^k > 0`, or why none exists.
pub fn primitivity(m: &DenseMatrix) -> Result<usize> {
    let l = m.rows();
    let pattern: Vec<Vec<bool>> = (0..l).map(|i| m.row(i).iter().map(|x| *x > 0.0).collect()).collect();
    let bound = (l - 1) * (l - 1) + 1;
    let mut power = pattern.clone();
    for k in 1..=bound {
        if power.iter().all(|row| row.iter().all(|x| *x)) {
            return Ok(k);
        }
        power = bool_mul(&power, &pattern);
    }
    // transitive closure decides irreducibility
    let mut reach = pattern.clone();
    for _ in 0..l {
        let next = bool_mul(&reach, &pattern);
        for i in 0..l {
            for j in 0..l {
                reach[i][j] = reach[i][j] || next[i][j];
            }
        }
    }
    if reach.iter().all(|row| row.iter().all(|x| *x)) {
        Err(Error::NotPrimitive("migration matrix is irreducible but periodic".into()))
    } else {
        Err(Error::NotPrimitive("migration matrix is reducible".into()))
    }
}

/// `qᵀ = qᵀM`, `Σ q = 1`, for primitive `M`.
pub fn stationary_q(m: &DenseMatrix) -> Result<StationaryProfile> {
    m.check_stochastic(1e-12)?;
    let primitivity_certificate = primitivity(m)?;
    let l = m.rows();
    // (Mᵀ − I) q = 0 with the last equation replaced by Σ q = 1
    let mut a = m.transpose();
    for i in 0..l {
        a[(i, i)] -= 1.0;
    }
    for j in 0..l {
        a[(l - 1, j)] = 1.0;
    }
    let mut rhs = DenseMatrix::zeros(l, 1);
    rhs[(l - 1, 0)] = 1.0;
    let q: Vec<f64> = a.solve(&rhs)?.as_slice().to_vec();
    let back = m.vecmul(&q);
    let residual = q.iter().zip(&back).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if residual > STATIONARY_TOL || q.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::NotPrimitive(format!("stationary solve failed (residual {residual:e})")));
    }
    Ok(StationaryProfile {
        q,
        primitivity_certificate,
    })
}

fn check_separation(model: &RecombinationModel) -> Result<()> {
    let meet = model.recombination().support_meet().expect("non-empty support");
    if !meet.is_finest() {
        return Err(Error::SitesNeverSeparated(meet.to_string()));
    }
    Ok(())
}

/// `⊗_i Σ_β q(β) μ_0^{i}(β)`, the same at every location.
pub fn mu_infinity(mu0: &Metapopulation, model: &RecombinationModel) -> Result<Metapopulation> {
    model.check_population(mu0, model.full_set())?;
    check_separation(model)?;
    let q = stationary_q(model.migration())?.q;
    let mut factors = Vec::with_capacity(model.num_sites());
    for i in model.full_set() {
        let s = SiteSet::singleton(i)?;
        let marginals = mu0
            .locations()
            .iter()
            .map(|nu| nu.marginalise(s))
            .collect::<Result<Vec<_>>>()?;
        let mut w = vec![0.0; marginals[0].len()];
        for (qb, m) in q.iter().zip(&marginals) {
            w.iter_mut().zip(m.weights()).for_each(|(x, y)| *x += qb * y);
        }
        factors.push(Distribution::from_parts(s, marginals[0].radices().to_vec(), w));
    }
    let limit = tensor(&factors.iter().collect::<Vec<_>>())?;
    Ok(Metapopulation::from_parts(vec![limit; model.num_locations()]))
}

/// Least-squares fit of `err_t ≈ C γ^t`, returning `γ`.
///
/// Uses points in the last half of `errors` (indexed by `t`) above [`NOISE_FLOOR`];
/// if fewer than three remain, the last half of all points above the floor.
pub fn fit_decay_rate(errors: &[f64]) -> Option<f64> {
    let usable = |from: usize| -> Vec<(f64, f64)> {
        errors
            .iter()
            .enumerate()
            .skip(from)
            .filter(|(_, e)| **e > NOISE_FLOOR)
            .map(|(t, e)| (t as f64, e.ln()))
            .collect()
    };
    let mut pts = usable(errors.len() / 2);
    if pts.len() < 3 {
        let all = usable(0);
        pts = all[all.len() / 2..].to_vec();
    }
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some((sxy / sxx).exp())
}

/// `‖μ_t − μ_∞‖_∞` for `t = 0..=t_max`.
pub fn limit_errors(mu0: &Metapopulation, model: &RecombinationModel, t_max: u64) -> Result<Vec<f64>> {
    let limit = mu_infinity(mu0, model)?;
    let mut mu = mu0.clone();
    let mut out = vec![mu.max_abs_diff(&limit)];
    for _ in 0..t_max {
        mu = crate::forward::step(&mu, model)?;
        out.push(mu.max_abs_diff(&limit));
    }
    Ok(out)
}

/// `P(τ > t)` for `t = 0..=t_max`, `τ` the absorption time in the all-singleton partition.
pub fn absorption_tail(model: &RecombinationModel, start: &Partition, t_max: u64) -> Result<Vec<f64>> {
    let (parts, tul) = build_tul(model);
    let i = parts
        .iter()
        .position(|p| p == start)
        .ok_or_else(|| Error::InvalidArgument(format!("{start} not reachable from the coarsest partition")))?;
    let fin = parts.iter().position(|p| p.is_finest()).expect("absorbing state reachable");
    let mut row = vec![0.0; parts.len()];
    row[i] = 1.0;
    // survival summed directly; 1 − P(absorbed) cancels to rounding noise
    let alive = |row: &[f64]| row.iter().enumerate().filter(|(j, _)| *j != fin).map(|(_, x)| x).sum::<f64>();
    let mut out = Vec::with_capacity(t_max as usize + 1);
    out.push(alive(&row));
    for _ in 0..t_max {
        row = tul.vecmul(&row);
        out.push(alive(&row));
    }
    Ok(out)
}

/// Quasi-limiting behaviour of the partitioning process.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QldReport {
    pub eta: f64,
    #[serde(rename = "F")]
    pub f: Vec<Partition>,
    #[serde(skip)]
    pub g: Vec<(Partition, f64)>,
    #[serde(rename = "P_qlim")]
    pub p_qlim: Vec<PartitionProbability>,
    pub labelled_qlim: Vec<LabelledProbability>,
    pub q: Vec<f64>,
    pub start: Partition,
    /// True when the start is not the coarsest partition; the convergence result holds for that start only.
    pub general_start: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionProbability {
    pub partition: Partition,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelledProbability {
    pub state: LabelledPartition,
    pub probability: f64,
}

impl QldReport {
    pub fn p_qlim_of(&self, delta: &Partition) -> f64 {
        self.p_qlim
            .iter()
            .find(|p| &p.partition == delta)
            .map_or(0.0, |p| p.probability)
    }

    pub fn labelled_qlim_of(&self, state: &LabelledPartition) -> f64 {
        self.labelled_qlim
            .iter()
            .find(|p| &p.state == state)
            .map_or(0.0, |p| p.probability)
    }
}

/// QLD from the coarsest partition.
pub fn qld(model: &RecombinationModel) -> Result<QldReport> {
    qld_from(model, &Partition::coarsest(model.full_set())?)
}

/// QLD from an arbitrary start partition.
pub fn qld_from(model: &RecombinationModel, start: &Partition) -> Result<QldReport> {
    let full = model.full_set();
    if start.base() != full {
        return Err(Error::BaseMismatch(start.base().to_string(), full.to_string()));
    }
    let finest = Partition::finest(full)?;
    if model.recombination().get(&finest) >= 1.0 || start.is_finest() {
        return Err(Error::QuasiLimitUndefined);
    }
    let q = stationary_q(model.migration())?.q;
    let (all, all_tul) = build_tul(model);
    // restrict to the states reachable from `start`
    let reach = reachable(&all, &all_tul, start)?;
    let parts: Vec<Partition> = reach.iter().map(|&i| all[i].clone()).collect();
    let k = parts.len();
    let mut tul = DenseMatrix::zeros(k, k);
    for (a, &i) in reach.iter().enumerate() {
        for (b, &j) in reach.iter().enumerate() {
            tul[(a, b)] = all_tul[(i, j)];
        }
    }
    let eta = (0..k)
        .filter(|&i| !parts[i].is_finest())
        .map(|i| tul[(i, i)])
        .fold(0.0, f64::max);
    if !(eta > 0.0) {
        return Err(Error::QuasiLimitUndefined);
    }
    let f_idx: Vec<usize> = (0..k).filter(|&i| !parts[i].is_finest() && tul[(i, i)] == eta).collect();
    let s = parts.iter().position(|p| p == start).expect("start is reachable");
    let mut g = Vec::with_capacity(f_idx.len());
    for &target in &f_idx {
        let h = hitting_expectations(&parts, &tul, eta, target)?;
        g.push((parts[target].clone(), h[s]));
    }
    let total: f64 = g.iter().map(|(_, x)| x).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DivergentExpectation(format!("normaliser {total}")));
    }
    let p_qlim: Vec<PartitionProbability> = g
        .iter()
        .map(|(p, x)| PartitionProbability {
            partition: p.clone(),
            probability: x / total,
        })
        .collect();
    let l = model.num_locations();
    let mut labelled_qlim = Vec::new();
    for pp in &p_qlim {
        for labels in label_vectors(pp.partition.len(), l) {
            let w: f64 = labels.iter().map(|&a| q[a]).product();
            labelled_qlim.push(LabelledProbability {
                state: LabelledPartition::new(pp.partition.clone(), labels)?,
                probability: w * pp.probability,
            });
        }
    }
    Ok(QldReport {
        eta,
        f: f_idx.iter().map(|&i| parts[i].clone()).collect(),
        g,
        p_qlim,
        labelled_qlim,
        q,
        start: start.clone(),
        general_start: !start.is_coarsest(),
    })
}

fn reachable(parts: &[Partition], tul: &DenseMatrix, start: &Partition) -> Result<Vec<usize>> {
    let s = parts
        .iter()
        .position(|p| p == start)
        .ok_or_else(|| Error::InvalidArgument(format!("{start} not reachable from the coarsest partition")))?;
    let mut seen = vec![false; parts.len()];
    let mut stack = vec![s];
    seen[s] = true;
    while let Some(i) = stack.pop() {
        for (j, v) in tul.row(i).iter().enumerate() {
            if *v > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    Ok((0..parts.len()).filter(|&i| seen[i]).collect())
}

/// `h(σ) = E_σ[η^{−τ_target}; τ_target < ∞]` by back-substitution, finest states first.
fn hitting_expectations(parts: &[Partition], tul: &DenseMatrix, eta: f64, target: usize) -> Result<Vec<f64>> {
    let k = parts.len();
    let mut h = vec![0.0; k];
    for s in (0..k).rev() {
        if s == target {
            h[s] = 1.0;
            continue;
        }
        if parts[s].is_finest() {
            continue;
        }
        let rhs: f64 = (0..k)
            .filter(|&e| e != s)
            .map(|e| tul[(s, e)] * h[e])
            .sum::<f64>()
            / eta;
        let pivot = 1.0 - tul[(s, s)] / eta;
        if pivot == 0.0 {
            if rhs != 0.0 {
                return Err(Error::DivergentExpectation(parts[s].to_string()));
            }
            continue;
        }
        h[s] = rhs / pivot;
    }
    Ok(h)
}

/// `max_{δ∈F} |Tul_δδ + Tul_{δ,0_min} − 1|`.
pub fn pre_absorption_defect(model: &RecombinationModel, report: &QldReport) -> f64 {
    let (parts, tul) = build_tul(model);
    let fin = parts.iter().position(|p| p.is_finest()).expect("absorbing state reachable");
    report
        .f
        .iter()
        .map(|d| {
            let i = parts.iter().position(|p| p == d).expect("F is reachable");
            (tul[(i, i)] + tul[(i, fin)] - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Exact `P(Σ_t = δ | τ > t)` from the coarsest partition, over non-absorbed partitions.
pub fn conditioned_unlabelled(model: &RecombinationModel, t: u64) -> Result<Vec<(Partition, f64)>> {
    let (parts, tul) = build_tul(model);
    let start = parts.iter().position(|p| p.is_coarsest()).expect("start");
    let alive: Vec<bool> = parts.iter().map(|p| !p.is_finest()).collect();
    let row = conditioned_row(&tul, start, &alive, t)?;
    Ok(parts.into_iter().zip(row).filter(|(p, _)| !p.is_finest()).collect())
}

/// Exact `P(bΣ_t = bδ | τ > t)` from `1^α`, over labelled states with non-absorbed base.
pub fn conditioned_distribution(
    model: &RecombinationModel,
    alpha: usize,
    t: u64,
) -> Result<Vec<(LabelledPartition, f64)>> {
    if alpha >= model.num_locations() {
        return Err(Error::InvalidArgument(format!("location {alpha} out of range")));
    }
    let start = LabelledPartition::coarsest(model.full_set(), alpha)?;
    let sys = build_t_from(model, vec![start.clone()], Execution::default())?;
    let i = sys.index_of(&start).expect("start state");
    let alive: Vec<bool> = sys.states().iter().map(|s| !s.base().is_finest()).collect();
    let row = conditioned_row(sys.t(), i, &alive, t)?;
    Ok(sys
        .states()
        .iter()
        .cloned()
        .zip(row)
        .filter(|(s, _)| !s.base().is_finest())
        .collect())
}

/// Row `start` of the `t`-th power restricted to `alive` and normalised.
///
/// Absorbed states never return, so their mass is dropped and the alive part rescaled
/// every step; survival probabilities like `η^t` underflow otherwise.
fn conditioned_row(m: &DenseMatrix, start: usize, alive: &[bool], t: u64) -> Result<Vec<f64>> {
    let mut row = vec![0.0; m.rows()];
    row[start] = 1.0;
    for s in 1..=t {
        row = m.vecmul(&row);
        for (x, &a) in row.iter_mut().zip(alive) {
            if !a {
                *x = 0.0;
            }
        }
        let total: f64 = row.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroProbabilityCondition(s));
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    if !alive[start] && t == 0 {
        return Err(Error::ZeroProbabilityCondition(0));
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::iterate;
    use crate::linear::build_t;
    use crate::measure::TypeSpace;
    use crate::random::{random_metapopulation, random_model, random_stochastic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn part(blocks: &[&[usize]]) -> Partition {
        Partition::from_one_based(&blocks.iter().map(|b| b.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn reference_model() -> RecombinationModel {
        let full = SiteSet::full(4).unwrap();
        RecombinationModel::with_default_names(
            TypeSpace::binary(4).unwrap(),
            vec![
                (Partition::finest(full).unwrap(), 0.5),
                (part(&[&[1, 2], &[3, 4]]), 0.1),
                (Partition::coarsest(full).unwrap(), 0.4),
            ],
            DenseMatrix::identity(1),
        )
        .unwrap()
    }

    #[test]
    fn stationary_examples() {
        let m = DenseMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let p = stationary_q(&m).unwrap();
        assert!((p.q[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((p.q[1] - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(p.primitivity_certificate, 1);
        let ds = DenseMatrix::from_rows(&[vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]]).unwrap();
        let p = stationary_q(&ds).unwrap();
        assert!(p.q.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-14));
        assert_eq!(p.primitivity_certificate, 2);
        let perm = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(stationary_q(&perm), Err(Error::NotPrimitive(s)) if s.contains("periodic")));
        let red = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(stationary_q(&red), Err(Error::NotPrimitive(s)) if s.contains("reducible")));
    }

    #[test]
    fn stationary_brute_force() {
        // oracle: rows of M^k for large k
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for l in 1..=4 {
            let m = random_stochastic(&mut rng, l);
            let p = stationary_q(&m).unwrap();
            let mk = m.pow(512, Execution::Sequential);
            for j in 0..l {
                assert!((mk[(0, j)] - p.q[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn limit_single_location_is_one_site_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng, 3, 1, None);
        let mu = random_metapopulation(&mut rng, model.type_space(), 1);
        let lim = mu_infinity(&mu, &model).unwrap();
        let nu = mu.get(0);
        for idx in 0..nu.len() {
            let letters = nu.letters_of(idx);
            let expected: f64 = (0..3)
                .map(|i| nu.marginalise(SiteSet::singleton(i).unwrap()).unwrap().weights()[letters[i]])
                .product();
            assert!((lim.get(0).weights()[idx] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn limit_is_fixed_point_and_attracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 2, 2, None);
        let mu = random_metapopulation(&mut rng, model.type_space(), 2);
        let lim = mu_infinity(&mu, &model).unwrap();
        assert!(mu_infinity(&lim, &model).unwrap().max_abs_diff(&lim) < 1e-15);
        let traj = iterate(&mu, &model, 200).unwrap();
        assert!(traj[200].max_abs_diff(&lim) < 1e-10);
        let errs = limit_errors(&mu, &model, 60).unwrap();
        assert!(fit_decay_rate(&errs).unwrap() < 1.0);
    }

    #[test]
    fn limit_requires_separation() {
        let space = TypeSpace::binary(3).unwrap();
        let model = RecombinationModel::with_default_names(
            space.clone(),
            vec![(part(&[&[1, 2], &[3]]), 0.5), (Partition::coarsest(space.full_set()).unwrap(), 0.5)],
            DenseMatrix::identity(1),
        )
        .unwrap();
        let mu = Metapopulation::new(vec![Distribution::uniform(&space, space.full_set()).unwrap()]).unwrap();
        let err = mu_infinity(&mu, &model).unwrap_err();
        assert!(err.to_string().contains("merg"));
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let errs: Vec<f64> = (0..100).map(|t| 3.0 * 0.8f64.powi(t)).collect();
        assert!((fit_decay_rate(&errs).unwrap() - 0.8).abs() < 1e-10);
        let mut noisy = errs.clone();
        noisy.iter_mut().skip(60).for_each(|e| *e = 1e-17);
        assert!((fit_decay_rate(&noisy).unwrap() - 0.8).abs() < 1e-10);
        assert_eq!(fit_decay_rate(&[0.0; 10]), None);
    }

    #[test]
    fn tails() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&mut rng, 3, 2, None);
        let top = Partition::coarsest(model.full_set()).unwrap();
        let tail = absorption_tail(&model, &top, 200).unwrap();
        assert_eq!(tail[0], 1.0);
        assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let report = qld(&model).unwrap();
        // lower bound c η^t and upper rate (η + ε)^t
        let c = (0..=200).map(|t| tail[t] / report.eta.powi(t as i32)).fold(f64::INFINITY, f64::min);
        assert!(c > 0.0);
        let slope = (tail[200].ln() - tail[150].ln()) / 50.0;
        // polynomial prefactors shift the finite-t slope slightly above ln η
        assert!(slope <= report.eta.ln() + 0.02);

        let space = TypeSpace::binary(2).unwrap();
        let all_split = RecombinationModel::with_default_names(
            space.clone(),
            vec![(Partition::finest(space.full_set()).unwrap(), 1.0)],
            DenseMatrix::identity(1),
        )
        .unwrap();
        let tail = absorption_tail(&all_split, &Partition::coarsest(space.full_set()).unwrap(), 3).unwrap();
        assert_eq!(tail, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(qld(&all_split), Err(Error::QuasiLimitUndefined));
        assert_eq!(conditioned_distribution(&all_split, 0, 1), Err(Error::ZeroProbabilityCondition(1)));
    }

    #[test]
    fn reference_sojourn_example() {
        let model = reference_model();
        let sys = build_t(&model);
        let top = Partition::coarsest(model.full_set()).unwrap();
        let d = part(&[&[1, 2], &[3, 4]]);
        assert_eq!(sys.tul_entry(&top, &top), 0.4);
        assert_eq!(sys.tul_entry(&d, &d), 0.25);
        // a finer reachable state with smaller sojourn
        assert!(d.is_finer_than(&top).unwrap() && sys.tul_entry(&d, &d) < sys.tul_entry(&top, &top));
        // `{1,2}|{3}|{4}` keeps its only non-singleton block with probability r_max + r_{12|34}
        let a = part(&[&[1, 2], &[3], &[4]]);
        let b = part(&[&[1], &[2], &[3, 4]]);
        assert_eq!(sys.tul_entry(&a, &a), 0.5);
        let report = qld(&model).unwrap();
        assert_eq!(report.eta, 0.5);
        assert_eq!(report.f, vec![a.clone(), b.clone()]);
        assert_eq!(report.p_qlim_of(&top), 0.0);
        // symmetric in the two pairs
        assert!((report.p_qlim_of(&a) - 0.5).abs() < 1e-15);
        assert!(pre_absorption_defect(&model, &report) < 1e-15);
        let cond = conditioned_unlabelled(&model, 400).unwrap();
        for (p, x) in cond {
            assert!((x - report.p_qlim_of(&p)).abs() < 1e-10);
        }
    }

    #[test]
    fn two_sites_qld_is_top_with_q_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 2, 3, None);
        let report = qld(&model).unwrap();
        let top = Partition::coarsest(model.full_set()).unwrap();
        assert_eq!(report.f, vec![top.clone()]);
        assert_eq!(report.p_qlim_of(&top), 1.0);
        for a in 0..3 {
            let s = LabelledPartition::coarsest(model.full_set(), a).unwrap();
            assert!((report.labelled_qlim_of(&s) - report.q[a]).abs() < 1e-15);
        }
        let cond = conditioned_distribution(&model, 1, 400).unwrap();
        for (s, p) in cond {
            assert!((p - report.labelled_qlim_of(&s)).abs() < 1e-10);
        }
    }

    #[test]
    fn qld_matches_conditioned_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut checked = 0;
        while checked < 3 {
            let model = random_model(&mut rng, 3, 2, None);
            let report = qld(&model).unwrap();
            if spectral_gap_ratio(&model, &report) > 0.9 {
                continue;
            }
            checked += 1;
            let ul = conditioned_unlabelled(&model, 400).unwrap();
            let tv: f64 = ul.iter().map(|(p, x)| (x - report.p_qlim_of(p)).abs()).sum::<f64>() / 2.0;
            assert!(tv < 1e-8);
            let lab = conditioned_distribution(&model, 0, 400).unwrap();
            let tv: f64 = lab.iter().map(|(s, x)| (x - report.labelled_qlim_of(s)).abs()).sum::<f64>() / 2.0;
            assert!(tv < 1e-8);
            assert!(pre_absorption_defect(&model, &report) < 1e-12);
        }
    }

    fn spectral_gap_ratio(model: &RecombinationModel, report: &QldReport) -> f64 {
        let (parts, tul) = build_tul(model);
        (0..parts.len())
            .filter(|&i| !parts[i].is_finest() && !report.f.contains(&parts[i]))
            .map(|i| tul[(i, i)] / report.eta)
            .fold(0.0, f64::max)
    }

    #[test]
    fn general_start_is_flagged() {
        let model = reference_model();
        let d = part(&[&[1, 2], &[3, 4]]);
        let report = qld_from(&model, &d).unwrap();
        assert!(report.general_start);
        assert_eq!(report.eta, 0.5);
        assert_eq!(report.start, d);
        assert!(!qld(&model).unwrap().general_start);
    }

    #[test]
    fn singleton_labels_converge_to_product_of_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = random_model(&mut rng, 2, 2, None);
        let q = stationary_q(model.migration()).unwrap().q;
        let sys = build_t(&model);
        let start = LabelledPartition::coarsest(model.full_set(), 0).unwrap();
        let row = sys.t().pow(300, Execution::Sequential).row(sys.index_of(&start).unwrap()).to_vec();
        for (s, p) in sys.states().iter().zip(row) {
            if s.base().is_finest() {
                let expected: f64 = s.labels().iter().map(|&a| q[a]).product();
                assert!((p - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn report_json_shape() {
        let report = qld(&reference_model()).unwrap();
        let v = serde_json::to_value(&report).unwrap();
        for key in ["eta", "F", "P_qlim", "labelled_qlim", "q"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["F"], serde_json::json!([[[1, 2], [3], [4]], [[1], [2], [3, 4]]]));
    }
}
