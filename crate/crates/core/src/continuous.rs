//! Continuous-time migration-recombination.
//!
//! `ω̇(α) = Σ_β N(α,β) ω(β) + Σ_δ ϱ_δ (R_δ − id) ω(α)`, solved by fixed-step RK4,
//! by the matrix exponential of the labelled partitioning generator, and for two
//! sites by quadrature over the first separation time.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forward::PartitionWeights;
use crate::linear::closure;
use crate::matrix::DenseMatrix;
use crate::measure::{tensor, Distribution, MarginalCache, Metapopulation, TypeSpace};
use crate::partition::{LabelledPartition, Partition, SiteSet};

/// Tolerance for generator row sums.
pub const GENERATOR_TOL: f64 = 1e-12;
/// Most negative weight tolerated by the integrator.
pub const NEGATIVE_TOL: f64 = -1e-9;
/// Absolute tolerance of the two-site quadrature.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// Recombination rates plus a migration generator.
#[derive(Clone, Debug, PartialEq)]
pub struct CtModel {
    type_space: TypeSpace,
    rates: PartitionWeights,
    generator: DenseMatrix,
    locations: Vec<String>,
}

impl CtModel {
    pub fn new(
        type_space: TypeSpace,
        rates: Vec<(Partition, f64)>,
        generator: DenseMatrix,
        locations: Vec<String>,
    ) -> Result<Self> {
        let rates = PartitionWeights::new(type_space.full_set(), rates)?;
        if locations.is_empty() {
            return Err(Error::InvalidModel("at least one location required".into()));
        }
        if generator.rows() != locations.len() {
            return Err(Error::Dimension(format!(
                "{}x{} generator for {} locations",
                generator.rows(),
                generator.cols(),
                locations.len()
            )));
        }
        generator.check_generator(GENERATOR_TOL)?;
        Ok(CtModel {
            type_space,
            rates,
            generator,
            locations,
        })
    }

    pub fn with_default_names(type_space: TypeSpace, rates: Vec<(Partition, f64)>, generator: DenseMatrix) -> Result<Self> {
        let names = (0..generator.rows()).map(|i| i.to_string()).collect();
        Self::new(type_space, rates, generator, names)
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

    pub fn rates(&self) -> &PartitionWeights {
        &self.rates
    }

    pub fn generator(&self) -> &DenseMatrix {
        &self.generator
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    fn check_state(&self, omega: &Metapopulation) -> Result<()> {
        if omega.num_locations() != self.num_locations() {
            return Err(Error::Dimension(format!(
                "{} locations in the population, {} in the model",
                omega.num_locations(),
                self.num_locations()
            )));
        }
        if omega.support() != self.full_set() {
            return Err(Error::BaseMismatch(omega.support().to_string(), self.full_set().to_string()));
        }
        let radices: Vec<usize> = self.type_space.sizes().to_vec();
        if omega.get(0).radices() != radices.as_slice() {
            return Err(Error::Dimension("population alphabet sizes differ from the model".into()));
        }
        Ok(())
    }
}

// Right-hand side on raw (possibly signed, unnormalised) weight vectors.
fn rhs_raw(state: &[Distribution], ct: &CtModel) -> Vec<Vec<f64>> {
    let n = &ct.generator;
    let len = state[0].len();
    (0..state.len())
        .map(|a| {
            let mut out = vec![0.0; len];
            for (b, nu) in state.iter().enumerate() {
                let c = n[(a, b)];
                if c != 0.0 {
                    out.iter_mut().zip(nu.weights()).for_each(|(x, y)| *x += c * y);
                }
            }
            let nu = &state[a];
            for (delta, rate) in ct.rates.entries() {
                if delta.is_coarsest() {
                    continue;
                }
                let marginals: Vec<Distribution> = delta
                    .blocks()
                    .iter()
                    .map(|d| nu.marginalise(*d).expect("block inside support"))
                    .collect();
                let prod = tensor(&marginals.iter().collect::<Vec<_>>()).expect("disjoint blocks");
                out.iter_mut()
                    .zip(prod.weights().iter().zip(nu.weights()))
                    .for_each(|(x, (p, w))| *x += rate * (p - w));
            }
            out
        })
        .collect()
}

/// `ω̇` at `omega`, one weight vector per location.
pub fn ct_rhs(omega: &Metapopulation, ct: &CtModel) -> Result<Vec<Vec<f64>>> {
    ct.check_state(omega)?;
    Ok(rhs_raw(omega.locations(), ct))
}

/// RK4 output on the time grid.
#[derive(Clone, Debug)]
pub struct CtTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Metapopulation>,
    /// Largest `|Σ weights − 1|` seen at any grid point (not corrected).
    pub max_mass_drift: f64,
}

impl CtTrajectory {
    pub fn last(&self) -> &Metapopulation {
        self.states.last().expect("non-empty trajectory")
    }
}

/// Fixed-step RK4 from `0` to `t_end`; the last step is shortened to land on `t_end`.
pub fn integrate(omega0: &Metapopulation, ct: &CtModel, t_end: f64, dt: f64) -> Result<CtTrajectory> {
    ct.check_state(omega0)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("step size {dt} must be positive")));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!("end time {t_end} must be non-negative")));
    }
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as u64;
    let mut times = vec![0.0];
    let mut states = vec![omega0.clone()];
    let mut cur: Vec<Distribution> = omega0.locations().to_vec();
    let mut t = 0.0;
    let mut drift: f64 = 0.0;
    let combine = |base: &[Distribution], k: &[Vec<f64>], h: f64| -> Vec<Distribution> {
        base.iter()
            .zip(k)
            .map(|(nu, d)| {
                let w = nu.weights().iter().zip(d).map(|(x, y)| x + h * y).collect();
                Distribution::from_parts(nu.support(), nu.radices().to_vec(), w)
            })
            .collect()
    };
    for s in 0..steps {
        let h = if s + 1 == steps { t_end - t } else { dt };
        let k1 = rhs_raw(&cur, ct);
        let k2 = rhs_raw(&combine(&cur, &k1, h / 2.0), ct);
        let k3 = rhs_raw(&combine(&cur, &k2, h / 2.0), ct);
        let k4 = rhs_raw(&combine(&cur, &k3, h), ct);
        let incr: Vec<Vec<f64>> = (0..cur.len())
            .map(|a| {
                (0..k1[a].len())
                    .map(|i| (k1[a][i] + 2.0 * k2[a][i] + 2.0 * k3[a][i] + k4[a][i]) / 6.0)
                    .collect()
            })
            .collect();
        cur = combine(&cur, &incr, h);
        t = if s + 1 == steps { t_end } else { t + h };
        for nu in &cur {
            if let Some(w) = nu.weights().iter().copied().find(|w| *w < NEGATIVE_TOL) {
                return Err(Error::StepSizeTooLarge { time: t, value: w });
            }
            drift = drift.max((nu.total() - 1.0).abs());
        }
        times.push(t);
        states.push(Metapopulation::from_parts(cur.clone()));
    }
    Ok(CtTrajectory {
        times,
        states,
        max_mass_drift: drift,
    })
}

/// Observed order `log2(|y_h − y_{h/2}| / |y_{h/2} − y_{h/4}|)` of the integrator at `t_end`.
pub fn convergence_order(omega0: &Metapopulation, ct: &CtModel, t_end: f64, dt: f64) -> Result<f64> {
    let a = integrate(omega0, ct, t_end, dt)?;
    let b = integrate(omega0, ct, t_end, dt / 2.0)?;
    let c = integrate(omega0, ct, t_end, dt / 4.0)?;
    let e1 = a.last().max_abs_diff(b.last());
    let e2 = b.last().max_abs_diff(c.last());
    Ok((e1 / e2).log2())
}

/// Generator of the continuous-time labelled partitioning process on its reachable states.
#[derive(Clone, Debug)]
pub struct LppGenerator {
    states: Vec<LabelledPartition>,
    index: HashMap<LabelledPartition, usize>,
    q: DenseMatrix,
}

impl LppGenerator {
    pub fn states(&self) -> &[LabelledPartition] {
        &self.states
    }

    pub fn index_of(&self, s: &LabelledPartition) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn rate(&self, from: &LabelledPartition, to: &LabelledPartition) -> f64 {
        match (self.index_of(from), self.index_of(to)) {
            (Some(i), Some(j)) => self.q[(i, j)],
            _ => 0.0,
        }
    }
}

fn ct_successors(
    state: &LabelledPartition,
    marginals: &HashMap<SiteSet, Vec<(Partition, f64)>>,
    n: &DenseMatrix,
) -> Vec<(LabelledPartition, f64)> {
    let blocks: Vec<(SiteSet, usize)> = state.blocks().collect();
    let mut out = Vec::new();
    for (k, &(d, lam)) in blocks.iter().enumerate() {
        for (eps, rate) in &marginals[&d] {
            if eps.is_coarsest() {
                continue;
            }
            let mut pairs: Vec<(SiteSet, usize)> = blocks.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, p)| *p).collect();
            pairs.extend(eps.blocks().iter().map(|e| (*e, lam)));
            out.push((LabelledPartition::from_blocks(pairs).expect("disjoint"), *rate));
        }
        for beta in 0..n.rows() {
            let rate = n[(lam, beta)];
            if beta != lam && rate > 0.0 {
                let mut pairs = blocks.clone();
                pairs[k].1 = beta;
                out.push((LabelledPartition::from_blocks(pairs).expect("disjoint"), rate));
            }
        }
    }
    out
}

/// `Q` on the states reachable from the single-block states `1^α`.
pub fn build_q(ct: &CtModel) -> LppGenerator {
    let full = ct.full_set();
    let marginals = ct.rates.block_marginals();
    // block_marginals only follows splits from the full set, which covers every reachable block
    let starts = (0..ct.num_locations())
        .map(|a| LabelledPartition::coarsest(full, a).expect("non-empty"))
        .collect();
    let exec = Execution::default();
    let (states, rows) = closure(starts, exec, |s| ct_successors(s, &marginals, &ct.generator));
    let index: HashMap<_, _> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let k = states.len();
    let mut q = DenseMatrix::zeros(k, k);
    for (i, s) in states.iter().enumerate() {
        let mut total = 0.0;
        for (e, rate) in &rows[s] {
            q[(i, index[e])] += rate;
            total += rate;
        }
        q[(i, i)] -= total;
    }
    LppGenerator { states, index, q }
}

/// `ω_t(α) = Σ_bδ (e^{tQ})_{1^α,bδ} R_bδ(ω_0)`.
pub fn ct_solve_dual(omega0: &Metapopulation, ct: &CtModel, t: f64) -> Result<Metapopulation> {
    ct.check_state(omega0)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time {t} must be non-negative")));
    }
    let gen = build_q(ct);
    let p = gen.q.scale(t).expm();
    let mut cache = MarginalCache::new(omega0);
    let recs: Vec<Distribution> = gen.states.iter().map(|s| cache.recombinator(s)).collect();
    let template = omega0.get(0);
    let out = (0..ct.num_locations())
        .map(|a| {
            let i = gen.index[&LabelledPartition::coarsest(ct.full_set(), a).expect("non-empty")];
            let mut w = vec![0.0; template.len()];
            for (pij, r) in p.row(i).iter().zip(&recs) {
                if *pij != 0.0 {
                    w.iter_mut().zip(r.weights()).for_each(|(x, y)| *x += pij * y);
                }
            }
            Distribution::from_parts(template.support(), template.radices().to_vec(), w)
        })
        .collect();
    Ok(Metapopulation::from_parts(out))
}

/// Two-site solution by integrating over the first separation time.
pub fn ct_two_site(alpha: usize, t: f64, omega0: &Metapopulation, ct: &CtModel) -> Result<Distribution> {
    if ct.num_sites() != 2 {
        return Err(Error::NotTwoSites(ct.num_sites()));
    }
    ct.check_state(omega0)?;
    if alpha >= ct.num_locations() {
        return Err(Error::InvalidArgument(format!("location {alpha} out of range")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time {t} must be non-negative")));
    }
    let rho = ct.rates.get(&Partition::finest(ct.full_set())?);
    let n = &ct.generator;
    let template = omega0.get(0);
    let len = template.len();
    let s1 = SiteSet::singleton(0)?;
    let s2 = SiteSet::singleton(1)?;
    // (e^{sN} ω_0)(γ) as raw weights per location
    let evolve = |s: f64| -> Vec<Vec<f64>> {
        let e = n.scale(s).expm();
        (0..ct.num_locations())
            .map(|g| {
                let mut w = vec![0.0; len];
                for (b, nu) in omega0.locations().iter().enumerate() {
                    w.iter_mut().zip(nu.weights()).for_each(|(x, y)| *x += e[(g, b)] * y);
                }
                w
            })
            .collect()
    };
    let head = evolve(t);
    let mut out: Vec<f64> = head[alpha].iter().map(|x| (-rho * t).exp() * x).collect();
    if rho > 0.0 && t > 0.0 {
        let integrand = |sigma: f64| -> Vec<f64> {
            let e = n.scale(sigma).expm();
            let later = evolve(t - sigma);
            let mut acc = vec![0.0; len];
            for (g, w) in later.into_iter().enumerate() {
                let c = (-rho * sigma).exp() * e[(alpha, g)];
                if c == 0.0 {
                    continue;
                }
                let nu = Distribution::from_parts(template.support(), template.radices().to_vec(), w);
                let prod = tensor(&[&nu.marginalise(s1).expect("site"), &nu.marginalise(s2).expect("site")])
                    .expect("disjoint");
                acc.iter_mut().zip(prod.weights()).for_each(|(x, y)| *x += c * y);
            }
            acc
        };
        let integral = adaptive_simpson(&integrand, 0.0, t, QUADRATURE_TOL / rho.max(1.0));
        out.iter_mut().zip(integral).for_each(|(x, y)| *x += rho * y);
    }
    Ok(Distribution::from_parts(template.support(), template.radices().to_vec(), out))
}

/// Vector-valued adaptive Simpson quadrature to absolute tolerance `tol` (max norm).
pub fn adaptive_simpson(f: &dyn Fn(f64) -> Vec<f64>, a: f64, b: f64, tol: f64) -> Vec<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, &fa, &fm, &fb);
    simpson_rec(f, a, b, &fa, &fm, &fb, whole, tol, 50)
}

fn simpson(a: f64, b: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    let h = (b - a) / 6.0;
    fa.iter().zip(fm).zip(fb).map(|((x, y), z)| h * (x + 4.0 * y + z)).collect()
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> Vec<f64>,
    a: f64,
    b: f64,
    fa: &[f64],
    fm: &[f64],
    fb: &[f64],
    whole: Vec<f64>,
    tol: f64,
    depth: u32,
) -> Vec<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, &flm, fm);
    let right = simpson(m, b, fm, &frm, fb);
    let err = left
        .iter()
        .zip(&right)
        .zip(&whole)
        .map(|((l, r), w)| (l + r - w).abs())
        .fold(0.0, f64::max);
    if depth == 0 || err <= 15.0 * tol {
        // Richardson correction
        return left
            .iter()
            .zip(&right)
            .zip(&whole)
            .map(|((l, r), w)| l + r + (l + r - w) / 15.0)
            .collect();
    }
    let mut l = simpson_rec(f, a, m, fa, &flm, fm, left, tol / 2.0, depth - 1);
    let r = simpson_rec(f, m, b, fm, &frm, fb, right, tol / 2.0, depth - 1);
    l.iter_mut().zip(r).for_each(|(x, y)| *x += y);
    l
}
