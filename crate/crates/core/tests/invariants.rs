use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recolat::forward::{iterate, step};
use recolat::linear::{build_t, build_t_with};
use recolat::lpp::duality_estimate;
use recolat::partition::{enumerate_partitions, meet};
use recolat::random::{random_metapopulation, random_model};
use recolat::{Execution, Partition, SiteSet};

fn case(seed: u64, n: usize, l: usize) -> (recolat::RecombinationModel, recolat::Metapopulation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(&mut rng, n, l, None);
    let mu = random_metapopulation(&mut rng, model.type_space(), l);
    (model, mu)
}

fn bell(n: usize) -> usize {
    [1, 1, 2, 5, 15, 52, 203][n]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_count_and_meet(n in 1usize..=6, i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>()) {
        let all = enumerate_partitions(SiteSet::full(n).unwrap()).unwrap();
        prop_assert_eq!(all.len(), bell(n));
        let (a, b) = (&all[i.index(all.len())], &all[j.index(all.len())]);
        let m = meet(a, b).unwrap();
        prop_assert!(m.is_finer_than(a).unwrap() && m.is_finer_than(b).unwrap());
        // the meet is the coarsest common refinement
        for p in &all {
            if p.is_finer_than(a).unwrap() && p.is_finer_than(b).unwrap() {
                prop_assert!(p.is_finer_than(&m).unwrap());
            }
        }
        prop_assert_eq!(Partition::from_rgs(a.base(), &a.rgs()).unwrap(), a.clone());
    }

    #[test]
    fn step_keeps_probability_vectors(seed in any::<u64>(), n in 1usize..=4, l in 1usize..=3) {
        let (model, mu) = case(seed, n, l);
        let next = step(&mu, &model).unwrap();
        for d in next.locations() {
            prop_assert!((d.total() - 1.0).abs() < 1e-12);
            prop_assert!(d.weights().iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn linearisation_matches_iteration(seed in any::<u64>(), n in 1usize..=3, l in 1usize..=3, t in 0u64..12) {
        let (model, mu) = case(seed, n, l);
        let fwd = iterate(&mu, &model, t).unwrap();
        let lin = build_t(&model).solve(&mu, t, Execution::Sequential).unwrap();
        prop_assert!(lin.max_abs_diff(&fwd[t as usize]) < 1e-12);
    }

    #[test]
    fn t_is_stochastic_and_lower_triangular(seed in any::<u64>(), n in 1usize..=4, l in 1usize..=3) {
        let (model, _) = case(seed, n, l);
        let sys = build_t(&model);
        for (i, from) in sys.states().iter().enumerate() {
            prop_assert!((sys.t().row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, to) in sys.states().iter().enumerate() {
                if sys.t()[(i, j)] != 0.0 {
                    prop_assert!(to.base().is_finer_than(from.base()).unwrap());
                }
            }
        }
    }

    #[test]
    fn parallel_execution_is_bitwise_reproducible(seed in any::<u64>(), n in 1usize..=3, l in 1usize..=2) {
        let (model, mu) = case(seed, n, l);
        let a = build_t_with(&model, Execution::Sequential);
        let b = build_t_with(&model, Execution::Parallel);
        prop_assert_eq!(a.t(), b.t());
        let x = duality_estimate(0, 3, &mu, &model, 3000, seed, Execution::Sequential).unwrap();
        let y = duality_estimate(0, 3, &mu, &model, 3000, seed, Execution::Parallel).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn marginals_evolve_autonomously(seed in any::<u64>(), n in 2usize..=4, l in 1usize..=2, bits in 1u32..16) {
        let (model, mu) = case(seed, n, l);
        let u = SiteSet::from_sites((0..n).filter(|i| bits >> i & 1 == 1)).unwrap();
        prop_assume!(!u.is_empty());
        let traj = iterate(&mu, &model, 4).unwrap();
        let mut nu = mu.marginalise(u).unwrap();
        for full in traj.iter().skip(1) {
            nu = recolat::forward::marginal_step(&nu, &model).unwrap();
            prop_assert!(full.marginalise(u).unwrap().max_abs_diff(&nu) < 1e-12);
        }
    }
}
