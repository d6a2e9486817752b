mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use huretex_core::pathmining::rank_cmp;
use huretex_core::{best_path_exact, build_rsfg, ea_mine, edge_confidence, enumerate_paths, Aggregator, EaConfig, FlowGraph};

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn aggregator_axioms(a in unit(), b in unit(), c in unit(), d in unit()) {
        for agg in Aggregator::ALL {
            prop_assert_eq!(agg.apply(a, b), agg.apply(b, a));
            let left = agg.apply(agg.apply(a, b), c);
            let right = agg.apply(a, agg.apply(b, c));
            prop_assert!((left - right).abs() <= 1e-12, "{agg} not associative: {left} vs {right}");
            prop_assert_eq!(agg.apply(a, agg.identity()), a);
            let (lo, hi) = if b <= d { (b, d) } else { (d, b) };
            prop_assert!(agg.apply(a, lo) <= agg.apply(a, hi) + 1e-15, "{agg} not monotone");
            let v = agg.apply(a, b);
            prop_assert!((0.0..=1.0).contains(&v));
            if agg.is_tnorm() {
                prop_assert!(v <= a.min(b));
            } else {
                prop_assert!(v >= a.max(b));
            }
        }
    }

    #[test]
    fn harmonic_mean_between_arguments(a in 1e-6f64..=1.0, b in 1e-6f64..=1.0) {
        let h = edge_confidence(a, b);
        prop_assert!(h >= a.min(b) - 1e-15 && h <= a.max(b) + 1e-15);
        if (a - b).abs() > 1e-9 {
            prop_assert!(h > a.min(b) && h < a.max(b));
        }
    }

    #[test]
    fn exact_search_matches_enumeration(seed in any::<u64>(), n in 1usize..120, sizes in prop::collection::vec(1usize..6, 2..5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: FlowGraph = build_rsfg(&common::random_sis(&mut rng, n, &sizes)).unwrap();
        for agg in Aggregator::ALL {
            let all = enumerate_paths(&g, agg, 100_000).unwrap();
            let best = best_path_exact(&g, agg).unwrap();
            prop_assert_eq!(&best.nodes, &all[0].nodes, "{}", agg);
            prop_assert_eq!(best.aggregate, all[0].aggregate);
            for w in all.windows(2) {
                prop_assert!(rank_cmp(&w[0], &w[1]).is_lt());
            }
        }
    }
}

#[test]
fn ea_never_beats_the_exact_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = EaConfig { population: 40, generations: 40, ..EaConfig::default() };
    for _ in 0..10 {
        let g: FlowGraph = build_rsfg(&common::random_sis(&mut rng, 300, &[6, 6, 6, 3])).unwrap();
        for agg in Aggregator::ALL {
            let best = best_path_exact(&g, agg).unwrap();
            let r = ea_mine(&g, agg, &config).unwrap();
            assert!(r.paths[0].aggregate <= best.aggregate);
            assert!(r.paths.windows(2).all(|w| rank_cmp(&w[0], &w[1]).is_lt()));
        }
    }
}

#[test]
fn fixture_top_paths() {
    let g: FlowGraph = build_rsfg(&common::fixture_sis()).unwrap();
    let p = best_path_exact(&g, Aggregator::TnormProduct).unwrap();
    assert_eq!((p.nodes.clone(), p.aggregate), (vec![0, 0, 0], 0.5625));
    let p = best_path_exact(&g, Aggregator::TnormMin).unwrap();
    assert_eq!((p.nodes.clone(), p.aggregate), (vec![0, 0, 0], 0.75));
    let r = ea_mine(&g, Aggregator::TnormProduct, &EaConfig { seed: 42, ..EaConfig::default() }).unwrap();
    assert_eq!(r.paths[0].aggregate, 0.5625);
    assert_eq!(r.paths[1].nodes, vec![1, 1, 1]);
}
