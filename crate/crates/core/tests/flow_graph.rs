mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use huretex_core::rsfg::ViolationKind;
use huretex_core::{build_rsfg, verify_conservation, FlowGraph, SequentialInformationSystem};

/// Counts pair flows straight from the rows.
fn pair_counts(sis: &SequentialInformationSystem, layer: usize) -> BTreeMap<(String, String), u64> {
    let mut out = BTreeMap::new();
    for o in 0..sis.n_objects() {
        let key = (sis.symbol(o, layer).to_string(), sis.symbol(o, layer + 1).to_string());
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

fn value_counts(sis: &SequentialInformationSystem, layer: usize) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for o in 0..sis.n_objects() {
        *out.entry(sis.symbol(o, layer).to_string()).or_insert(0) += 1;
    }
    out
}

#[test]
fn fixture_matches_counting_oracle() {
    let sis = common::fixture_sis();
    let g: FlowGraph = build_rsfg(&sis).unwrap();
    let n = sis.n_objects() as f64;
    for l in 0..g.n_layers() - 1 {
        let pairs = pair_counts(&sis, l);
        let from_counts = value_counts(&sis, l);
        let to_counts = value_counts(&sis, l + 1);
        assert_eq!(g.edges[l].len(), pairs.len());
        for ((a, b), &flow) in &pairs {
            let i = g.node_index(l, a).unwrap();
            let j = g.node_index(l + 1, b).unwrap();
            let e = g.edge(l, i, j).unwrap();
            assert_eq!(e.flow, flow);
            assert_eq!(e.certainty, flow as f64 / from_counts[a] as f64);
            assert_eq!(e.covering, flow as f64 / to_counts[b] as f64);
            assert_eq!(e.strength, flow as f64 / n);
        }
    }
    let flows: Vec<Vec<u64>> = g.edges.iter().map(|es| es.iter().map(|e| e.flow).collect()).collect();
    assert_eq!(flows, vec![vec![3, 1, 1, 3], vec![3, 1, 1, 3]]);
    let y2 = g.node_index(1, "y2").unwrap();
    assert_eq!(g.layers[1].nodes[y2].class_histogram, vec![1, 3]);
    let e = g.edge(0, 0, 0).unwrap();
    assert_eq!((e.certainty, e.covering, e.strength), (0.75, 0.75, 0.375));
    let e = g.edge(0, 0, 1).unwrap();
    assert_eq!((e.certainty, e.covering, e.strength), (0.25, 0.25, 0.125));
}

#[test]
fn broken_certainty_is_reported() {
    let mut g: FlowGraph = build_rsfg(&common::fixture_sis()).unwrap();
    g.edge_mut(1, 1, 1).unwrap().certainty += 1e-6;
    let v = verify_conservation(&g, 1e-9);
    assert!(v.iter().any(|x| x.kind == ViolationKind::CertaintyOut && x.layer == 1 && x.node == Some(1)));
}

fn arb_sizes() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..8, 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_graphs_conserve_flow(seed in any::<u64>(), n in 1usize..300, sizes in arb_sizes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sis = common::random_sis(&mut rng, n, &sizes);
        let g: FlowGraph = build_rsfg(&sis).unwrap();
        prop_assert!(verify_conservation(&g, 1e-9).is_empty());
        let nf = n as f64;
        for (l, es) in g.edges.iter().enumerate() {
            for e in es {
                let from = g.layers[l].nodes[e.from].through_flow as f64;
                let to = g.layers[l + 1].nodes[e.to].through_flow as f64;
                prop_assert!((e.strength - from / nf * e.certainty).abs() <= 1e-12);
                prop_assert!((e.strength - to / nf * e.covering).abs() <= 1e-12);
                prop_assert!(e.certainty > 0.0 && e.certainty <= 1.0);
                prop_assert!(e.covering > 0.0 && e.covering <= 1.0);
            }
        }
        let totals: u64 = g.class_totals().iter().sum();
        prop_assert_eq!(totals, n as u64);
    }

    #[test]
    fn f32_graphs_agree_with_f64(seed in any::<u64>(), n in 1usize..200, sizes in arb_sizes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sis = common::random_sis(&mut rng, n, &sizes);
        let g64: FlowGraph = build_rsfg(&sis).unwrap();
        let g32: huretex_core::FlowGraphF32 = build_rsfg(&sis).unwrap();
        prop_assert!(verify_conservation(&g32, 1e-5).is_empty());
        for (a, b) in g64.edges.iter().flatten().zip(g32.edges.iter().flatten()) {
            prop_assert_eq!(a.flow, b.flow);
            prop_assert!((a.certainty - b.certainty as f64).abs() <= 1e-6);
        }
    }
}
