use huretex_core::clustering::{cluster_trace, ClusteringSet};
use huretex_core::pathmining::MiningResult;
use huretex_core::report::{build_report, export_report_json, read_report_json};
use huretex_core::trace::write_trace;
use huretex_core::{
    best_path_exact, build_rsfg, build_sis, ea_mine, generate_synthetic_trace, load_trace, verify_conservation, Aggregator,
    ClusterOptions, EaConfig, FlowGraph, LayerSpec, Linkage, SequentialInformationSystem,
};

fn layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("c1", 2, 4),
        LayerSpec::dense("d1", 3),
        LayerSpec::output("y", ["a", "b", "c"]),
    ]
}

#[test]
fn synthetic_trace_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let synth = generate_synthetic_trace(3, &layers(), 120, 3).unwrap();
    let trace_path = dir.path().join("trace.ndjson");
    write_trace(&synth.trace, &trace_path).unwrap();
    let trace = load_trace(&trace_path).unwrap();
    assert_eq!(trace.to_bytes(), synth.trace.to_bytes());

    let options = ClusterOptions { k: 3, linkage: Linkage::Ward, ..ClusterOptions::default() };
    let set: ClusteringSet<f64> = cluster_trace(&trace, |_| options.clone()).unwrap();
    let p = dir.path().join("clustering.ndjson");
    set.save(&p).unwrap();
    let set = ClusteringSet::<f64>::load(&p).unwrap();

    let sis = build_sis(&trace, &set).unwrap();
    let p = dir.path().join("sis.ndjson");
    sis.save(&p).unwrap();
    let sis = SequentialInformationSystem::load(&p).unwrap();
    assert_eq!(sis.n_attributes(), 3);

    let g: FlowGraph = build_rsfg(&sis).unwrap();
    assert!(verify_conservation(&g, 1e-9).is_empty());
    // Every unit recovers the latent group, so each layer has the 3 tuples.
    assert_eq!(g.layer_sizes(), vec![3, 3, 3]);
    assert_eq!(g.edge_count(), 6);

    let r = ea_mine(&g, Aggregator::TnormProduct, &EaConfig { seed: 1, ..EaConfig::default() }).unwrap();
    let best = best_path_exact(&g, Aggregator::TnormProduct).unwrap();
    assert_eq!(r.paths[0].aggregate, best.aggregate);
    assert_eq!(best.aggregate, 1.0);
    let p = dir.path().join("mining.ndjson");
    r.save(&p).unwrap();
    let r: MiningResult<f64> = MiningResult::load(&p).unwrap();

    let report = build_report(&r, &g).unwrap();
    let p = dir.path().join("report.json");
    export_report_json(&r, &g, &p).unwrap();
    assert_eq!(read_report_json(&p).unwrap(), report);
    assert_eq!(report.paths.len(), 5);
    assert_eq!(report.paths.iter().filter(|p| p.feasible).count(), 3);
}
