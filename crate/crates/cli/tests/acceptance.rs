//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use huretex_core::clustering::ClusterAssignment;
use huretex_core::pathmining::rank_cmp;
use huretex_core::sis::Attribute;
use huretex_core::{
    best_path_exact, build_rsfg, cluster_layer, ea_mine, edge_confidence, enumerate_paths, generate_synthetic_trace,
    verify_conservation, Aggregator, EaConfig, FlowGraph, LayerClustering, LayerKind, LayerSpec, Linkage,
    SequentialInformationSystem,
};

const CONSERVATION_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-12;
const ASSOCIATIVITY_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_sis(rng: &mut ChaCha8Rng, n: usize, sizes: &[usize]) -> SequentialInformationSystem {
    let m = sizes.len();
    let attributes = (0..m)
        .map(|a| Attribute {
            name: format!("a{a}"),
            kind: if a + 1 == m { LayerKind::Output } else { LayerKind::Dense },
        })
        .collect();
    let classes: Vec<String> = (0..sizes[m - 1]).map(|c| format!("{c}")).collect();
    let rows: Vec<Vec<String>> = (0..n)
        .map(|_| sizes.iter().map(|&s| format!("{}", rng.gen_range(0..s))).collect())
        .collect();
    let ids = (0..n).map(|i| format!("o{i}")).collect();
    SequentialInformationSystem::from_rows(attributes, classes, ids, &rows).unwrap()
}

/// 50 systems with N=1000, 4 attributes and alphabets of 2 to 12 symbols.
fn conservation_instances() -> Vec<SequentialInformationSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|_| {
            let sizes: Vec<usize> = (0..4).map(|_| rng.gen_range(2..=12)).collect();
            random_sis(&mut rng, 1000, &sizes)
        })
        .collect()
}

fn conservation() -> Outcome {
    let instances = conservation_instances();
    let start = Instant::now();
    let mut violations = 0;
    for sis in &instances {
        let g: FlowGraph = build_rsfg(sis).unwrap();
        violations += verify_conservation(&g, CONSERVATION_TOL).len();
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && elapsed < Duration::from_secs(5),
        format!("50 instances, {violations} violations at tol {CONSERVATION_TOL:e}, {elapsed:.2?}"),
    )
}

fn identities() -> Outcome {
    let mut worst = 0.0f64;
    let mut edges = 0;
    for sis in conservation_instances() {
        let g: FlowGraph = build_rsfg(&sis).unwrap();
        let n = g.n_objects as f64;
        for (l, es) in g.edges.iter().enumerate() {
            for e in es {
                let from = g.layers[l].nodes[e.from].through_flow as f64;
                let to = g.layers[l + 1].nodes[e.to].through_flow as f64;
                worst = worst.max((e.strength - from / n * e.certainty).abs());
                worst = worst.max((e.strength - to / n * e.covering).abs());
                edges += 1;
            }
        }
    }
    outcome(worst <= IDENTITY_TOL, format!("{edges} edges, max residual {worst:e}"))
}

fn fixture() -> Outcome {
    let rows = [
        ["x1", "y1", "0"],
        ["x1", "y1", "0"],
        ["x1", "y2", "1"],
        ["x2", "y1", "0"],
        ["x2", "y2", "1"],
        ["x2", "y2", "1"],
        ["x1", "y1", "1"],
        ["x2", "y2", "0"],
    ];
    let attributes = vec![
        Attribute { name: "a1".into(), kind: LayerKind::Dense },
        Attribute { name: "a2".into(), kind: LayerKind::Dense },
        Attribute { name: "d".into(), kind: LayerKind::Output },
    ];
    let rows: Vec<Vec<&str>> = rows.iter().map(|r| r.to_vec()).collect();
    let ids = (1..=8).map(|i| format!("u{i}")).collect();
    let sis = SequentialInformationSystem::from_rows(attributes, vec!["0".into(), "1".into()], ids, &rows).unwrap();
    let g: FlowGraph = build_rsfg(&sis).unwrap();

    let mut failures = Vec::new();
    for (l, es) in g.edges.iter().enumerate() {
        let flows: Vec<u64> = es.iter().map(|e| e.flow).collect();
        if flows != [3, 1, 1, 3] {
            failures.push(format!("layer {l} flows {flows:?}"));
        }
        for e in es {
            let (c, v, s) = if e.flow == 3 { (0.75, 0.75, 0.375) } else { (0.25, 0.25, 0.125) };
            if (e.certainty, e.covering, e.strength) != (c, v, s) {
                failures.push(format!("layer {l} edge {}->{}", e.from, e.to));
            }
        }
    }
    let product = best_path_exact(&g, Aggregator::TnormProduct).unwrap().aggregate;
    let min = best_path_exact(&g, Aggregator::TnormMin).unwrap().aggregate;
    if product != 0.5625 {
        failures.push(format!("product aggregate {product}"));
    }
    if min != 0.75 {
        failures.push(format!("min aggregate {min}"));
    }
    let y2 = g.node_index(1, "y2").unwrap();
    let hist = &g.layers[1].nodes[y2].class_histogram;
    if hist != &[1, 3] {
        failures.push(format!("y2 histogram {hist:?}"));
    }
    outcome(failures.is_empty(), if failures.is_empty() { "all values exact".into() } else { failures.join("; ") })
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    let mut largest = 0usize;
    for _ in 0..100 {
        let m = rng.gen_range(2..=5);
        let mut sizes: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=12)).collect();
        while sizes.iter().product::<usize>() > 100_000 {
            let i = rng.gen_range(0..m);
            sizes[i] = (sizes[i] / 2).max(1);
        }
        let n = rng.gen_range(1..=400);
        let g: FlowGraph = build_rsfg(&random_sis(&mut rng, n, &sizes)).unwrap();
        largest = largest.max(g.layer_sizes().iter().product());
        for agg in Aggregator::ALL {
            let all = enumerate_paths(&g, agg, 100_000).unwrap();
            let best = best_path_exact(&g, agg).unwrap();
            if rank_cmp(&best, &all[0]).is_ne() || best.aggregate != all[0].aggregate {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("600 (graph, aggregator) pairs, {mismatches} mismatches, largest space {largest}"))
}

fn ea_optimum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut hits, mut exceeded) = (0, 0);
    let mut slowest = Duration::ZERO;
    for _ in 0..20 {
        let sizes: Vec<usize> = (0..4).map(|_| rng.gen_range(2..=12)).collect();
        let g: FlowGraph = build_rsfg(&random_sis(&mut rng, 1000, &sizes)).unwrap();
        let optimum = best_path_exact(&g, Aggregator::TnormProduct).unwrap().aggregate;
        for seed in 0..5 {
            let start = Instant::now();
            let r = ea_mine(&g, Aggregator::TnormProduct, &EaConfig { seed, ..EaConfig::default() }).unwrap();
            slowest = slowest.max(start.elapsed());
            let found = r.paths[0].aggregate;
            if found == optimum {
                hits += 1;
            }
            if found > optimum {
                exceeded += 1;
            }
        }
    }
    outcome(
        hits >= 95 && exceeded == 0 && slowest < Duration::from_secs(1),
        format!("{hits}/100 optimal, {exceeded} above optimum, slowest run {slowest:.2?}"),
    )
}

fn sample_unit(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen::<f64>(),
    }
}

fn aggregator_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures: Vec<String> = Vec::new();
    let mut note = |what: String| {
        if failures.len() < 5 {
            failures.push(what);
        }
    };
    for _ in 0..10_000 {
        let (a, b, c) = (sample_unit(&mut rng), sample_unit(&mut rng), sample_unit(&mut rng));
        for agg in Aggregator::ALL {
            if agg.apply(a, b) != agg.apply(b, a) {
                note(format!("{agg} commutativity at ({a}, {b})"));
            }
            let l = agg.apply(agg.apply(a, b), c);
            let r = agg.apply(a, agg.apply(b, c));
            if (l - r).abs() > ASSOCIATIVITY_TOL {
                note(format!("{agg} associativity at ({a}, {b}, {c})"));
            }
            let (lo, hi) = if b <= c { (b, c) } else { (c, b) };
            if agg.apply(a, lo) > agg.apply(a, hi) {
                note(format!("{agg} monotonicity at ({a}, {lo}, {hi})"));
            }
            if agg.apply(a, agg.identity()) != a {
                note(format!("{agg} identity at {a}"));
            }
            let v = agg.apply(a, b);
            let bounded = if agg.is_tnorm() { v <= a.min(b) } else { v >= a.max(b) };
            if !bounded {
                note(format!("{agg} bound at ({a}, {b})"));
            }
        }
        if a > 0.0 && b > 0.0 {
            let h = edge_confidence(a, b);
            if h < a.min(b) || h > a.max(b) {
                note(format!("harmonic mean outside [{a}, {b}]"));
            }
            if a != b && (h == a.min(b) || h == a.max(b)) {
                note(format!("harmonic mean hits a bound at ({a}, {b})"));
            }
            let e = edge_confidence(a, a);
            if (e - a).abs() > 1e-15 {
                note(format!("harmonic mean of equal arguments {a} gave {e}"));
            }
        }
    }
    let pass = failures.is_empty();
    outcome(pass, if pass { "10000 samples x 6 aggregators".into() } else { failures.join("; ") })
}

fn run_cli(config: &Path, threads: &str) -> Result<Vec<Vec<u8>>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_huretex"))
        .args(["--threads", threads, "run", "--config", config.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).trim().to_string());
    }
    let dir = config.parent().unwrap();
    ["out/graph.dot", "out/report.json", "out/hist.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let layers = vec![
        LayerSpec::conv("c1", 3, 4),
        LayerSpec::dense("d1", 4),
        LayerSpec::output("y", ["a", "b", "c", "d"]),
    ];
    let synth = generate_synthetic_trace(11, &layers, 300, 4).unwrap();
    huretex_core::trace::write_trace(&synth.trace, dir.path().join("trace.ndjson")).unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"trace":"trace.ndjson","seed":8,"clustering":{"k":4,"subsample":120},
"mining":{"aggregator":"tnorm_product","top_k":5},
"outputs":{"dot":"out/graph.dot","json":"out/report.json","histograms":"out/hist.csv"}}"#,
    )
    .unwrap();
    let runs: Result<Vec<_>, _> = ["1", "1", "4", "8"].iter().map(|t| run_cli(&config, t)).collect();
    match runs {
        Err(e) => outcome(false, e),
        Ok(runs) => {
            let same = runs.iter().all(|r| r == &runs[0]);
            outcome(same, format!("4 runs with --threads 1, 1, 4, 8: {}", if same { "byte-identical" } else { "outputs differ" }))
        }
    }
}

fn clustering_recovery() -> Outcome {
    let layers = vec![
        LayerSpec::conv("c1", 2, 3),
        LayerSpec::dense("d1", 3),
        LayerSpec::output("y", ["a", "b", "c"]),
    ];
    let mut recovered = 0;
    for seed in 0..20 {
        let synth = generate_synthetic_trace(seed, &layers, 90, 3).unwrap();
        let truth = ClusterAssignment::from_labels(&synth.groups);
        let ok = ["c1", "d1"].iter().all(|name| {
            let lc: LayerClustering = cluster_layer(&synth.trace, name, 3, Linkage::Ward).unwrap();
            lc.per_unit.iter().all(|u| u.assignment == truth)
        });
        if ok {
            recovered += 1;
        }
    }
    outcome(recovered == 20, format!("{recovered}/20 seeds recovered exactly"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("conservation", conservation),
        ("coefficient identities", identities),
        ("fixture exactness", fixture),
        ("oracle equivalence", oracle_equivalence),
        ("EA finds the optimum", ea_optimum),
        ("aggregator axioms", aggregator_axioms),
        ("determinism", determinism),
        ("clustering recovery", clustering_recovery),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
