//! Pipeline orchestration behind the `huretex` binary.
//!
//! Every stage reads and writes the NDJSON checkpoints of the core crate, so
//! `run` and the per-stage subcommands share the same code paths.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use log::info;
use serde::{Deserialize, Serialize};

use huretex_core::clustering::{cluster_trace, ClusterOptions, Linkage, Subsample};
use huretex_core::pathmining::{best_path_exact, ea_mine, Aggregator, EaConfig};
use huretex_core::report::{export_dot, export_histograms_csv, export_report_json};
use huretex_core::rsfg::{build_rsfg, verify_conservation};
use huretex_core::sis::{build_sis, export_sis_csv};
use huretex_core::trace::{load_trace, ActivationTrace};
use huretex_core::{ClusteringSet, FlowGraph, MiningResult, SequentialInformationSystem};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_STAGE: i32 = 4;

/// A failure attributed to one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageError {
    pub stage: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl StageError {
    pub fn validation(stage: &'static str, message: impl ToString) -> Self {
        StageError {
            stage,
            exit_code: EXIT_VALIDATION,
            message: single_line(&message.to_string()),
        }
    }

    pub fn failure(stage: &'static str, message: impl ToString) -> Self {
        StageError {
            stage,
            exit_code: EXIT_STAGE,
            message: single_line(&message.to_string()),
        }
    }
}

fn single_line(s: &str) -> String {
    s.lines().collect::<Vec<_>>().join("; ")
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "huretex: {}: {}", self.stage, self.message)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = Result<T, StageError>;

/// Fails with a hint naming the stage that produces `path`.
pub fn require_checkpoint(stage: &'static str, path: &Path, what: &str, producer: &str) -> StageResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(StageError::failure(
            stage,
            format!("{what} checkpoint {} not found; run {producer} first", path.display()),
        ))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerOverride {
    pub k: Option<usize>,
    pub linkage: Option<Linkage>,
    pub standardize: Option<bool>,
    pub subsample: Option<usize>,
    pub subsample_seed: Option<u64>,
    pub min_support: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k: usize,
    pub linkage: Linkage,
    pub standardize: bool,
    /// Cluster at most this many artifacts per unit; the rest go to the nearest centroid.
    pub subsample: Option<usize>,
    pub min_support: usize,
    pub layers: IndexMap<String, LayerOverride>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            k: 8,
            linkage: Linkage::Ward,
            standardize: false,
            subsample: None,
            min_support: 0,
            layers: IndexMap::new(),
        }
    }
}

impl ClusteringConfig {
    /// Options for one layer; `layer_index` decorrelates default subsample seeds.
    pub fn options_for(&self, layer: &str, layer_index: usize, seed: u64) -> ClusterOptions {
        let o = self.layers.get(layer).cloned().unwrap_or_default();
        let subsample = o.subsample.or(self.subsample).map(|size| Subsample {
            size,
            seed: o.subsample_seed.unwrap_or_else(|| seed.wrapping_add(layer_index as u64)),
        });
        ClusterOptions {
            k: o.k.unwrap_or(self.k),
            linkage: o.linkage.unwrap_or(self.linkage),
            standardize: o.standardize.unwrap_or(self.standardize),
            subsample,
        }
    }

    pub fn min_support_for(&self, layer: &str) -> usize {
        self.layers.get(layer).and_then(|o| o.min_support).unwrap_or(self.min_support)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub aggregator: Aggregator,
    pub population: Option<usize>,
    pub generations: Option<usize>,
    pub crossover_prob: Option<f64>,
    pub mutation_prob: Option<f64>,
    pub tournament_size: Option<usize>,
    pub elitism: Option<usize>,
    pub top_k: Option<usize>,
    /// Defaults to the global seed.
    pub seed: Option<u64>,
}

impl MiningConfig {
    pub fn ea_config(&self, seed: u64) -> EaConfig {
        let d = EaConfig::default();
        EaConfig {
            population: self.population.unwrap_or(d.population),
            generations: self.generations.unwrap_or(d.generations),
            crossover_prob: self.crossover_prob.unwrap_or(d.crossover_prob),
            mutation_prob: self.mutation_prob.or(d.mutation_prob),
            tournament_size: self.tournament_size.unwrap_or(d.tournament_size),
            elitism: self.elitism.unwrap_or(d.elitism),
            top_k: self.top_k.unwrap_or(d.top_k),
            seed: self.seed.unwrap_or(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub dot: PathBuf,
    pub json: PathBuf,
    pub histograms: PathBuf,
    #[serde(default)]
    pub sis_csv: Option<PathBuf>,
}

fn default_checkpoints() -> PathBuf {
    PathBuf::from("checkpoints")
}

fn default_tolerance() -> f64 {
    1e-9
}

/// One JSON file describing a whole run. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub trace: PathBuf,
    #[serde(default = "default_checkpoints")]
    pub checkpoint_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub mining: MiningConfig,
    pub outputs: Outputs,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> StageResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| StageError::validation("config", format!("{}: {e}", path.display())))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| StageError::validation("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.trace);
        fix(&mut self.checkpoint_dir);
        fix(&mut self.outputs.dot);
        fix(&mut self.outputs.json);
        fix(&mut self.outputs.histograms);
        if let Some(p) = self.outputs.sis_csv.as_mut() {
            fix(p);
        }
    }

    /// Checks the config against the trace manifest.
    pub fn validate(&self, trace: &ActivationTrace) -> StageResult<()> {
        for name in self.clustering.layers.keys() {
            match trace.manifest.layer(name) {
                None => return Err(StageError::validation("config", format!("unknown layer {name:?} in clustering overrides"))),
                Some(l) if l.kind == huretex_core::LayerKind::Output => {
                    return Err(StageError::validation("config", format!("layer {name:?} is the output layer and cannot be clustered")))
                }
                _ => {}
            }
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(StageError::validation("config", "tolerance must be non-negative"));
        }
        self.mining
            .ea_config(self.seed)
            .validate()
            .map_err(|e| StageError::validation("config", e))
    }
}

/// Checkpoint file names inside the checkpoint directory.
pub struct Checkpoints {
    pub clustering: PathBuf,
    pub sis: PathBuf,
    pub graph: PathBuf,
    pub mining: PathBuf,
}

impl Checkpoints {
    pub fn in_dir(dir: &Path) -> Self {
        Checkpoints {
            clustering: dir.join("clustering.ndjson"),
            sis: dir.join("sis.ndjson"),
            graph: dir.join("graph.ndjson"),
            mining: dir.join("mining.ndjson"),
        }
    }
}

pub fn stage_validate(trace_path: &Path) -> StageResult<ActivationTrace> {
    if !trace_path.exists() {
        return Err(StageError::validation("validate", format!("trace {} not found", trace_path.display())));
    }
    let trace = load_trace(trace_path).map_err(|e| StageError::validation("validate", e))?;
    info!(
        "validate: {} samples, {} layers",
        trace.samples.len(),
        trace.manifest.layers.len()
    );
    Ok(trace)
}

pub fn stage_cluster(trace: &ActivationTrace, config: &ClusteringConfig, seed: u64, out: &Path) -> StageResult<ClusteringSet> {
    let hidden: Vec<String> = trace.manifest.hidden_layers().iter().map(|l| l.name.clone()).collect();
    let set = cluster_trace(trace, |name| {
        let idx = hidden.iter().position(|h| h == name).unwrap_or(0);
        config.options_for(name, idx, seed)
    })
    .map_err(|e| StageError::failure("cluster", e))?;
    set.save(out).map_err(|e| StageError::failure("cluster", e))?;
    info!("cluster: {} layers clustered", set.layers.len());
    Ok(set)
}

pub fn stage_sis(
    trace: &ActivationTrace,
    clusterings: &ClusteringSet,
    config: &ClusteringConfig,
    out: &Path,
    csv: Option<&Path>,
) -> StageResult<SequentialInformationSystem> {
    let sis = build_sis(trace, clusterings).map_err(|e| StageError::failure("sis", e))?;
    let supports: Vec<usize> = sis.attributes().iter().map(|a| config.min_support_for(&a.name)).collect();
    let sis = sis.with_min_support_per(&supports);
    sis.save(out).map_err(|e| StageError::failure("sis", e))?;
    if let Some(csv) = csv {
        export_sis_csv(&sis, csv).map_err(|e| StageError::failure("sis", e))?;
    }
    info!("sis: {} objects x {} attributes", sis.n_objects(), sis.n_attributes());
    Ok(sis)
}

pub fn stage_graph(sis: &SequentialInformationSystem, tolerance: f64, out: &Path) -> StageResult<FlowGraph> {
    let graph: FlowGraph = build_rsfg(sis).map_err(|e| StageError::failure("graph", e))?;
    graph.save(out).map_err(|e| StageError::failure("graph", e))?;
    let violations = verify_conservation(&graph, tolerance);
    if let Some(first) = violations.first() {
        return Err(StageError::failure(
            "conservation",
            format!("{} violations, first: {first}", violations.len()),
        ));
    }
    info!("graph: {} nodes, {} edges", graph.node_count(), graph.edge_count());
    Ok(graph)
}

pub fn stage_mine(graph: &FlowGraph, aggregator: Aggregator, ea: &EaConfig, out: &Path) -> StageResult<MiningResult> {
    let mut result = ea_mine(graph, aggregator, ea).map_err(|e| StageError::failure("mine", e))?;
    if let Ok(best) = best_path_exact(graph, aggregator) {
        result.oracle_optimum = Some(best.aggregate);
        let found = result.paths.first().map(|p| p.aggregate);
        info!("mine: EA best {found:?}, exact optimum {}", best.aggregate);
    }
    result.save(out).map_err(|e| StageError::failure("mine", e))?;
    Ok(result)
}

pub fn stage_report(
    graph: &FlowGraph,
    result: &MiningResult,
    dot: Option<&Path>,
    json: Option<&Path>,
    histograms: Option<&Path>,
) -> StageResult<()> {
    if let Some(dot) = dot {
        let highlight: Vec<Vec<usize>> = result.paths.iter().filter(|p| p.feasible).map(|p| p.nodes.clone()).collect();
        export_dot(graph, Some(&highlight), dot).map_err(|e| StageError::failure("report", e))?;
    }
    if let Some(json) = json {
        export_report_json(result, graph, json).map_err(|e| StageError::failure("report", e))?;
    }
    if let Some(h) = histograms {
        export_histograms_csv(graph, h).map_err(|e| StageError::failure("report", e))?;
    }
    Ok(())
}

fn ensure_parent(stage: &'static str, path: &Path) -> StageResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| StageError::failure(stage, format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

/// Runs validate, cluster, sis, graph, conservation, mine and report in order.
pub fn run_pipeline(config: &PipelineConfig) -> StageResult<()> {
    let trace = stage_validate(&config.trace)?;
    config.validate(&trace)?;
    std::fs::create_dir_all(&config.checkpoint_dir)
        .map_err(|e| StageError::failure("cluster", format!("{}: {e}", config.checkpoint_dir.display())))?;
    let ck = Checkpoints::in_dir(&config.checkpoint_dir);
    for p in [&config.outputs.dot, &config.outputs.json, &config.outputs.histograms] {
        ensure_parent("report", p)?;
    }
    if let Some(p) = &config.outputs.sis_csv {
        ensure_parent("sis", p)?;
    }

    let clusterings = stage_cluster(&trace, &config.clustering, config.seed, &ck.clustering)?;
    let sis = stage_sis(&trace, &clusterings, &config.clustering, &ck.sis, config.outputs.sis_csv.as_deref())?;
    let graph = stage_graph(&sis, config.tolerance, &ck.graph)?;
    let ea = config.mining.ea_config(config.seed);
    let result = stage_mine(&graph, config.mining.aggregator, &ea, &ck.mining)?;
    stage_report(
        &graph,
        &result,
        Some(&config.outputs.dot),
        Some(&config.outputs.json),
        Some(&config.outputs.histograms),
    )
}
