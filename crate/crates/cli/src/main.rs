use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use huretex_cli::{
    require_checkpoint, run_pipeline, stage_cluster, stage_graph, stage_mine, stage_report, stage_sis, stage_validate,
    ClusteringConfig, MiningConfig, PipelineConfig, StageError, StageResult, EXIT_USAGE,
};
use huretex_core::clustering::Linkage;
use huretex_core::pathmining::Aggregator;
use huretex_core::trace::write_trace;
use huretex_core::{generate_synthetic_trace, ClusteringSet, FlowGraph, LayerSpec, MiningResult, SequentialInformationSystem};

#[derive(Parser)]
#[command(name = "huretex", version, about = "Readable flow-graph twins of sequential neural networks")]
struct Cli {
    /// Worker threads for parallel stages; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage from one JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a trace file against its manifest.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Cluster every hidden layer of a trace.
    Cluster(ClusterArgs),
    /// Build the symbol table from a trace and its clusterings.
    Sis(SisArgs),
    /// Build the flow graph from a symbol table and check conservation.
    Graph(GraphArgs),
    /// Mine the most confident prediction paths.
    Mine(MineArgs),
    /// Write DOT, JSON and histogram CSV reports.
    Report(ReportArgs),
    /// Write a synthetic trace with well separated latent groups.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ClusterArgs {
    /// Trace file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pipeline config supplying defaults and per-layer overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    linkage: Option<Linkage>,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SisArgs {
    /// Clustering checkpoint.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    min_support: Option<usize>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    /// SIS checkpoint.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct MineArgs {
    /// Graph checkpoint.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    aggregator: Option<Aggregator>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Mining checkpoint.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    histograms: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    /// Hidden layer as `conv:NAME:UNITS:DIM` or `dense:NAME:UNITS`; repeatable.
    #[arg(long = "layer", required = true)]
    layers: Vec<String>,
    /// Comma separated output classes.
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,
    #[arg(long, default_value = "output")]
    output_name: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_layer(spec: &str) -> Result<LayerSpec, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad number {s:?} in layer spec {spec:?}"));
    match parts.as_slice() {
        ["conv", name, units, dim] => Ok(LayerSpec::conv(*name, num(units)?, num(dim)?)),
        ["dense", name, units] => Ok(LayerSpec::dense(*name, num(units)?)),
        _ => Err(format!("layer spec {spec:?} is not conv:NAME:UNITS:DIM or dense:NAME:UNITS")),
    }
}

fn load_config(path: &Path) -> StageResult<PipelineConfig> {
    PipelineConfig::load(path)
}

fn load_with<T, E: std::fmt::Display>(
    stage: &'static str,
    path: &Path,
    what: &str,
    producer: &str,
    load: impl FnOnce(PathBuf) -> Result<T, E>,
) -> StageResult<T> {
    require_checkpoint(stage, path, what, producer)?;
    load(path.to_path_buf()).map_err(|e| StageError::failure(stage, e))
}

fn execute(command: Command) -> StageResult<()> {
    match command {
        Command::Run { config } => run_pipeline(&load_config(&config)?),
        Command::Validate { input } => {
            let trace = stage_validate(&input)?;
            println!(
                "ok: {} samples, {} layers",
                trace.samples.len(),
                trace.manifest.layers.len()
            );
            Ok(())
        }
        Command::Cluster(a) => {
            let trace = stage_validate(&a.input)?;
            let (mut clustering, mut seed) = match &a.config {
                Some(c) => {
                    let cfg = load_config(c)?;
                    cfg.validate(&trace)?;
                    (cfg.clustering, cfg.seed)
                }
                None => (ClusteringConfig::default(), 0),
            };
            if let Some(k) = a.k {
                clustering.k = k;
            }
            if let Some(l) = a.linkage {
                clustering.linkage = l;
            }
            clustering.standardize |= a.standardize;
            if a.subsample.is_some() {
                clustering.subsample = a.subsample;
            }
            if let Some(s) = a.seed {
                seed = s;
            }
            stage_cluster(&trace, &clustering, seed, &a.out).map(|_| ())
        }
        Command::Sis(a) => {
            let clusterings = load_with("sis", &a.input, "clustering", "cluster", ClusteringSet::load)?;
            let trace = stage_validate(&a.trace)?;
            let mut clustering = match &a.config {
                Some(c) => load_config(c)?.clustering,
                None => ClusteringConfig::default(),
            };
            if let Some(m) = a.min_support {
                clustering.min_support = m;
            }
            stage_sis(&trace, &clusterings, &clustering, &a.out, a.csv.as_deref()).map(|_| ())
        }
        Command::Graph(a) => {
            let sis = load_with("graph", &a.input, "sis", "sis", SequentialInformationSystem::load)?;
            stage_graph(&sis, a.tolerance, &a.out).map(|_| ())
        }
        Command::Mine(a) => {
            let graph: FlowGraph = load_with("mine", &a.input, "graph", "graph", FlowGraph::load)?;
            let (mut mining, seed) = match &a.config {
                Some(c) => {
                    let cfg = load_config(c)?;
                    (cfg.mining, cfg.seed)
                }
                None => (MiningConfig::default(), 0),
            };
            if let Some(agg) = a.aggregator {
                mining.aggregator = agg;
            }
            mining.seed = a.seed.or(mining.seed);
            mining.population = a.population.or(mining.population);
            mining.generations = a.generations.or(mining.generations);
            mining.top_k = a.top_k.or(mining.top_k);
            let ea = mining.ea_config(seed);
            ea.validate().map_err(|e| StageError::validation("mine", e))?;
            let out = a.out.clone().unwrap_or_else(|| a.input.with_file_name("mining.ndjson"));
            let result = stage_mine(&graph, mining.aggregator, &ea, &out)?;
            for p in &result.paths {
                let names: Vec<&str> = p
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(l, &i)| graph.layers[l].nodes[i].value.as_str())
                    .collect();
                println!("{}\t{}\t{}", p.aggregate, p.feasible, names.join(" -> "));
            }
            Ok(())
        }
        Command::Report(a) => {
            let result: MiningResult = load_with("report", &a.input, "mining", "mine", MiningResult::load)?;
            let graph: FlowGraph = load_with("report", &a.graph, "graph", "graph", FlowGraph::load)?;
            stage_report(&graph, &result, a.dot.as_deref(), a.json.as_deref(), a.histograms.as_deref())
        }
        Command::Synth(a) => {
            let mut layers = a
                .layers
                .iter()
                .map(|s| parse_layer(s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| StageError::validation("synth", e))?;
            layers.push(LayerSpec::output(a.output_name, a.classes));
            let synth = generate_synthetic_trace(a.seed, &layers, a.samples, a.groups)
                .map_err(|e| StageError::validation("synth", e))?;
            write_trace(&synth.trace, &a.out).map_err(|e| StageError::failure("synth", e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("huretex: usage: {first}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("huretex: threads: {e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code as u8)
        }
    }
}
