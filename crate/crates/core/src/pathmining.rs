//! Confident prediction paths through a flow graph.
//!
//! Every edge gets a confidence, the harmonic mean of its certainty and
//! covering. A path (one node per layer) scores the fold of its edge
//! confidences under a triangular norm or co-norm; a path using an edge that
//! no object traversed scores 0 under every aggregator.
//!
//! Paths are ranked by aggregate (descending), then feasible before
//! infeasible, then by node-index sequence (ascending).

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rsfg::FlowGraph;
use crate::scalar::Scalar;
use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("path has {found} nodes, graph has {expected} layers")]
    PathLength { expected: usize, found: usize },
    #[error("node {node} does not exist in layer {layer}")]
    NoSuchNode { layer: usize, node: usize },
    #[error("graph has {0} layers; at least 2 are required")]
    Degenerate(usize),
    #[error("graph has no feasible path")]
    NoFeasiblePath,
    #[error("{count} node sequences exceed the enumeration limit {limit}")]
    LimitExceeded { count: u128, limit: u64 },
    #[error("invalid EA configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown aggregator {0:?}")]
    UnknownAggregator(String),
    #[error("malformed mining result at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Triangular norms and co-norms used to fold edge confidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    TnormMin,
    #[default]
    TnormProduct,
    TnormLukasiewicz,
    TconormMax,
    TconormProbsum,
    TconormBounded,
}

impl Aggregator {
    pub const ALL: [Aggregator; 6] = [
        Aggregator::TnormMin,
        Aggregator::TnormProduct,
        Aggregator::TnormLukasiewicz,
        Aggregator::TconormMax,
        Aggregator::TconormProbsum,
        Aggregator::TconormBounded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::TnormMin => "tnorm_min",
            Aggregator::TnormProduct => "tnorm_product",
            Aggregator::TnormLukasiewicz => "tnorm_lukasiewicz",
            Aggregator::TconormMax => "tconorm_max",
            Aggregator::TconormProbsum => "tconorm_probsum",
            Aggregator::TconormBounded => "tconorm_bounded",
        }
    }

    pub fn is_tnorm(self) -> bool {
        matches!(self, Aggregator::TnormMin | Aggregator::TnormProduct | Aggregator::TnormLukasiewicz)
    }

    /// Neutral element: 1 for t-norms, 0 for t-conorms.
    pub fn identity<T: Scalar>(self) -> T {
        if self.is_tnorm() {
            T::one()
        } else {
            T::zero()
        }
    }

    /// Applies the binary operation. Operands are ordered first so that
    /// every variant is exactly commutative and its identity is exact.
    pub fn apply<T: Scalar>(self, a: T, b: T) -> T {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        match self {
            Aggregator::TnormMin => lo,
            Aggregator::TnormProduct => a * b,
            Aggregator::TnormLukasiewicz => (lo - (T::one() - hi)).max(T::zero()),
            Aggregator::TconormMax => hi,
            Aggregator::TconormProbsum => hi + lo * (T::one() - hi),
            Aggregator::TconormBounded => (a + b).min(T::one()),
        }
    }

    /// Left fold; an empty sequence yields the identity.
    pub fn fold<T: Scalar>(self, values: impl IntoIterator<Item = T>) -> T {
        let mut it = values.into_iter();
        match it.next() {
            None => self.identity(),
            Some(first) => it.fold(first, |acc, v| self.apply(acc, v)),
        }
    }
}

impl FromStr for Aggregator {
    type Err = MiningError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| MiningError::UnknownAggregator(s.to_string()))
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Harmonic mean of certainty and covering.
pub fn edge_confidence<T: Scalar>(certainty: T, covering: T) -> T {
    let two = T::one() + T::one();
    two * certainty * covering / (certainty + covering)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPath<T> {
    /// One node index per layer.
    pub nodes: Vec<usize>,
    /// Confidence of each consecutive pair; 0 where no edge exists.
    pub edge_confidences: Vec<T>,
    pub aggregate: T,
    pub feasible: bool,
}

/// Ranking order of paths: better first.
pub fn rank_cmp<T: Scalar>(a: &PredictionPath<T>, b: &PredictionPath<T>) -> Ordering {
    b.aggregate
        .partial_cmp(&a.aggregate)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.feasible.cmp(&a.feasible))
        .then_with(|| a.nodes.cmp(&b.nodes))
}

fn check_nodes<T: Scalar>(nodes: &[usize], graph: &FlowGraph<T>) -> Result<(), MiningError> {
    if nodes.len() != graph.n_layers() {
        return Err(MiningError::PathLength {
            expected: graph.n_layers(),
            found: nodes.len(),
        });
    }
    for (layer, &node) in nodes.iter().enumerate() {
        if node >= graph.layers[layer].nodes.len() {
            return Err(MiningError::NoSuchNode { layer, node });
        }
    }
    Ok(())
}

fn score_unchecked<T: Scalar>(nodes: &[usize], graph: &FlowGraph<T>, agg: Aggregator) -> PredictionPath<T> {
    let mut feasible = true;
    let edge_confidences: Vec<T> = nodes
        .windows(2)
        .enumerate()
        .map(|(l, w)| match graph.edge(l, w[0], w[1]) {
            Some(e) => edge_confidence(e.certainty, e.covering),
            None => {
                feasible = false;
                T::zero()
            }
        })
        .collect();
    let aggregate = if feasible {
        agg.fold(edge_confidences.iter().copied())
    } else {
        T::zero()
    };
    PredictionPath {
        nodes: nodes.to_vec(),
        edge_confidences,
        aggregate,
        feasible,
    }
}

/// Scores a node sequence.
pub fn score_path<T: Scalar>(nodes: &[usize], graph: &FlowGraph<T>, agg: Aggregator) -> Result<PredictionPath<T>, MiningError> {
    check_nodes(nodes, graph)?;
    Ok(score_unchecked(nodes, graph, agg))
}

/// Aggregate confidence of a node sequence; 0 if any edge is missing.
pub fn path_aggregate<T: Scalar>(nodes: &[usize], graph: &FlowGraph<T>, agg: Aggregator) -> Result<T, MiningError> {
    score_path(nodes, graph, agg).map(|p| p.aggregate)
}

/// Exact best path by layered dynamic programming.
///
/// Each node keeps the prefixes that no lexicographically smaller prefix
/// matches or beats in value. Aggregators are monotone, so such a dominated
/// prefix can never win or win a tie, and the result equals the first entry
/// of [`enumerate_paths`].
pub fn best_path_exact<T: Scalar>(graph: &FlowGraph<T>, agg: Aggregator) -> Result<PredictionPath<T>, MiningError> {
    let m = graph.n_layers();
    if m < 2 {
        return Err(MiningError::Degenerate(m));
    }
    // value None stands for the identity before the first edge
    let mut frontier: Vec<Vec<(Option<T>, Vec<usize>)>> =
        (0..graph.layers[0].nodes.len()).map(|n| vec![(None, vec![n])]).collect();
    for l in 0..m - 1 {
        let mut candidates: Vec<Vec<(Option<T>, Vec<usize>)>> = vec![Vec::new(); graph.layers[l + 1].nodes.len()];
        for e in &graph.edges[l] {
            let conf = edge_confidence(e.certainty, e.covering);
            for (value, prefix) in &frontier[e.from] {
                let v = match value {
                    None => conf,
                    Some(v) => agg.apply(*v, conf),
                };
                let mut p = prefix.clone();
                p.push(e.to);
                candidates[e.to].push((Some(v), p));
            }
        }
        frontier = candidates
            .into_iter()
            .map(|mut cands| {
                cands.sort_by(|a, b| a.1.cmp(&b.1));
                let mut kept: Vec<(Option<T>, Vec<usize>)> = Vec::new();
                for c in cands {
                    if kept.last().is_none_or(|k| c.0 > k.0) {
                        kept.push(c);
                    }
                }
                kept
            })
            .collect();
    }
    let best = frontier
        .into_iter()
        .flatten()
        .min_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(&b.1)))
        .ok_or(MiningError::NoFeasiblePath)?;
    Ok(score_unchecked(&best.1, graph, agg))
}

/// Scores every node sequence, best first. Fails when the product of layer
/// sizes exceeds `limit`.
pub fn enumerate_paths<T: Scalar>(graph: &FlowGraph<T>, agg: Aggregator, limit: u64) -> Result<Vec<PredictionPath<T>>, MiningError> {
    let sizes = graph.layer_sizes();
    let count = sizes.iter().try_fold(1u128, |acc, &s| acc.checked_mul(s as u128)).unwrap_or(u128::MAX);
    if count > limit as u128 {
        return Err(MiningError::LimitExceeded { count, limit });
    }
    let mut out = Vec::with_capacity(count as usize);
    if sizes.contains(&0) {
        return Ok(out);
    }
    let mut nodes = vec![0usize; sizes.len()];
    loop {
        out.push(score_unchecked(&nodes, graph, agg));
        // odometer in lexicographic order
        let mut l = sizes.len();
        loop {
            if l == 0 {
                out.sort_by(rank_cmp);
                return Ok(out);
            }
            l -= 1;
            nodes[l] += 1;
            if nodes[l] < sizes[l] {
                break;
            }
            nodes[l] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    /// Per-gene mutation probability; `None` means `1 / layer count`.
    pub mutation_prob: Option<f64>,
    pub tournament_size: usize,
    pub elitism: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for EaConfig {
    fn default() -> Self {
        EaConfig {
            population: 100,
            generations: 200,
            crossover_prob: 0.9,
            mutation_prob: None,
            tournament_size: 2,
            elitism: 1,
            top_k: 5,
            seed: 0,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        let bad = |m: &str| Err(MiningError::InvalidConfig(m.to_string()));
        if self.population == 0 {
            return bad("population must be positive");
        }
        if self.top_k == 0 {
            return bad("top_k must be positive");
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return bad("crossover_prob must lie in [0, 1]");
        }
        if let Some(p) = self.mutation_prob {
            if !(0.0..=1.0).contains(&p) {
                return bad("mutation_prob must lie in [0, 1]");
            }
        }
        if self.elitism >= self.population {
            return bad("elitism must be smaller than population");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningResult<T> {
    pub aggregator: Aggregator,
    /// Distinct paths, best first.
    pub paths: Vec<PredictionPath<T>>,
    pub evaluations: u64,
    /// Exact optimum, when it has been computed for cross-checking.
    pub oracle_optimum: Option<T>,
}

/// Best `top_k` distinct paths seen so far.
struct Archive<T> {
    top_k: usize,
    paths: Vec<PredictionPath<T>>,
}

impl<T: Scalar> Archive<T> {
    fn offer(&mut self, p: &PredictionPath<T>) {
        if self.paths.iter().any(|q| q.nodes == p.nodes) {
            return;
        }
        if self.paths.len() == self.top_k && rank_cmp(p, self.paths.last().unwrap()) != Ordering::Less {
            return;
        }
        let at = self.paths.partition_point(|q| rank_cmp(q, p) == Ordering::Less);
        self.paths.insert(at, p.clone());
        self.paths.truncate(self.top_k);
    }
}

/// Generational evolutionary search for the most confident paths.
///
/// A chromosome holds one node index per layer and its fitness is the path
/// aggregate. All randomness comes from one ChaCha8 stream seeded by
/// `config.seed`, consumed in this order:
///
/// 1. initialization: for each individual, for each layer, one node draw;
/// 2. per generation, for each offspring pair: `tournament_size` index draws
///    for each parent, one crossover coin, one cut point in `1..layers` if
///    the coin succeeded, then per gene of the first child and then of the
///    second child one mutation coin, followed by a node draw when it succeeds.
///
/// The `elitism` best individuals are copied unchanged. Fitness evaluation
/// runs in parallel but consumes no randomness.
pub fn ea_mine<T: Scalar>(graph: &FlowGraph<T>, agg: Aggregator, config: &EaConfig) -> Result<MiningResult<T>, MiningError> {
    config.validate()?;
    let m = graph.n_layers();
    if m < 2 {
        return Err(MiningError::Degenerate(m));
    }
    let sizes = graph.layer_sizes();
    if let Some(layer) = sizes.iter().position(|&s| s == 0) {
        return Err(MiningError::NoSuchNode { layer, node: 0 });
    }
    let mutation_prob = config.mutation_prob.unwrap_or(1.0 / m as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut archive = Archive {
        top_k: config.top_k,
        paths: Vec::new(),
    };
    let mut evaluations = 0u64;

    let evaluate = |genomes: Vec<Vec<usize>>| -> Vec<PredictionPath<T>> {
        genomes.par_iter().map(|g| score_unchecked(g, graph, agg)).collect()
    };

    let initial: Vec<Vec<usize>> = (0..config.population)
        .map(|_| sizes.iter().map(|&s| rng.gen_range(0..s)).collect())
        .collect();
    let mut population = evaluate(initial);
    evaluations += population.len() as u64;
    population.iter().for_each(|p| archive.offer(p));

    for _ in 0..config.generations {
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| rank_cmp(&population[a], &population[b]));
        let elites: Vec<PredictionPath<T>> = order[..config.elitism].iter().map(|&i| population[i].clone()).collect();

        let n_children = config.population - elites.len();
        let mut children: Vec<Vec<usize>> = Vec::with_capacity(n_children + 1);
        while children.len() < n_children {
            let p1 = tournament(&population, config.tournament_size, &mut rng);
            let p2 = tournament(&population, config.tournament_size, &mut rng);
            let (mut c1, mut c2) = (population[p1].nodes.clone(), population[p2].nodes.clone());
            if rng.gen::<f64>() < config.crossover_prob {
                let point = rng.gen_range(1..m);
                for l in point..m {
                    std::mem::swap(&mut c1[l], &mut c2[l]);
                }
            }
            for child in [&mut c1, &mut c2] {
                for (gene, &size) in child.iter_mut().zip(&sizes) {
                    if rng.gen::<f64>() < mutation_prob {
                        *gene = rng.gen_range(0..size);
                    }
                }
            }
            children.push(c1);
            if children.len() < n_children {
                children.push(c2);
            }
        }
        let scored = evaluate(children);
        evaluations += scored.len() as u64;
        scored.iter().for_each(|p| archive.offer(p));
        population = elites;
        population.extend(scored);
    }

    Ok(MiningResult {
        aggregator: agg,
        paths: archive.paths,
        evaluations,
        oracle_optimum: None,
    })
}

fn tournament<T: Scalar>(population: &[PredictionPath<T>], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.gen_range(0..population.len());
    for _ in 1..size {
        let challenger = rng.gen_range(0..population.len());
        if rank_cmp(&population[challenger], &population[best]) == Ordering::Less {
            best = challenger;
        }
    }
    best
}

pub const MINING_FORMAT: &str = "huretex-mining";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultHeader {
    format: String,
    version: u32,
    aggregator: Aggregator,
    evaluations: u64,
    oracle_optimum: Option<f64>,
    num_paths: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathLine {
    nodes: Vec<usize>,
    edge_confidences: Vec<f64>,
    aggregate: f64,
    feasible: bool,
}

impl<T: Scalar> MiningResult<T> {
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        serde_json::to_writer(
            &mut out,
            &ResultHeader {
                format: MINING_FORMAT.into(),
                version: 1,
                aggregator: self.aggregator,
                evaluations: self.evaluations,
                oracle_optimum: self.oracle_optimum.map(Scalar::to_f64_lossy),
                num_paths: self.paths.len(),
            },
        )?;
        out.write_all(b"\n")?;
        for p in &self.paths {
            serde_json::to_writer(
                &mut out,
                &PathLine {
                    nodes: p.nodes.clone(),
                    edge_confidences: p.edge_confidences.iter().map(|c| c.to_f64_lossy()).collect(),
                    aggregate: p.aggregate.to_f64_lossy(),
                    feasible: p.feasible,
                },
            )?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, MiningError> {
        let bad = |line: usize, message: String| MiningError::Malformed { line, message };
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| bad(1, "empty file".into()))?
            .map_err(|e| bad(1, e.to_string()))?;
        let h: ResultHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if h.format != MINING_FORMAT || h.version != 1 {
            return Err(bad(1, format!("not a {MINING_FORMAT} v1 file")));
        }
        let mut paths = Vec::with_capacity(h.num_paths);
        for i in 0..h.num_paths {
            let text = lines
                .next()
                .ok_or_else(|| bad(i + 2, "unexpected end of file".into()))?
                .map_err(|e| bad(i + 2, e.to_string()))?;
            let p: PathLine = serde_json::from_str(&text).map_err(|e| bad(i + 2, e.to_string()))?;
            paths.push(PredictionPath {
                nodes: p.nodes,
                edge_confidences: p.edge_confidences.into_iter().map(T::from_f64_lossy).collect(),
                aggregate: T::from_f64_lossy(p.aggregate),
                feasible: p.feasible,
            });
        }
        Ok(MiningResult {
            aggregator: h.aggregator,
            paths,
            evaluations: h.evaluations,
            oracle_optimum: h.oracle_optimum.map(T::from_f64_lossy),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MiningError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| TraceError::io(path, e))?;
        self.write(BufWriter::new(file)).map_err(|e| TraceError::io(path, e).into())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MiningError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
        Self::read(BufReader::new(file))
    }
}
