//! Readable-twin artifacts: a Graphviz rendering of the flow graph, a JSON
//! report of the mined paths, and per-node class histograms as CSV.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pathmining::{edge_confidence, Aggregator, MiningResult, PredictionPath};
use crate::rsfg::FlowGraph;
use crate::scalar::Scalar;
use crate::trace::{LayerKind, TraceError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("path {path}: no edge from {from:?} (layer {layer}) to {to:?}")]
    MissingEdge {
        path: usize,
        layer: usize,
        from: String,
        to: String,
    },
    #[error("path {path} does not fit the graph: {message}")]
    Mismatch { path: usize, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn create(path: &Path) -> Result<BufWriter<File>, ReportError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| TraceError::io(path, e).into())
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn node_id<T>(graph: &FlowGraph<T>, layer: usize, node: usize) -> String {
    quote(&format!("L{layer}_{}", graph.layers[layer].nodes[node].value))
}

/// Renders the layered graph in DOT, marking the edges of `highlight` paths.
pub fn render_dot<T: Scalar>(graph: &FlowGraph<T>, highlight: Option<&[Vec<usize>]>) -> Result<String, ReportError> {
    let m = graph.n_layers();
    let mut on_path: Vec<std::collections::BTreeSet<(usize, usize)>> = vec![Default::default(); m.saturating_sub(1)];
    let mut nodes_on_path: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); m];
    for (p, nodes) in highlight.unwrap_or(&[]).iter().enumerate() {
        if nodes.len() != m {
            return Err(ReportError::Mismatch {
                path: p,
                message: format!("{} nodes for {m} layers", nodes.len()),
            });
        }
        for (l, &n) in nodes.iter().enumerate() {
            if n >= graph.layers[l].nodes.len() {
                return Err(ReportError::Mismatch {
                    path: p,
                    message: format!("layer {l} has no node {n}"),
                });
            }
            nodes_on_path[l].insert(n);
        }
        for (l, w) in nodes.windows(2).enumerate() {
            if graph.edge(l, w[0], w[1]).is_none() {
                return Err(ReportError::MissingEdge {
                    path: p,
                    layer: l,
                    from: graph.layers[l].nodes[w[0]].value.clone(),
                    to: graph.layers[l + 1].nodes[w[1]].value.clone(),
                });
            }
            on_path[l].insert((w[0], w[1]));
        }
    }

    let mut s = String::new();
    s.push_str("digraph rsfg {\n  rankdir=LR;\n  node [shape=box];\n");
    for (l, layer) in graph.layers.iter().enumerate() {
        let _ = writeln!(s, "  subgraph layer_{l} {{\n    rank=same;");
        for (i, node) in layer.nodes.iter().enumerate() {
            let label = quote(&format!("{}\nφ={}", node.value, node.through_flow));
            let extra = if nodes_on_path[l].contains(&i) { ", color=\"red\", penwidth=2" } else { "" };
            let _ = writeln!(s, "    {} [label={label}{extra}];", node_id(graph, l, i));
        }
        s.push_str("  }\n");
    }
    for (l, edges) in graph.edges.iter().enumerate() {
        for e in edges {
            let label = format!(
                "c={:.4} v={:.4} s={:.4}",
                e.certainty.to_f64_lossy(),
                e.covering.to_f64_lossy(),
                e.strength.to_f64_lossy()
            );
            let extra = if on_path[l].contains(&(e.from, e.to)) { ", color=\"red\", penwidth=3" } else { "" };
            let _ = writeln!(
                s,
                "  {} -> {} [label={}{extra}];",
                node_id(graph, l, e.from),
                node_id(graph, l + 1, e.to),
                quote(&label)
            );
        }
    }
    s.push_str("}\n");
    Ok(s)
}

pub fn export_dot<T: Scalar>(graph: &FlowGraph<T>, highlight: Option<&[Vec<usize>]>, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let text = render_dot(graph, highlight)?;
    let path = path.as_ref();
    let mut out = create(path)?;
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| TraceError::io(path, e).into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: LayerKind,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub layers: Vec<LayerSummary>,
    pub nodes: usize,
    pub edges: usize,
    pub n_objects: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub flow: u64,
    pub certainty: f64,
    pub covering: f64,
    pub strength: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    /// Node value per layer.
    pub nodes: Vec<String>,
    /// Coefficients per consecutive pair; `null` where the edge does not exist.
    pub edges: Vec<Option<EdgeEntry>>,
    pub aggregate: f64,
    pub feasible: bool,
    /// Class histogram of every node, keyed in class-alphabet order.
    pub histograms: Vec<IndexMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub graph_summary: GraphSummary,
    pub aggregator: Aggregator,
    pub paths: Vec<PathEntry>,
}

fn path_entry<T: Scalar>(graph: &FlowGraph<T>, index: usize, p: &PredictionPath<T>) -> Result<PathEntry, ReportError> {
    let m = graph.n_layers();
    if p.nodes.len() != m {
        return Err(ReportError::Mismatch {
            path: index,
            message: format!("{} nodes for {m} layers", p.nodes.len()),
        });
    }
    let mut nodes = Vec::with_capacity(m);
    let mut histograms = Vec::with_capacity(m);
    for (l, &n) in p.nodes.iter().enumerate() {
        let node = graph.layers[l].nodes.get(n).ok_or_else(|| ReportError::Mismatch {
            path: index,
            message: format!("layer {l} has no node {n}"),
        })?;
        nodes.push(node.value.clone());
        histograms.push(graph.classes.iter().cloned().zip(node.class_histogram.iter().copied()).collect());
    }
    let edges = p
        .nodes
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            graph.edge(l, w[0], w[1]).map(|e| EdgeEntry {
                flow: e.flow,
                certainty: e.certainty.to_f64_lossy(),
                covering: e.covering.to_f64_lossy(),
                strength: e.strength.to_f64_lossy(),
                confidence: edge_confidence(e.certainty, e.covering).to_f64_lossy(),
            })
        })
        .collect::<Vec<_>>();
    if edges.iter().all(Option::is_some) != p.feasible {
        return Err(ReportError::Mismatch {
            path: index,
            message: "feasibility flag disagrees with the graph".into(),
        });
    }
    Ok(PathEntry {
        nodes,
        edges,
        aggregate: p.aggregate.to_f64_lossy(),
        feasible: p.feasible,
        histograms,
    })
}

pub fn build_report<T: Scalar>(result: &MiningResult<T>, graph: &FlowGraph<T>) -> Result<PathReport, ReportError> {
    let graph_summary = GraphSummary {
        layers: graph
            .layers
            .iter()
            .map(|l| LayerSummary {
                name: l.name.clone(),
                kind: l.kind,
                nodes: l.nodes.len(),
            })
            .collect(),
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        n_objects: graph.n_objects,
    };
    let paths = result
        .paths
        .iter()
        .enumerate()
        .map(|(i, p)| path_entry(graph, i, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PathReport {
        graph_summary,
        aggregator: result.aggregator,
        paths,
    })
}

pub fn export_report_json<T: Scalar>(result: &MiningResult<T>, graph: &FlowGraph<T>, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let report = build_report(result, graph)?;
    let path = path.as_ref();
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| TraceError::io(path, e).into())
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<PathReport, ReportError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TraceError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `layer,node,class,count` rows in layer, node and class-alphabet
/// order, zero counts included.
pub fn write_histograms_csv<T: Scalar, W: Write>(graph: &FlowGraph<T>, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "node", "class", "count"])?;
    for layer in &graph.layers {
        for node in &layer.nodes {
            let value = if layer.kind == LayerKind::Conv { node.value.replace(',', "|") } else { node.value.clone() };
            for (class, count) in graph.classes.iter().zip(&node.class_histogram) {
                w.write_record([layer.name.as_str(), &value, class, &count.to_string()])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn export_histograms_csv<T: Scalar>(graph: &FlowGraph<T>, path: impl AsRef<Path>) -> Result<(), ReportError> {
    write_histograms_csv(graph, create(path.as_ref())?)
}
