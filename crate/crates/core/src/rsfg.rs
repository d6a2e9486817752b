//! Rough set flow graph built from a sequential information system.
//!
//! Layer `i` holds one node per realized value of attribute `i`. An edge joins
//! two nodes of consecutive layers when at least one object takes both
//! values. With `φ(n)` the number of objects through a node, `φ(n, n')` the
//! number through an edge and `N` the object count:
//!
//! * certainty `= φ(n, n') / φ(n)`
//! * covering  `= φ(n, n') / φ(n')`
//! * strength  `= φ(n, n') / N`
//!
//! Flows are kept as exact integers next to the floating point coefficients.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::sis::SequentialInformationSystem;
use crate::trace::{LayerKind, TraceError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("a flow graph needs at least 2 attributes, got {0}")]
    TooFewAttributes(usize),
    #[error("the information system has no objects")]
    Empty,
    #[error("malformed graph file at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowNode {
    pub value: String,
    pub through_flow: u64,
    /// Object count per class, indexed like `FlowGraph::classes`.
    pub class_histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEdge<T> {
    /// Node index in the source layer.
    pub from: usize,
    /// Node index in the next layer.
    pub to: usize,
    pub flow: u64,
    pub certainty: T,
    pub covering: T,
    pub strength: T,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowLayer {
    pub name: String,
    pub kind: LayerKind,
    pub nodes: Vec<FlowNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph<T> {
    pub layers: Vec<FlowLayer>,
    /// `edges[i]` joins layer `i` to layer `i + 1`, sorted by `(from, to)`.
    pub edges: Vec<Vec<FlowEdge<T>>>,
    pub n_objects: u64,
    pub classes: Vec<String>,
}

/// Builds the flow graph in one counting pass over the objects.
pub fn build_rsfg<T: Scalar>(sis: &SequentialInformationSystem) -> Result<FlowGraph<T>, GraphError> {
    let m = sis.n_attributes();
    if m < 2 {
        return Err(GraphError::TooFewAttributes(m));
    }
    let n = sis.n_objects();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let labels = sis.label_indices();
    let n_classes = sis.classes().len();
    let mut layers: Vec<FlowLayer> = sis
        .attributes()
        .iter()
        .enumerate()
        .map(|(a, attr)| FlowLayer {
            name: attr.name.clone(),
            kind: attr.kind,
            nodes: sis
                .alphabet(a)
                .iter()
                .map(|v| FlowNode {
                    value: v.clone(),
                    through_flow: 0,
                    class_histogram: vec![0; n_classes],
                })
                .collect(),
        })
        .collect();
    let mut pair_counts: Vec<std::collections::BTreeMap<(usize, usize), u64>> = vec![Default::default(); m - 1];
    for (o, &class) in labels.iter().enumerate() {
        let row = sis.row(o);
        for (a, &v) in row.iter().enumerate() {
            let node = &mut layers[a].nodes[v as usize];
            node.through_flow += 1;
            node.class_histogram[class] += 1;
        }
        for a in 0..m - 1 {
            *pair_counts[a].entry((row[a] as usize, row[a + 1] as usize)).or_insert(0) += 1;
        }
    }
    let total = n as u64;
    let edges = pair_counts
        .into_iter()
        .enumerate()
        .map(|(a, counts)| {
            counts
                .into_iter()
                .map(|((from, to), flow)| FlowEdge {
                    from,
                    to,
                    flow,
                    certainty: T::ratio(flow, layers[a].nodes[from].through_flow),
                    covering: T::ratio(flow, layers[a + 1].nodes[to].through_flow),
                    strength: T::ratio(flow, total),
                })
                .collect()
        })
        .collect();
    Ok(FlowGraph {
        layers,
        edges,
        n_objects: total,
        classes: sis.classes().to_vec(),
    })
}

impl<T: Scalar> FlowGraph<T> {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.nodes.len()).collect()
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(|l| l.nodes.len()).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// The edge from node `from` of layer `layer` to node `to` of layer `layer + 1`.
    pub fn edge(&self, layer: usize, from: usize, to: usize) -> Option<&FlowEdge<T>> {
        let edges = self.edges.get(layer)?;
        edges
            .binary_search_by(|e| (e.from, e.to).cmp(&(from, to)))
            .ok()
            .map(|i| &edges[i])
    }

    pub fn edge_mut(&mut self, layer: usize, from: usize, to: usize) -> Option<&mut FlowEdge<T>> {
        let edges = self.edges.get_mut(layer)?;
        let i = edges.binary_search_by(|e| (e.from, e.to).cmp(&(from, to))).ok()?;
        Some(&mut edges[i])
    }

    /// Edges leaving node `from` of layer `layer`.
    pub fn outgoing(&self, layer: usize, from: usize) -> &[FlowEdge<T>] {
        let Some(edges) = self.edges.get(layer) else { return &[] };
        let lo = edges.partition_point(|e| e.from < from);
        let hi = edges.partition_point(|e| e.from <= from);
        &edges[lo..hi]
    }

    pub fn node_index(&self, layer: usize, value: &str) -> Option<usize> {
        self.layers.get(layer)?.nodes.iter().position(|n| n.value == value)
    }

    /// Number of objects per class.
    pub fn class_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.classes.len()];
        for node in &self.layers[0].nodes {
            for (t, c) in totals.iter_mut().zip(&node.class_histogram) {
                *t += c;
            }
        }
        totals
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Outgoing certainties of a node do not sum to 1.
    CertaintyOut,
    /// Incoming coverings of a node do not sum to 1.
    CoveringIn,
    /// Strengths between two layers do not sum to 1.
    Strength,
    /// Outgoing integer flows differ from the node's through-flow.
    FlowOut,
    /// Incoming integer flows differ from the node's through-flow.
    FlowIn,
    /// Class histogram does not add up to the through-flow.
    Histogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub layer: usize,
    /// Offending node; `None` for layer-pair violations.
    pub node: Option<usize>,
    pub residual: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.node {
            Some(n) => write!(f, "{:?} at layer {} node {}: residual {:e}", self.kind, self.layer, n, self.residual),
            None => write!(f, "{:?} between layers {} and {}: residual {:e}", self.kind, self.layer, self.layer + 1, self.residual),
        }
    }
}

/// Checks the flow conservation laws; an empty report means every sum holds within `tolerance`.
///
/// The integer flow balances are checked exactly in addition to the three
/// coefficient sums.
pub fn verify_conservation<T: Scalar>(graph: &FlowGraph<T>, tolerance: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (l, layer) in graph.layers.iter().enumerate() {
        for (i, node) in layer.nodes.iter().enumerate() {
            let hist: u64 = node.class_histogram.iter().sum();
            if hist != node.through_flow {
                out.push(Violation {
                    kind: ViolationKind::Histogram,
                    layer: l,
                    node: Some(i),
                    residual: hist as f64 - node.through_flow as f64,
                });
            }
        }
    }
    for (l, edges) in graph.edges.iter().enumerate() {
        let (src, dst) = (&graph.layers[l], &graph.layers[l + 1]);
        let mut cert = vec![0.0f64; src.nodes.len()];
        let mut out_flow = vec![0u64; src.nodes.len()];
        let mut cov = vec![0.0f64; dst.nodes.len()];
        let mut in_flow = vec![0u64; dst.nodes.len()];
        let mut strength = 0.0f64;
        for e in edges {
            cert[e.from] += e.certainty.to_f64_lossy();
            out_flow[e.from] += e.flow;
            cov[e.to] += e.covering.to_f64_lossy();
            in_flow[e.to] += e.flow;
            strength += e.strength.to_f64_lossy();
        }
        for (i, node) in src.nodes.iter().enumerate() {
            if (cert[i] - 1.0).abs() > tolerance {
                out.push(Violation { kind: ViolationKind::CertaintyOut, layer: l, node: Some(i), residual: cert[i] - 1.0 });
            }
            if out_flow[i] != node.through_flow {
                out.push(Violation {
                    kind: ViolationKind::FlowOut,
                    layer: l,
                    node: Some(i),
                    residual: out_flow[i] as f64 - node.through_flow as f64,
                });
            }
        }
        for (i, node) in dst.nodes.iter().enumerate() {
            if (cov[i] - 1.0).abs() > tolerance {
                out.push(Violation { kind: ViolationKind::CoveringIn, layer: l + 1, node: Some(i), residual: cov[i] - 1.0 });
            }
            if in_flow[i] != node.through_flow {
                out.push(Violation {
                    kind: ViolationKind::FlowIn,
                    layer: l + 1,
                    node: Some(i),
                    residual: in_flow[i] as f64 - node.through_flow as f64,
                });
            }
        }
        if (strength - 1.0).abs() > tolerance {
            out.push(Violation { kind: ViolationKind::Strength, layer: l, node: None, residual: strength - 1.0 });
        }
    }
    out
}

pub const GRAPH_FORMAT: &str = "huretex-graph";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphHeader {
    format: String,
    version: u32,
    n_objects: u64,
    classes: Vec<String>,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerHeader {
    name: String,
    kind: LayerKind,
    nodes: usize,
    edges_out: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeLine {
    node: (usize, usize),
    value: String,
    flow: u64,
    histogram: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeLine {
    edge: (usize, usize, usize),
    flow: u64,
    certainty: f64,
    covering: f64,
    strength: f64,
}

impl<T: Scalar> FlowGraph<T> {
    /// NDJSON sidecar: header, then every node, then every edge.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = GraphHeader {
            format: GRAPH_FORMAT.into(),
            version: 1,
            n_objects: self.n_objects,
            classes: self.classes.clone(),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, layer)| LayerHeader {
                    name: layer.name.clone(),
                    kind: layer.kind,
                    nodes: layer.nodes.len(),
                    edges_out: self.edges.get(l).map_or(0, Vec::len),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, node) in layer.nodes.iter().enumerate() {
                serde_json::to_writer(
                    &mut out,
                    &NodeLine {
                        node: (l, i),
                        value: node.value.clone(),
                        flow: node.through_flow,
                        histogram: node.class_histogram.clone(),
                    },
                )?;
                out.write_all(b"\n")?;
            }
        }
        for (l, edges) in self.edges.iter().enumerate() {
            for e in edges {
                serde_json::to_writer(
                    &mut out,
                    &EdgeLine {
                        edge: (l, e.from, e.to),
                        flow: e.flow,
                        certainty: e.certainty.to_f64_lossy(),
                        covering: e.covering.to_f64_lossy(),
                        strength: e.strength.to_f64_lossy(),
                    },
                )?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, GraphError> {
        let bad = |line: usize, message: String| GraphError::Malformed { line, message };
        let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next_line = |what: &str| -> Result<(usize, String), GraphError> {
            match lines.next() {
                Some((n, Ok(text))) => Ok((n, text)),
                Some((n, Err(e))) => Err(bad(n, e.to_string())),
                None => Err(bad(0, format!("unexpected end of file, expected {what}"))),
            }
        };
        let (_, first) = next_line("header")?;
        let h: GraphHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if h.format != GRAPH_FORMAT || h.version != 1 {
            return Err(bad(1, format!("not a {GRAPH_FORMAT} v1 file")));
        }
        if h.layers.len() < 2 {
            return Err(bad(1, "at least two layers required".into()));
        }
        let mut layers = Vec::with_capacity(h.layers.len());
        for (l, lh) in h.layers.iter().enumerate() {
            let mut nodes = Vec::with_capacity(lh.nodes);
            for i in 0..lh.nodes {
                let (n, text) = next_line("node")?;
                let nl: NodeLine = serde_json::from_str(&text).map_err(|e| bad(n, e.to_string()))?;
                if nl.node != (l, i) {
                    return Err(bad(n, format!("expected node ({l},{i})")));
                }
                if nl.histogram.len() != h.classes.len() {
                    return Err(bad(n, "histogram length differs from class count".into()));
                }
                nodes.push(FlowNode {
                    value: nl.value,
                    through_flow: nl.flow,
                    class_histogram: nl.histogram,
                });
            }
            layers.push(FlowLayer {
                name: lh.name.clone(),
                kind: lh.kind,
                nodes,
            });
        }
        let mut edges = Vec::with_capacity(h.layers.len() - 1);
        for l in 0..h.layers.len() - 1 {
            let mut pair: Vec<FlowEdge<T>> = Vec::with_capacity(h.layers[l].edges_out);
            for _ in 0..h.layers[l].edges_out {
                let (n, text) = next_line("edge")?;
                let el: EdgeLine = serde_json::from_str(&text).map_err(|e| bad(n, e.to_string()))?;
                let (el_layer, from, to) = el.edge;
                if el_layer != l || from >= layers[l].nodes.len() || to >= layers[l + 1].nodes.len() {
                    return Err(bad(n, format!("edge ({el_layer},{from},{to}) out of place")));
                }
                if pair.last().is_some_and(|p| (p.from, p.to) >= (from, to)) {
                    return Err(bad(n, "edges must be sorted by (from, to)".into()));
                }
                pair.push(FlowEdge {
                    from,
                    to,
                    flow: el.flow,
                    certainty: T::from_f64_lossy(el.certainty),
                    covering: T::from_f64_lossy(el.covering),
                    strength: T::from_f64_lossy(el.strength),
                });
            }
            edges.push(pair);
        }
        if let Ok((n, extra)) = next_line("end") {
            if !extra.trim().is_empty() {
                return Err(bad(n, "trailing data".into()));
            }
        }
        Ok(FlowGraph {
            layers,
            edges,
            n_objects: h.n_objects,
            classes: h.classes,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| TraceError::io(path, e))?;
        self.write(BufWriter::new(file)).map_err(|e| TraceError::io(path, e).into())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
        Self::read(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sis::{fixture, Attribute};

    fn fixture_graph() -> FlowGraph<f64> {
        build_rsfg(&fixture::sis()).unwrap()
    }

    /// Counts straight off the fixture rows.
    fn brute_flow(a: usize, va: &str, vb: &str) -> (usize, usize, usize) {
        let rows = &fixture::ROWS;
        let both = rows.iter().filter(|r| r[a] == va && r[a + 1] == vb).count();
        let from = rows.iter().filter(|r| r[a] == va).count();
        let to = rows.iter().filter(|r| r[a + 1] == vb).count();
        (both, from, to)
    }

    #[test]
    fn fixture_edges_match_counting_oracle() {
        let g = fixture_graph();
        let x1 = g.node_index(0, "x1").unwrap();
        let x2 = g.node_index(0, "x2").unwrap();
        let y1 = g.node_index(1, "y1").unwrap();
        let y2 = g.node_index(1, "y2").unwrap();
        let e = g.edge(0, x1, y1).unwrap();
        assert_eq!((e.flow, e.certainty, e.covering, e.strength), (3, 0.75, 0.75, 0.375));
        let e = g.edge(0, x1, y2).unwrap();
        assert_eq!((e.flow, e.certainty, e.covering, e.strength), (1, 0.25, 0.25, 0.125));
        for (a, vals_a, vals_b) in [(0, ["x1", "x2"], ["y1", "y2"]), (1, ["y1", "y2"], ["0", "1"])] {
            for va in vals_a {
                for vb in vals_b {
                    let (both, from, to) = brute_flow(a, va, vb);
                    let e = g.edge(a, g.node_index(a, va).unwrap(), g.node_index(a + 1, vb).unwrap()).unwrap();
                    assert_eq!(e.flow as usize, both);
                    assert_eq!(e.certainty, both as f64 / from as f64);
                    assert_eq!(e.covering, both as f64 / to as f64);
                    assert_eq!(e.strength, both as f64 / 8.0);
                }
            }
        }
        let _ = x2;
        assert_eq!(g.node_count(), 6);
        assert_eq!(g.edge_count(), 8);
    }

    #[test]
    fn fixture_histograms() {
        let g = fixture_graph();
        let y2 = &g.layers[1].nodes[g.node_index(1, "y2").unwrap()];
        assert_eq!(y2.class_histogram, vec![1, 3]);
        assert_eq!(y2.through_flow, 4);
        for layer in &g.layers {
            let mut per_class = vec![0; 2];
            for n in &layer.nodes {
                per_class[0] += n.class_histogram[0];
                per_class[1] += n.class_histogram[1];
            }
            assert_eq!(per_class, vec![4, 4]);
        }
    }

    #[test]
    fn identity_graph() {
        let attributes = vec![
            Attribute { name: "a".into(), kind: LayerKind::Dense },
            Attribute { name: "o".into(), kind: LayerKind::Output },
        ];
        let rows = vec![vec!["v", "c"]; 5];
        let sis = SequentialInformationSystem::from_rows(attributes, vec!["c".into()], (0..5).map(|i| i.to_string()).collect(), &rows).unwrap();
        let g: FlowGraph<f64> = build_rsfg(&sis).unwrap();
        assert_eq!(g.edge_count(), 1);
        let e = &g.edges[0][0];
        assert_eq!((e.certainty, e.covering, e.strength), (1.0, 1.0, 1.0));
        assert!(verify_conservation(&g, 1e-12).is_empty());
    }

    #[test]
    fn rejects_degenerate_systems() {
        let attributes = vec![Attribute { name: "o".into(), kind: LayerKind::Output }];
        let sis = SequentialInformationSystem::from_rows(attributes, vec!["c".into()], vec!["0".into()], &[vec!["c"]]).unwrap();
        assert!(matches!(build_rsfg::<f64>(&sis), Err(GraphError::TooFewAttributes(1))));
        let attributes = vec![
            Attribute { name: "a".into(), kind: LayerKind::Dense },
            Attribute { name: "o".into(), kind: LayerKind::Output },
        ];
        let empty = SequentialInformationSystem::from_rows::<&str>(attributes, vec!["c".into()], vec![], &[]).unwrap();
        assert!(matches!(build_rsfg::<f64>(&empty), Err(GraphError::Empty)));
    }

    #[test]
    fn conservation_holds_and_detects_perturbation() {
        let mut g = fixture_graph();
        assert!(verify_conservation(&g, 1e-9).is_empty());
        g.edge_mut(0, 0, 0).unwrap().certainty += 0.01;
        let report = verify_conservation(&g, 1e-9);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, ViolationKind::CertaintyOut);
        assert_eq!((report[0].layer, report[0].node), (0, Some(0)));
        assert!((report[0].residual - 0.01).abs() < 1e-12);
    }

    #[test]
    fn exact_flow_checks() {
        let mut g = fixture_graph();
        g.edges[1][0].flow += 1;
        let kinds: Vec<ViolationKind> = verify_conservation(&g, 1e-9).into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::FlowOut, ViolationKind::FlowIn]);
    }

    #[test]
    fn coefficient_identities() {
        let g = fixture_graph();
        let n = g.n_objects as f64;
        for (l, edges) in g.edges.iter().enumerate() {
            for e in edges {
                let pf = g.layers[l].nodes[e.from].through_flow as f64;
                let pt = g.layers[l + 1].nodes[e.to].through_flow as f64;
                assert!((e.strength - pf / n * e.certainty).abs() <= 1e-12);
                assert!((e.strength - pt / n * e.covering).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sidecar_round_trip_is_deterministic() {
        let g = fixture_graph();
        let mut a = Vec::new();
        g.write(&mut a).unwrap();
        let back = FlowGraph::<f64>::read(a.as_slice()).unwrap();
        assert_eq!(back, g);
        let mut b = Vec::new();
        build_rsfg::<f64>(&fixture::sis()).unwrap().write(&mut b).unwrap();
        assert_eq!(a, b);
        let single: FlowGraph<f32> = FlowGraph::read(a.as_slice()).unwrap();
        assert_eq!(single.edges[0][0].certainty, 0.75f32);
    }

    #[test]
    fn outgoing_slices() {
        let g = fixture_graph();
        assert_eq!(g.outgoing(0, 0).len(), 2);
        assert!(g.outgoing(0, 5).is_empty());
        assert!(g.outgoing(7, 0).is_empty());
    }
}
