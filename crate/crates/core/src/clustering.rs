//! Agglomerative hierarchical clustering of per-unit activation artifacts.
//!
//! Each clustered unit (one conv filter, or a whole dense layer) gets its own
//! dendrogram under Euclidean distance, and a flat cut of that dendrogram
//! provides the symbolic cluster ids consumed by the information system.
//!
//! Cluster labels follow the usual convention: leaves are `0..n`, and the
//! cluster created by merge `s` is labelled `n + s`.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::trace::{ActivationTrace, LayerKind, TraceError};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cannot cluster an empty set of vectors")]
    Empty,
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("vector {index} contains a non-finite value")]
    NonFinite { index: usize },
    #[error("k={k} is out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("layer {0:?} is the output layer and carries labels, not activations")]
    OutputLayer(String),
    #[error("unknown linkage {0:?}")]
    UnknownLinkage(String),
    #[error("malformed clustering file at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
    Average,
    Complete,
    Single,
}

impl Linkage {
    pub const ALL: [Linkage; 4] = [Linkage::Ward, Linkage::Average, Linkage::Complete, Linkage::Single];

    pub fn as_str(self) -> &'static str {
        match self {
            Linkage::Ward => "ward",
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Single => "single",
        }
    }
}

impl FromStr for Linkage {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Linkage::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ClusterError::UnknownLinkage(s.to_string()))
    }
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge<T> {
    pub left: usize,
    pub right: usize,
    pub height: T,
    pub size: usize,
}

/// Stepwise dendrogram: `n_leaves - 1` merges in non-decreasing height order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram<T> {
    pub n_leaves: usize,
    pub merges: Vec<Merge<T>>,
}

/// Condensed upper-triangle storage of pairwise dissimilarities.
struct Condensed<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> Condensed<T> {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> T {
        self.data[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

fn check_vectors<T: Scalar>(vectors: &[Vec<T>]) -> Result<(), ClusterError> {
    let first = vectors.first().ok_or(ClusterError::Empty)?;
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != first.len() {
            return Err(ClusterError::DimensionMismatch {
                index,
                expected: first.len(),
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::NonFinite { index });
        }
    }
    Ok(())
}

/// Builds the full merge tree of `vectors` under Euclidean distance.
///
/// At every step the pair with the smallest linkage distance is merged; ties
/// go to the pair with the lexicographically smallest `(min label, max label)`.
/// Each active cluster caches its nearest neighbour, which keeps the common
/// case near O(n²).
pub fn agglomerate<T: Scalar>(vectors: &[Vec<T>], linkage: Linkage) -> Result<Dendrogram<T>, ClusterError> {
    check_vectors(vectors)?;
    let n = vectors.len();
    let mut dist = Condensed {
        n,
        data: Vec::with_capacity(n * n.saturating_sub(1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            let sq = squared_distance(&vectors[i], &vectors[j]);
            // ward runs on squared distances, the others on plain ones
            dist.data.push(if linkage == Linkage::Ward { sq } else { sq.sqrt() });
        }
    }

    let mut label: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut nn: Vec<usize> = vec![usize::MAX; n];

    let key_cmp = |dist: &Condensed<T>, label: &[usize], i: usize, a: usize, b: usize| -> Ordering {
        let da = dist.get(i, a);
        let db = dist.get(i, b);
        da.partial_cmp(&db).unwrap_or(Ordering::Equal).then_with(|| {
            let ka = (label[i].min(label[a]), label[i].max(label[a]));
            let kb = (label[i].min(label[b]), label[i].max(label[b]));
            ka.cmp(&kb)
        })
    };
    let nearest = |dist: &Condensed<T>, label: &[usize], active: &[bool], i: usize| -> usize {
        let mut best = usize::MAX;
        for j in (0..n).filter(|&j| j != i && active[j]) {
            if best == usize::MAX || key_cmp(dist, label, i, j, best) == Ordering::Less {
                best = j;
            }
        }
        best
    };
    for (i, slot) in nn.iter_mut().enumerate() {
        *slot = nearest(&dist, &label, &active, i);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut last_height = T::zero();
    for step in 0..n.saturating_sub(1) {
        // global minimum over cached neighbours
        let mut a = usize::MAX;
        for i in (0..n).filter(|&i| active[i]) {
            if a == usize::MAX {
                a = i;
                continue;
            }
            let di = dist.get(i, nn[i]);
            let da = dist.get(a, nn[a]);
            let ord = di.partial_cmp(&da).unwrap_or(Ordering::Equal).then_with(|| {
                let ki = (label[i].min(label[nn[i]]), label[i].max(label[nn[i]]));
                let ka = (label[a].min(label[nn[a]]), label[a].max(label[nn[a]]));
                ki.cmp(&ka)
            });
            if ord == Ordering::Less {
                a = i;
            }
        }
        let b = nn[a];
        let (keep, gone) = if a < b { (a, b) } else { (b, a) };
        let d_ab = dist.get(keep, gone);
        let mut height = if linkage == Linkage::Ward { d_ab.sqrt() } else { d_ab };
        if height < last_height {
            height = last_height;
        }
        last_height = height;
        let (na, nb) = (size[keep], size[gone]);
        merges.push(Merge {
            left: label[keep].min(label[gone]),
            right: label[keep].max(label[gone]),
            height,
            size: na + nb,
        });

        active[gone] = false;
        let (fa, fb) = (T::from_usize(na).unwrap(), T::from_usize(nb).unwrap());
        for k in (0..n).filter(|&k| active[k] && k != keep) {
            let dka = dist.get(k, keep);
            let dkb = dist.get(k, gone);
            let updated = match linkage {
                Linkage::Single => dka.min(dkb),
                Linkage::Complete => dka.max(dkb),
                Linkage::Average => (fa * dka + fb * dkb) / (fa + fb),
                Linkage::Ward => {
                    let fk = T::from_usize(size[k]).unwrap();
                    ((fk + fa) * dka + (fk + fb) * dkb - fk * d_ab) / (fk + fa + fb)
                }
            };
            // reducible linkages never drop below the merge distance; rounding may
            dist.set(k, keep, updated.max(d_ab));
        }
        size[keep] = na + nb;
        label[keep] = n + step;

        nn[keep] = nearest(&dist, &label, &active, keep);
        for k in (0..n).filter(|&k| active[k] && k != keep) {
            if nn[k] == keep || nn[k] == gone {
                nn[k] = nearest(&dist, &label, &active, k);
            } else if key_cmp(&dist, &label, k, keep, nn[k]) == Ordering::Less {
                nn[k] = keep;
            }
        }
    }
    Ok(Dendrogram { n_leaves: n, merges })
}

/// Flat clustering with canonical ids: larger clusters first, ties by smallest member index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Canonicalizes an arbitrary labelling of samples.
    pub fn from_labels<L: Ord + Copy>(labels: &[L]) -> Self {
        let mut groups: std::collections::BTreeMap<L, (usize, usize)> = Default::default();
        for (i, &l) in labels.iter().enumerate() {
            let e = groups.entry(l).or_insert((0, i));
            e.0 += 1;
        }
        let mut order: Vec<(L, usize, usize)> = groups.into_iter().map(|(l, (sz, first))| (l, sz, first)).collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let id_of: std::collections::BTreeMap<L, usize> = order.iter().enumerate().map(|(id, e)| (e.0, id)).collect();
        ClusterAssignment {
            k: order.len(),
            assignment: labels.iter().map(|l| id_of[l]).collect(),
            sizes: order.iter().map(|e| e.1).collect(),
        }
    }

    /// Members of every cluster, in id order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Undoes the last `k - 1` merges of `dendrogram`.
pub fn cut<T: Scalar>(dendrogram: &Dendrogram<T>, k: usize) -> Result<ClusterAssignment, ClusterError> {
    let n = dendrogram.n_leaves;
    if k == 0 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    // every label 0..2n-1 points at a leaf representative
    let mut parent: Vec<usize> = (0..n).collect();
    let mut rep: Vec<usize> = (0..n).collect();
    for m in &dendrogram.merges[..n - k] {
        let (ra, rb) = (find(&mut parent, rep[m.left]), find(&mut parent, rep[m.right]));
        parent[rb] = ra;
        rep.push(ra);
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Ok(ClusterAssignment::from_labels(&roots))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsample {
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub k: usize,
    pub linkage: Linkage,
    /// Per-dimension z-scoring before distances are taken.
    #[serde(default)]
    pub standardize: bool,
    /// Cluster a uniform subsample and assign the rest to the nearest centroid.
    #[serde(default)]
    pub subsample: Option<Subsample>,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            k: 8,
            linkage: Linkage::Ward,
            standardize: false,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitClustering<T> {
    pub dendrogram: Dendrogram<T>,
    /// Sample index of every dendrogram leaf.
    pub leaves: Vec<usize>,
    pub assignment: ClusterAssignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerClustering<T> {
    pub layer: String,
    pub kind: LayerKind,
    pub k: usize,
    pub linkage: Linkage,
    /// One entry per filter for conv layers, exactly one for dense layers.
    pub per_unit: Vec<UnitClustering<T>>,
}

fn standardize<T: Scalar>(vectors: &mut [Vec<T>]) {
    let Some(dim) = vectors.first().map(Vec::len) else { return };
    let n = T::from_usize(vectors.len()).unwrap();
    for j in 0..dim {
        let mean = vectors.iter().fold(T::zero(), |a, v| a + v[j]) / n;
        let var = vectors.iter().fold(T::zero(), |a, v| a + (v[j] - mean) * (v[j] - mean)) / n;
        let sd = if var > T::zero() { var.sqrt() } else { T::one() };
        for v in vectors.iter_mut() {
            v[j] = (v[j] - mean) / sd;
        }
    }
}

fn cluster_unit<T: Scalar>(mut vectors: Vec<Vec<T>>, options: &ClusterOptions) -> Result<UnitClustering<T>, ClusterError> {
    let n = vectors.len();
    if options.k == 0 || options.k > n {
        return Err(ClusterError::KOutOfRange { k: options.k, n });
    }
    check_vectors(&vectors)?;
    if options.standardize {
        standardize(&mut vectors);
    }
    let leaves: Vec<usize> = match options.subsample {
        Some(sub) if sub.size < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(sub.seed);
            let mut idx = rand::seq::index::sample(&mut rng, n, sub.size.max(options.k)).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };
    if leaves.len() == n {
        let dendrogram = agglomerate(&vectors, options.linkage)?;
        let assignment = cut(&dendrogram, options.k)?;
        return Ok(UnitClustering {
            dendrogram,
            leaves,
            assignment,
        });
    }

    let sub: Vec<Vec<T>> = leaves.iter().map(|&i| vectors[i].clone()).collect();
    let dendrogram = agglomerate(&sub, options.linkage)?;
    let local = cut(&dendrogram, options.k)?;
    let dim = vectors[0].len();
    let mut centroids = vec![vec![T::zero(); dim]; local.k];
    for (v, &c) in sub.iter().zip(&local.assignment) {
        for (acc, &x) in centroids[c].iter_mut().zip(v) {
            *acc = *acc + x;
        }
    }
    for (c, centroid) in centroids.iter_mut().enumerate() {
        let sz = T::from_usize(local.sizes[c]).unwrap();
        centroid.iter_mut().for_each(|x| *x = *x / sz);
    }
    let mut labels = vec![usize::MAX; n];
    for (&i, &c) in leaves.iter().zip(&local.assignment) {
        labels[i] = c;
    }
    for (i, v) in vectors.iter().enumerate() {
        if labels[i] != usize::MAX {
            continue;
        }
        let mut best = 0;
        let mut best_d = T::infinity();
        for (c, centroid) in centroids.iter().enumerate() {
            let d = squared_distance(v, centroid);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        labels[i] = best;
    }
    Ok(UnitClustering {
        dendrogram,
        leaves,
        assignment: ClusterAssignment::from_labels(&labels),
    })
}

/// Clusters every unit of `layer` with default options apart from `k` and `linkage`.
pub fn cluster_layer<T: Scalar>(
    trace: &ActivationTrace,
    layer: &str,
    k: usize,
    linkage: Linkage,
) -> Result<LayerClustering<T>, ClusterError> {
    cluster_layer_with(
        trace,
        layer,
        &ClusterOptions {
            k,
            linkage,
            ..Default::default()
        },
    )
}

pub fn cluster_layer_with<T: Scalar>(
    trace: &ActivationTrace,
    layer: &str,
    options: &ClusterOptions,
) -> Result<LayerClustering<T>, ClusterError> {
    let index = trace
        .manifest
        .layer_index(layer)
        .ok_or_else(|| ClusterError::UnknownLayer(layer.to_string()))?;
    let spec = &trace.manifest.layers[index];
    if spec.kind == LayerKind::Output {
        return Err(ClusterError::OutputLayer(layer.to_string()));
    }
    let n = trace.samples.len();
    if options.k == 0 || options.k > n {
        return Err(ClusterError::KOutOfRange { k: options.k, n });
    }
    let per_unit = (0..spec.artifact_count())
        .into_par_iter()
        .map(|unit| {
            let vectors: Vec<Vec<T>> = trace
                .samples
                .iter()
                .map(|s| s.activations[index].units()[unit].iter().map(|&x| T::from_f64_lossy(x)).collect())
                .collect();
            cluster_unit(vectors, options)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LayerClustering {
        layer: spec.name.clone(),
        kind: spec.kind,
        k: options.k,
        linkage: options.linkage,
        per_unit,
    })
}

/// Clusterings for every hidden layer of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringSet<T> {
    pub sample_ids: Vec<String>,
    pub layers: Vec<LayerClustering<T>>,
}

impl<T: Scalar> ClusteringSet<T> {
    pub fn layer(&self, name: &str) -> Option<&LayerClustering<T>> {
        self.layers.iter().find(|l| l.layer == name)
    }
}

/// Clusters every hidden layer of `trace`; `options_for` supplies per-layer settings.
pub fn cluster_trace<T: Scalar>(
    trace: &ActivationTrace,
    options_for: impl Fn(&str) -> ClusterOptions,
) -> Result<ClusteringSet<T>, ClusterError> {
    let layers = trace
        .manifest
        .hidden_layers()
        .iter()
        .map(|l| cluster_layer_with(trace, &l.name, &options_for(&l.name)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClusteringSet {
        sample_ids: trace.sample_ids(),
        layers,
    })
}

pub const CLUSTERING_FORMAT: &str = "huretex-clustering";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetHeader {
    format: String,
    version: u32,
    layers: Vec<LayerHeader>,
    sample_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerHeader {
    name: String,
    kind: LayerKind,
    units: usize,
    k: usize,
    linkage: Linkage,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitLine {
    layer: String,
    unit: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leaves: Option<Vec<usize>>,
    merges: Vec<(usize, usize, f64, usize)>,
    assignment: Vec<usize>,
}

impl<T: Scalar> ClusteringSet<T> {
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = SetHeader {
            format: CLUSTERING_FORMAT.into(),
            version: 1,
            layers: self
                .layers
                .iter()
                .map(|l| LayerHeader {
                    name: l.layer.clone(),
                    kind: l.kind,
                    units: l.per_unit.len(),
                    k: l.k,
                    linkage: l.linkage,
                })
                .collect(),
            sample_ids: self.sample_ids.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for l in &self.layers {
            for (unit, u) in l.per_unit.iter().enumerate() {
                let identity = u.leaves.len() == u.assignment.assignment.len()
                    && u.leaves.iter().enumerate().all(|(i, &x)| i == x);
                let line = UnitLine {
                    layer: l.layer.clone(),
                    unit,
                    leaves: (!identity).then(|| u.leaves.clone()),
                    merges: u
                        .dendrogram
                        .merges
                        .iter()
                        .map(|m| (m.left, m.right, m.height.to_f64_lossy(), m.size))
                        .collect(),
                    assignment: u.assignment.assignment.clone(),
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, ClusterError> {
        let bad = |line: usize, message: String| ClusterError::Malformed { line, message };
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| bad(1, "empty file".into()))?
            .map_err(|e| bad(1, e.to_string()))?;
        let header: SetHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if header.format != CLUSTERING_FORMAT || header.version != 1 {
            return Err(bad(1, format!("not a {CLUSTERING_FORMAT} v1 file")));
        }
        let n = header.sample_ids.len();
        let mut layers = Vec::with_capacity(header.layers.len());
        let mut line_no = 1;
        for lh in header.layers {
            let mut per_unit = Vec::with_capacity(lh.units);
            for unit in 0..lh.units {
                line_no += 1;
                let text = lines
                    .next()
                    .ok_or_else(|| bad(line_no, "unexpected end of file".into()))?
                    .map_err(|e| bad(line_no, e.to_string()))?;
                let u: UnitLine = serde_json::from_str(&text).map_err(|e| bad(line_no, e.to_string()))?;
                if u.layer != lh.name || u.unit != unit {
                    return Err(bad(line_no, format!("expected layer {} unit {unit}", lh.name)));
                }
                if u.assignment.len() != n {
                    return Err(bad(line_no, format!("assignment covers {} samples, expected {n}", u.assignment.len())));
                }
                let leaves = u.leaves.unwrap_or_else(|| (0..n).collect());
                let merges: Vec<Merge<T>> = u
                    .merges
                    .into_iter()
                    .map(|(left, right, h, size)| Merge {
                        left,
                        right,
                        height: T::from_f64_lossy(h),
                        size,
                    })
                    .collect();
                if merges.len() + 1 != leaves.len() {
                    return Err(bad(line_no, "merge count does not match leaf count".into()));
                }
                let assignment = ClusterAssignment::from_labels(&u.assignment);
                if assignment.assignment != u.assignment {
                    return Err(bad(line_no, "assignment ids are not canonical".into()));
                }
                per_unit.push(UnitClustering {
                    dendrogram: Dendrogram {
                        n_leaves: leaves.len(),
                        merges,
                    },
                    leaves,
                    assignment,
                });
            }
            layers.push(LayerClustering {
                layer: lh.name,
                kind: lh.kind,
                k: lh.k,
                linkage: lh.linkage,
                per_unit,
            });
        }
        if let Some(Ok(extra)) = lines.next() {
            if !extra.trim().is_empty() {
                return Err(bad(line_no + 1, "trailing data".into()));
            }
        }
        Ok(ClusteringSet {
            sample_ids: header.sample_ids,
            layers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClusterError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| TraceError::io(path, e))?;
        self.write(BufWriter::new(file)).map_err(|e| TraceError::io(path, e).into())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClusterError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
        Self::read(BufReader::new(file))
    }
}
