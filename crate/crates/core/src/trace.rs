//! Activation trace interchange format.
//!
//! A trace is a UTF-8, newline-delimited file. The first line is a manifest
//! describing the ordered layers of the model; each following line is one
//! training sample with its class label and the artifacts produced by every
//! non-output layer:
//!
//! ```text
//! {"format":"huretex-trace","version":1,"layers":[{"name":"c1","kind":"conv","units":2,"unit_dim":4},{"name":"out","kind":"output","classes":["a","b"]}],"num_samples":1}
//! {"id":"s0","label":"a","activations":{"c1":[[0.0,1.5,2.0,0.25],[1.0,1.0,0.0,0.0]]}}
//! ```
//!
//! Only convolutional, dense and output layers exist in the format. Input,
//! flatten and pooling layers carry no trained knowledge and cannot be
//! expressed; exporters fold pooling into the preceding convolution.
//!
//! Writing is canonical: keys in the order above, no insignificant
//! whitespace, floats in shortest round-trip decimal form.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub const TRACE_FORMAT: &str = "huretex-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("line {line}: sample {sample}: layer {layer}: {message}")]
    ShapeMismatch {
        line: usize,
        sample: String,
        layer: String,
        message: String,
    },
    #[error("line {line}: sample {sample}: unknown label {label:?}")]
    UnknownLabel {
        line: usize,
        sample: String,
        label: String,
    },
    #[error("line {line}: sample {sample}: layer {layer}: non-finite activation")]
    NonFinite {
        line: usize,
        sample: String,
        layer: String,
    },
    #[error("line {line}: duplicate sample id {sample}")]
    DuplicateId { line: usize, sample: String },
    #[error("manifest declares {declared} samples but {found} records were read")]
    SampleCount { declared: usize, found: usize },
    #[error("invalid synthetic trace request: {0}")]
    InvalidRequest(String),
}

impl TraceError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        TraceError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Dense,
    Output,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dense => "dense",
            LayerKind::Output => "output",
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One layer of the traced model.
///
/// `units` counts filters (conv), neurons (dense) or classes (output).
/// `unit_dim` is the flattened feature-map length of one filter and is 1 for
/// dense and output layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub units: usize,
    pub unit_dim: usize,
    /// Class alphabet; empty unless `kind` is `Output`.
    pub classes: Vec<String>,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, units: usize, unit_dim: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            units,
            unit_dim,
            classes: Vec::new(),
        }
    }

    pub fn dense(name: impl Into<String>, units: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Dense,
            units,
            unit_dim: 1,
            classes: Vec::new(),
        }
    }

    pub fn output<S: Into<String>>(name: impl Into<String>, classes: impl IntoIterator<Item = S>) -> Self {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Output,
            units: classes.len(),
            unit_dim: 1,
            classes,
        }
    }

    /// Number of artifact vectors a sample carries for this layer.
    pub fn artifact_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.units,
            LayerKind::Dense => 1,
            LayerKind::Output => 0,
        }
    }

    /// Length of each artifact vector.
    pub fn artifact_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.unit_dim,
            LayerKind::Dense => self.units,
            LayerKind::Output => 0,
        }
    }
}

/// Validates a layer list: unique names, positive shapes, exactly one output
/// layer and it is last.
pub fn validate_layers(layers: &[LayerSpec]) -> Result<(), TraceError> {
    let bad = |m: String| Err(TraceError::InvalidManifest(m));
    if layers.len() < 2 {
        return bad("at least one conv or dense layer and one output layer are required".into());
    }
    let mut seen = std::collections::HashSet::new();
    for (i, layer) in layers.iter().enumerate() {
        if layer.name.is_empty() {
            return bad(format!("layer {i} has an empty name"));
        }
        if !seen.insert(layer.name.as_str()) {
            return bad(format!("duplicate layer name {:?}", layer.name));
        }
        let last = i + 1 == layers.len();
        match layer.kind {
            LayerKind::Output if !last => {
                return bad(format!("output layer {:?} must be last", layer.name));
            }
            LayerKind::Output => {
                if layer.classes.is_empty() {
                    return bad(format!("output layer {:?} has no classes", layer.name));
                }
                let mut cs = std::collections::HashSet::new();
                if let Some(dup) = layer.classes.iter().find(|c| !cs.insert(c.as_str())) {
                    return bad(format!("duplicate class {dup:?}"));
                }
            }
            _ if last => return bad("the last layer must have kind output".into()),
            LayerKind::Conv | LayerKind::Dense => {
                if layer.units == 0 || layer.unit_dim == 0 {
                    return bad(format!("layer {:?} must have positive units and unit_dim", layer.name));
                }
                if layer.kind == LayerKind::Dense && layer.unit_dim != 1 {
                    return bad(format!("dense layer {:?} must have unit_dim 1", layer.name));
                }
                if !layer.classes.is_empty() {
                    return bad(format!("layer {:?} is not an output layer but lists classes", layer.name));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub layers: Vec<LayerSpec>,
    pub num_samples: usize,
}

impl Manifest {
    pub fn new(layers: Vec<LayerSpec>, num_samples: usize) -> Result<Self, TraceError> {
        validate_layers(&layers)?;
        Ok(Manifest { layers, num_samples })
    }

    pub fn output(&self) -> &LayerSpec {
        self.layers.last().expect("validated manifest has an output layer")
    }

    pub fn classes(&self) -> &[String] {
        &self.output().classes
    }

    /// Layers that carry activations, in model order.
    pub fn hidden_layers(&self) -> &[LayerSpec] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes().iter().position(|c| c == label)
    }

    fn to_json(&self) -> ManifestJson {
        ManifestJson {
            format: TRACE_FORMAT.to_string(),
            version: TRACE_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| match l.kind {
                    LayerKind::Output => LayerJson {
                        name: l.name.clone(),
                        kind: l.kind,
                        units: None,
                        unit_dim: None,
                        classes: Some(l.classes.clone()),
                    },
                    _ => LayerJson {
                        name: l.name.clone(),
                        kind: l.kind,
                        units: Some(l.units),
                        unit_dim: Some(l.unit_dim),
                        classes: None,
                    },
                })
                .collect(),
            num_samples: self.num_samples,
        }
    }

    fn from_json(json: ManifestJson) -> Result<Self, TraceError> {
        if json.format != TRACE_FORMAT {
            return Err(TraceError::InvalidManifest(format!(
                "format is {:?}, expected {TRACE_FORMAT:?}",
                json.format
            )));
        }
        if json.version != TRACE_VERSION {
            return Err(TraceError::InvalidManifest(format!(
                "unsupported version {}",
                json.version
            )));
        }
        let mut layers = Vec::with_capacity(json.layers.len());
        for l in json.layers {
            let spec = match l.kind {
                LayerKind::Output => {
                    if l.units.is_some() || l.unit_dim.is_some() {
                        return Err(TraceError::InvalidManifest(format!(
                            "output layer {:?} takes classes, not units/unit_dim",
                            l.name
                        )));
                    }
                    let classes = l.classes.ok_or_else(|| {
                        TraceError::InvalidManifest(format!("output layer {:?} lacks classes", l.name))
                    })?;
                    LayerSpec::output(l.name, classes)
                }
                kind => {
                    let (Some(units), Some(unit_dim)) = (l.units, l.unit_dim) else {
                        return Err(TraceError::InvalidManifest(format!(
                            "layer {:?} lacks units or unit_dim",
                            l.name
                        )));
                    };
                    if l.classes.is_some() {
                        return Err(TraceError::InvalidManifest(format!(
                            "layer {:?} is not an output layer but lists classes",
                            l.name
                        )));
                    }
                    LayerSpec {
                        name: l.name,
                        kind,
                        units,
                        unit_dim,
                        classes: Vec::new(),
                    }
                }
            };
            layers.push(spec);
        }
        Manifest::new(layers, json.num_samples)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("manifest serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestJson {
    format: String,
    version: u32,
    layers: Vec<LayerJson>,
    num_samples: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerJson {
    name: String,
    kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<String>>,
}

/// Artifacts one sample produced in one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    /// One flattened feature map per filter.
    Conv(Vec<Vec<f64>>),
    /// The layer's activation vector.
    Dense(Vec<f64>),
}

impl Artifact {
    /// The clustered units of this artifact: each filter map, or the single dense vector.
    pub fn units(&self) -> &[Vec<f64>] {
        match self {
            Artifact::Conv(maps) => maps,
            Artifact::Dense(v) => std::slice::from_ref(v),
        }
    }
}

impl Serialize for Artifact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Artifact::Conv(maps) => maps.serialize(s),
            Artifact::Dense(v) => v.serialize(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub label: String,
    /// One entry per hidden layer, in manifest order.
    pub activations: Vec<Artifact>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    id: String,
    label: String,
    activations: IndexMap<String, ArtifactJson>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ArtifactJson {
    Conv(Vec<Vec<f64>>),
    Dense(Vec<f64>),
}

struct RecordOut<'a> {
    manifest: &'a Manifest,
    record: &'a SampleRecord,
}

impl Serialize for RecordOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(3))?;
        map.serialize_entry("id", &self.record.id)?;
        map.serialize_entry("label", &self.record.label)?;
        map.serialize_entry("activations", &ActivationsOut(self))?;
        map.end()
    }
}

struct ActivationsOut<'a, 'b>(&'b RecordOut<'a>);

impl Serialize for ActivationsOut<'_, '_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let layers = self.0.manifest.hidden_layers();
        let mut map = s.serialize_map(Some(layers.len()))?;
        for (layer, artifact) in layers.iter().zip(&self.0.record.activations) {
            map.serialize_entry(&layer.name, artifact)?;
        }
        map.end()
    }
}

impl SampleRecord {
    /// Canonical single-line JSON form.
    pub fn to_line(&self, manifest: &Manifest) -> String {
        serde_json::to_string(&RecordOut {
            manifest,
            record: self,
        })
        .expect("record serializes")
    }

    /// Checks the record against the manifest; `line` is used for diagnostics.
    pub fn validate(&self, manifest: &Manifest, line: usize) -> Result<(), TraceError> {
        if manifest.class_index(&self.label).is_none() {
            return Err(TraceError::UnknownLabel {
                line,
                sample: self.id.clone(),
                label: self.label.clone(),
            });
        }
        let hidden = manifest.hidden_layers();
        if self.activations.len() != hidden.len() {
            return Err(TraceError::ShapeMismatch {
                line,
                sample: self.id.clone(),
                layer: "*".into(),
                message: format!("{} layers present, manifest declares {}", self.activations.len(), hidden.len()),
            });
        }
        for (layer, artifact) in hidden.iter().zip(&self.activations) {
            let shape_err = |message: String| TraceError::ShapeMismatch {
                line,
                sample: self.id.clone(),
                layer: layer.name.clone(),
                message,
            };
            let units = match (layer.kind, artifact) {
                (LayerKind::Conv, Artifact::Conv(maps)) => {
                    if maps.len() != layer.units {
                        return Err(shape_err(format!(
                            "{} filter maps, manifest declares units={}",
                            maps.len(),
                            layer.units
                        )));
                    }
                    maps.as_slice()
                }
                (LayerKind::Dense, Artifact::Dense(v)) => std::slice::from_ref(v),
                (kind, _) => return Err(shape_err(format!("artifact nesting does not match a {kind} layer"))),
            };
            let want = layer.artifact_len();
            for (u, v) in units.iter().enumerate() {
                if v.len() != want {
                    return Err(shape_err(format!("unit {u} has length {}, expected {want}", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(TraceError::NonFinite {
                        line,
                        sample: self.id.clone(),
                        layer: layer.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn parse(text: &str, manifest: &Manifest, line: usize) -> Result<Self, TraceError> {
        let json: RecordJson = serde_json::from_str(text).map_err(|e| TraceError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let mut activations = Vec::with_capacity(manifest.hidden_layers().len());
        for layer in manifest.hidden_layers() {
            let artifact = json.activations.get(&layer.name).ok_or_else(|| TraceError::ShapeMismatch {
                line,
                sample: json.id.clone(),
                layer: layer.name.clone(),
                message: "missing".into(),
            })?;
            activations.push(match (layer.kind, artifact) {
                (LayerKind::Dense, ArtifactJson::Conv(v)) if v.is_empty() => Artifact::Dense(Vec::new()),
                (_, ArtifactJson::Conv(maps)) => Artifact::Conv(maps.clone()),
                (_, ArtifactJson::Dense(v)) => Artifact::Dense(v.clone()),
            });
        }
        if let Some(extra) = json
            .activations
            .keys()
            .find(|k| manifest.hidden_layers().iter().all(|l| &l.name != *k))
        {
            return Err(TraceError::ShapeMismatch {
                line,
                sample: json.id.clone(),
                layer: extra.clone(),
                message: "layer not declared as conv or dense in the manifest".into(),
            });
        }
        let record = SampleRecord {
            id: json.id,
            label: json.label,
            activations,
        };
        record.validate(manifest, line)?;
        Ok(record)
    }
}

/// Streaming reader: parses the manifest eagerly, then yields validated records one at a time.
pub struct TraceReader<R> {
    manifest: Manifest,
    lines: io::Lines<R>,
    line: usize,
    read: usize,
    ids: std::collections::HashSet<String>,
    done: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R) -> Result<Self, TraceError> {
        let mut lines = reader.lines();
        let first = match lines.next() {
            Some(Ok(l)) => l,
            Some(Err(e)) => {
                return Err(TraceError::Malformed {
                    line: 1,
                    message: e.to_string(),
                })
            }
            None => return Err(TraceError::InvalidManifest("empty file".into())),
        };
        let json: ManifestJson =
            serde_json::from_str(&first).map_err(|e| TraceError::InvalidManifest(format!("line 1: {e}")))?;
        let manifest = Manifest::from_json(json)?;
        Ok(TraceReader {
            manifest,
            lines,
            line: 1,
            read: 0,
            ids: Default::default(),
            done: false,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<SampleRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = match self.lines.next() {
            None => {
                self.done = true;
                if self.read != self.manifest.num_samples {
                    return Some(Err(TraceError::SampleCount {
                        declared: self.manifest.num_samples,
                        found: self.read,
                    }));
                }
                return None;
            }
            Some(Err(e)) => Err(TraceError::Malformed {
                line: self.line + 1,
                message: e.to_string(),
            }),
            Some(Ok(text)) => {
                self.line += 1;
                if self.read == self.manifest.num_samples {
                    let mut found = self.read + 1;
                    found += (&mut self.lines).count();
                    Err(TraceError::SampleCount {
                        declared: self.manifest.num_samples,
                        found,
                    })
                } else {
                    SampleRecord::parse(&text, &self.manifest, self.line).and_then(|r| {
                        if self.ids.insert(r.id.clone()) {
                            self.read += 1;
                            Ok(r)
                        } else {
                            Err(TraceError::DuplicateId {
                                line: self.line,
                                sample: r.id,
                            })
                        }
                    })
                }
            }
        };
        if item.is_err() {
            self.done = true;
        }
        Some(item)
    }
}

pub fn open_trace(path: impl AsRef<Path>) -> Result<TraceReader<BufReader<File>>, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
    TraceReader::new(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub manifest: Manifest,
    pub samples: Vec<SampleRecord>,
}

impl ActivationTrace {
    /// Builds a trace from parts, validating every record.
    pub fn new(layers: Vec<LayerSpec>, samples: Vec<SampleRecord>) -> Result<Self, TraceError> {
        let manifest = Manifest::new(layers, samples.len())?;
        let mut ids = std::collections::HashSet::new();
        for (i, s) in samples.iter().enumerate() {
            s.validate(&manifest, i + 2)?;
            if !ids.insert(s.id.as_str()) {
                return Err(TraceError::DuplicateId {
                    line: i + 2,
                    sample: s.id.clone(),
                });
            }
        }
        Ok(ActivationTrace { manifest, samples })
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, TraceError> {
        let mut stream = TraceReader::new(reader)?;
        let mut samples = Vec::with_capacity(stream.manifest().num_samples.min(1 << 20));
        for record in &mut stream {
            samples.push(record?);
        }
        Ok(ActivationTrace {
            manifest: stream.manifest,
            samples,
        })
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.manifest.to_line())?;
        for s in &self.samples {
            writeln!(out, "{}", s.to_line(&self.manifest))?;
        }
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<ActivationTrace, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
    ActivationTrace::read(BufReader::new(file))
}

pub fn write_trace(trace: &ActivationTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TraceError::io(path, e))?;
    trace.write(BufWriter::new(file)).map_err(|e| TraceError::io(path, e))
}

/// Distance between neighbouring latent centroids along every coordinate.
pub const SYNTHETIC_SEPARATION: f64 = 10.0;
/// Width of the uniform noise band around a centroid along every coordinate.
pub const SYNTHETIC_SPREAD: f64 = 1.0;

/// A generated trace together with each sample's latent group.
#[derive(Debug, Clone)]
pub struct SyntheticTrace {
    pub trace: ActivationTrace,
    pub groups: Vec<usize>,
}

/// Generates a trace whose artifacts form `n_latent_groups` well separated blobs.
///
/// Groups are assigned as `i % n_latent_groups` and then shuffled. Sample `i`
/// gets label `classes[group % classes.len()]`. For every clustered unit and
/// coordinate, the centroid of group `g` sits at `offset + sign * 10 * g` with
/// a random offset in [-5, 5) and a random sign, and samples add uniform noise
/// in [-0.5, 0.5). Neighbouring centroids are therefore 10x the noise width
/// apart on every coordinate.
///
/// Random draws happen in this order: the group shuffle; then for every hidden
/// layer, unit and coordinate a sign and an offset; then for every sample,
/// hidden layer, unit and coordinate one noise value.
pub fn generate_synthetic_trace(
    seed: u64,
    layers: &[LayerSpec],
    n_samples: usize,
    n_latent_groups: usize,
) -> Result<SyntheticTrace, TraceError> {
    validate_layers(layers)?;
    if n_samples == 0 {
        return Err(TraceError::InvalidRequest("n_samples must be positive".into()));
    }
    if n_latent_groups == 0 {
        return Err(TraceError::InvalidRequest("n_latent_groups must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<usize> = (0..n_samples).map(|i| i % n_latent_groups).collect();
    groups.shuffle(&mut rng);

    let hidden = &layers[..layers.len() - 1];
    let classes = &layers[layers.len() - 1].classes;

    // (sign, offset) per layer, unit, coordinate
    let placement: Vec<Vec<Vec<(f64, f64)>>> = hidden
        .iter()
        .map(|layer| {
            (0..layer.artifact_count())
                .map(|_| {
                    (0..layer.artifact_len())
                        .map(|_| {
                            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                            let offset = rng.gen_range(-5.0..5.0);
                            (sign, offset)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let width = n_samples.saturating_sub(1).to_string().len();
    let mut samples = Vec::with_capacity(n_samples);
    for (i, &g) in groups.iter().enumerate() {
        let activations = hidden
            .iter()
            .zip(&placement)
            .map(|(layer, units)| {
                let vectors: Vec<Vec<f64>> = units
                    .iter()
                    .map(|coords| {
                        coords
                            .iter()
                            .map(|&(sign, offset)| {
                                let noise = SYNTHETIC_SPREAD * (rng.gen::<f64>() - 0.5);
                                offset + sign * SYNTHETIC_SEPARATION * g as f64 + noise
                            })
                            .collect()
                    })
                    .collect();
                match layer.kind {
                    LayerKind::Conv => Artifact::Conv(vectors),
                    _ => Artifact::Dense(vectors.into_iter().next().unwrap_or_default()),
                }
            })
            .collect();
        samples.push(SampleRecord {
            id: format!("s{i:0width$}"),
            label: classes[g % classes.len()].clone(),
            activations,
        });
    }
    let trace = ActivationTrace::new(layers.to_vec(), samples)?;
    Ok(SyntheticTrace { trace, groups })
}
