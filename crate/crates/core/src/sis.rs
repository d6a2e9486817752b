//! Sequential information system: one object per training case, one ordered
//! attribute per retained layer, symbolic values.
//!
//! Conv attribute values are tuples of per-filter cluster ids interned as a
//! single atom such as `(3,0)`; dense values are a bare cluster id; the output
//! attribute holds the class label.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusteringSet;
use crate::scalar::Scalar;
use crate::trace::{ActivationTrace, LayerKind, TraceError};

/// Symbol for values pooled by the min-support rule.
pub const OTHER_SYMBOL: &str = "OTHER";

#[derive(Debug, Error)]
pub enum SisError {
    #[error("no clustering for layer {0:?}")]
    MissingLayer(String),
    #[error("clustering of layer {layer:?} has {found} units, layer declares {expected}")]
    UnitMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },
    #[error("sample ids of the clustering do not match the trace (first difference at row {0})")]
    SampleMismatch(usize),
    #[error("invalid information system: {0}")]
    Invalid(String),
    #[error("malformed information system file at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequentialInformationSystem {
    attributes: Vec<Attribute>,
    /// Per attribute, values in order of first occurrence.
    alphabets: Vec<Vec<String>>,
    /// Row-major value indices, `attributes.len()` per object.
    values: Vec<u32>,
    object_ids: Vec<String>,
    labels: Vec<String>,
    /// Full class alphabet of the output layer.
    classes: Vec<String>,
}

/// Interns symbols per attribute in first-occurrence order.
struct Interner {
    alphabet: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn new() -> Self {
        Interner {
            alphabet: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, s: String) -> u32 {
        if let Some(&i) = self.index.get(&s) {
            return i;
        }
        let i = self.alphabet.len() as u32;
        self.index.insert(s.clone(), i);
        self.alphabet.push(s);
        i
    }
}

impl SequentialInformationSystem {
    /// Builds a system directly from symbol rows. The last attribute must be
    /// the output and its value in every row must equal that row's label.
    pub fn from_rows<S: AsRef<str>>(
        attributes: Vec<Attribute>,
        classes: Vec<String>,
        object_ids: Vec<String>,
        rows: &[Vec<S>],
    ) -> Result<Self, SisError> {
        let m = attributes.len();
        if m == 0 || attributes[m - 1].kind != LayerKind::Output {
            return Err(SisError::Invalid("the last attribute must be the output".into()));
        }
        if attributes[..m - 1].iter().any(|a| a.kind == LayerKind::Output) {
            return Err(SisError::Invalid("only the last attribute may be the output".into()));
        }
        if rows.len() != object_ids.len() {
            return Err(SisError::Invalid(format!("{} rows for {} object ids", rows.len(), object_ids.len())));
        }
        let mut interners: Vec<Interner> = (0..m).map(|_| Interner::new()).collect();
        let mut values = Vec::with_capacity(rows.len() * m);
        let mut labels = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(SisError::Invalid(format!("row {r} has {} values, expected {m}", row.len())));
            }
            let label = row[m - 1].as_ref();
            if !classes.iter().any(|c| c == label) {
                return Err(SisError::Invalid(format!("row {r}: label {label:?} not in class alphabet")));
            }
            labels.push(label.to_string());
            for (a, v) in row.iter().enumerate() {
                values.push(interners[a].intern(v.as_ref().to_string()));
            }
        }
        Ok(SequentialInformationSystem {
            attributes,
            alphabets: interners.into_iter().map(|i| i.alphabet).collect(),
            values,
            object_ids,
            labels,
            classes,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn alphabet(&self, attribute: usize) -> &[String] {
        &self.alphabets[attribute]
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn object_ids(&self) -> &[String] {
        &self.object_ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_objects(&self) -> usize {
        self.object_ids.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Value indices of one object.
    pub fn row(&self, object: usize) -> &[u32] {
        let m = self.attributes.len();
        &self.values[object * m..(object + 1) * m]
    }

    pub fn symbol(&self, object: usize, attribute: usize) -> &str {
        &self.alphabets[attribute][self.row(object)[attribute] as usize]
    }

    /// Class index of every object within `classes()`.
    pub fn label_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| self.classes.iter().position(|c| c == l).expect("labels validated"))
            .collect()
    }

    /// Replaces non-output values realized by fewer than `min_support` objects with [`OTHER_SYMBOL`].
    pub fn with_min_support(&self, min_support: usize) -> Self {
        self.with_min_support_per(&vec![min_support; self.attributes.len()])
    }

    /// Per-attribute variant of [`Self::with_min_support`]; the output attribute is never pooled.
    pub fn with_min_support_per(&self, min_support: &[usize]) -> Self {
        let m = self.attributes.len();
        if min_support.iter().take(m.saturating_sub(1)).all(|&s| s <= 1) {
            return self.clone();
        }
        let rows: Vec<Vec<&str>> = {
            let mut counts: Vec<Vec<usize>> = self.alphabets.iter().map(|a| vec![0; a.len()]).collect();
            for o in 0..self.n_objects() {
                for (a, &v) in self.row(o).iter().enumerate() {
                    counts[a][v as usize] += 1;
                }
            }
            (0..self.n_objects())
                .map(|o| {
                    (0..m)
                        .map(|a| {
                            let v = self.row(o)[a] as usize;
                            if a + 1 < m && counts[a][v] < min_support.get(a).copied().unwrap_or(0) {
                                OTHER_SYMBOL
                            } else {
                                self.alphabets[a][v].as_str()
                            }
                        })
                        .collect()
                })
                .collect()
        };
        Self::from_rows(self.attributes.clone(), self.classes.clone(), self.object_ids.clone(), &rows)
            .expect("pooling keeps the system valid")
    }
}

/// Symbol of a conv attribute value: per-filter ids as `(c1,c2,...)`.
pub fn tuple_symbol(ids: &[usize]) -> String {
    let inner: Vec<String> = ids.iter().map(|c| c.to_string()).collect();
    format!("({})", inner.join(","))
}

/// Assembles the information system from a trace and its layer clusterings.
pub fn build_sis<T: Scalar>(
    trace: &ActivationTrace,
    clusterings: &ClusteringSet<T>,
) -> Result<SequentialInformationSystem, SisError> {
    let ids = trace.sample_ids();
    if let Some(row) = (0..ids.len().max(clusterings.sample_ids.len()))
        .find(|&i| ids.get(i) != clusterings.sample_ids.get(i))
    {
        return Err(SisError::SampleMismatch(row));
    }
    let manifest = &trace.manifest;
    let mut attributes = Vec::with_capacity(manifest.layers.len());
    let mut columns: Vec<Vec<String>> = Vec::with_capacity(manifest.layers.len());
    for layer in manifest.hidden_layers() {
        let lc = clusterings
            .layer(&layer.name)
            .ok_or_else(|| SisError::MissingLayer(layer.name.clone()))?;
        if lc.per_unit.len() != layer.artifact_count() {
            return Err(SisError::UnitMismatch {
                layer: layer.name.clone(),
                expected: layer.artifact_count(),
                found: lc.per_unit.len(),
            });
        }
        if let Some(u) = lc.per_unit.iter().find(|u| u.assignment.assignment.len() != ids.len()) {
            return Err(SisError::SampleMismatch(u.assignment.assignment.len().min(ids.len())));
        }
        let column = (0..ids.len())
            .map(|o| match layer.kind {
                LayerKind::Conv => {
                    let tuple: Vec<usize> = lc.per_unit.iter().map(|u| u.assignment.assignment[o]).collect();
                    tuple_symbol(&tuple)
                }
                _ => lc.per_unit[0].assignment.assignment[o].to_string(),
            })
            .collect();
        attributes.push(Attribute {
            name: layer.name.clone(),
            kind: layer.kind,
        });
        columns.push(column);
    }
    let output = manifest.output();
    attributes.push(Attribute {
        name: output.name.clone(),
        kind: LayerKind::Output,
    });
    columns.push(trace.samples.iter().map(|s| s.label.clone()).collect());
    let rows: Vec<Vec<&str>> = (0..ids.len()).map(|o| columns.iter().map(|c| c[o].as_str()).collect()).collect();
    SequentialInformationSystem::from_rows(attributes, output.classes.clone(), ids, &rows)
}

/// Writes the table as CSV: an `object` column followed by one column per attribute.
/// Tuple commas become `|` so that `(3,0)` is written as `(3|0)`.
pub fn export_sis_csv(sis: &SequentialInformationSystem, path: impl AsRef<Path>) -> Result<(), SisError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TraceError::io(path, e))?;
    write_sis_csv(sis, BufWriter::new(file))
}

pub fn write_sis_csv<W: Write>(sis: &SequentialInformationSystem, out: W) -> Result<(), SisError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["object".to_string()];
    header.extend(sis.attributes.iter().map(|a| a.name.clone()));
    w.write_record(&header)?;
    for o in 0..sis.n_objects() {
        let mut rec = vec![sis.object_ids[o].clone()];
        for a in 0..sis.n_attributes() {
            let s = sis.symbol(o, a);
            rec.push(if sis.attributes[a].kind == LayerKind::Conv { s.replace(',', "|") } else { s.to_string() });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub const SIS_FORMAT: &str = "huretex-sis";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SisHeader {
    format: String,
    version: u32,
    attributes: Vec<Attribute>,
    classes: Vec<String>,
    alphabets: Vec<Vec<String>>,
    num_objects: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SisRow {
    id: String,
    label: String,
    values: Vec<u32>,
}

impl SequentialInformationSystem {
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = SisHeader {
            format: SIS_FORMAT.into(),
            version: 1,
            attributes: self.attributes.clone(),
            classes: self.classes.clone(),
            alphabets: self.alphabets.clone(),
            num_objects: self.n_objects(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for o in 0..self.n_objects() {
            serde_json::to_writer(
                &mut out,
                &SisRow {
                    id: self.object_ids[o].clone(),
                    label: self.labels[o].clone(),
                    values: self.row(o).to_vec(),
                },
            )?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, SisError> {
        let bad = |line: usize, message: String| SisError::Malformed { line, message };
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| bad(1, "empty file".into()))?
            .map_err(|e| bad(1, e.to_string()))?;
        let h: SisHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if h.format != SIS_FORMAT || h.version != 1 {
            return Err(bad(1, format!("not a {SIS_FORMAT} v1 file")));
        }
        if h.alphabets.len() != h.attributes.len() {
            return Err(bad(1, "one alphabet per attribute required".into()));
        }
        let mut ids = Vec::with_capacity(h.num_objects);
        let mut rows: Vec<Vec<&str>> = Vec::with_capacity(h.num_objects);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let text = line.map_err(|e| bad(line_no, e.to_string()))?;
            if text.is_empty() {
                continue;
            }
            let r: SisRow = serde_json::from_str(&text).map_err(|e| bad(line_no, e.to_string()))?;
            if r.values.len() != h.attributes.len() {
                return Err(bad(line_no, "wrong number of values".into()));
            }
            let mut row = Vec::with_capacity(r.values.len());
            for (a, &v) in r.values.iter().enumerate() {
                let sym = h.alphabets[a]
                    .get(v as usize)
                    .ok_or_else(|| bad(line_no, format!("value index {v} outside alphabet of attribute {a}")))?;
                row.push(sym.as_str());
            }
            if row.last().copied() != Some(r.label.as_str()) {
                return Err(bad(line_no, "output value differs from label".into()));
            }
            ids.push(r.id);
            rows.push(row);
        }
        if rows.len() != h.num_objects {
            return Err(bad(rows.len() + 2, format!("expected {} objects, found {}", h.num_objects, rows.len())));
        }
        let sis = Self::from_rows(h.attributes, h.classes, ids, &rows)?;
        if sis.alphabets != h.alphabets {
            return Err(bad(1, "alphabets are not in first-occurrence order".into()));
        }
        Ok(sis)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SisError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| TraceError::io(path, e))?;
        self.write(BufWriter::new(file)).map_err(|e| TraceError::io(path, e).into())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SisError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
        Self::read(BufReader::new(file))
    }
}
