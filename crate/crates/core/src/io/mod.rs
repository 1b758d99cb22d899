//! JSON formats for schemas, graphs, gradient bundles and dataset
//! manifests, plus seeded synthetic graph generators.

mod generate;

pub use generate::{generate, GeneratorKind, GeneratorSpec};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{GradientBundle, ModelConfig, ModelWeights};
use crate::graph::{FeatureSchema, Graph, NodeFeatures};

/// On-disk graph: the schema, one feature list per node, and `[i, j]` edges
/// with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub schema: FeatureSchema,
    pub nodes: Vec<Vec<u32>>,
    pub edges: Vec<[usize; 2]>,
}

impl From<&Graph> for GraphFile {
    fn from(g: &Graph) -> Self {
        Self {
            schema: (**g.schema()).clone(),
            nodes: g.nodes().iter().map(|f| f.values().to_vec()).collect(),
            edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

impl GraphFile {
    pub fn into_graph(self) -> Result<Graph> {
        self.schema.validate()?;
        let nodes = self.nodes.into_iter().map(NodeFeatures::new).collect();
        Graph::new(Arc::new(self.schema), nodes, self.edges.into_iter().map(|[a, b]| (a, b)))
    }
}

/// One named parameter matrix, row-major little-endian `f64`, base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl Tensor {
    fn encode(name: &str, m: &DMatrix<f64>) -> Self {
        let mut bytes = Vec::with_capacity(m.len() * 8);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                bytes.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
        Self {
            name: name.to_owned(),
            rows: m.nrows(),
            cols: m.ncols(),
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self) -> Result<DMatrix<f64>> {
        let bytes = STANDARD.decode(&self.data).map_err(|e| Error::Parse {
            context: format!("tensor {}", self.name),
            message: e.to_string(),
        })?;
        let expected = self.rows * self.cols * 8;
        if bytes.len() != expected {
            return Err(Error::Shape(format!(
                "tensor {} holds {} bytes, expected {expected} for {}x{}",
                self.name,
                bytes.len(),
                self.rows,
                self.cols
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &values))
    }
}

/// On-disk gradient bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub config: ModelConfig,
    pub weights: Vec<Tensor>,
    pub grads: Vec<Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl From<&GradientBundle> for BundleFile {
    fn from(b: &GradientBundle) -> Self {
        let enc = |w: &ModelWeights| w.params().into_iter().map(|(n, m)| Tensor::encode(&n, m)).collect();
        Self {
            config: b.config.clone(),
            weights: enc(&b.weights),
            grads: enc(&b.grads),
            labels: b.labels.clone(),
        }
    }
}

impl BundleFile {
    pub fn into_bundle(self) -> Result<GradientBundle> {
        self.config.validate()?;
        let weights = decode_params(&self.config, &self.weights, "weights")?;
        let grads = decode_params(&self.config, &self.grads, "grads")?;
        let bundle = GradientBundle {
            config: self.config,
            weights,
            grads,
            labels: self.labels,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

fn decode_params(cfg: &ModelConfig, tensors: &[Tensor], what: &str) -> Result<ModelWeights> {
    let shapes = cfg.param_shapes();
    if tensors.len() != shapes.len() {
        return Err(Error::Shape(format!(
            "{what}: expected {} tensors, found {}",
            shapes.len(),
            tensors.len()
        )));
    }
    let mut w = ModelWeights::zeros(cfg);
    for ((name, (rows, cols)), (t, (_, slot))) in shapes.iter().zip(tensors.iter().zip(w.params_mut())) {
        if &t.name != name || (t.rows, t.cols) != (*rows, *cols) {
            return Err(Error::Shape(format!(
                "{what}: expected {name} of shape {rows}x{cols}, found {} of shape {}x{}",
                t.name, t.rows, t.cols
            )));
        }
        *slot = t.decode()?;
    }
    Ok(w)
}

/// One graph of a dataset; `graph` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub graph: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub graphs: Vec<ManifestEntry>,
}

impl Manifest {
    /// Paths of the listed graphs resolved against `manifest_path`.
    pub fn resolve(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.graphs.iter().map(|e| base.join(&e.graph)).collect()
    }
}

/// Parses JSON, reporting the location of syntax and type errors.
pub fn from_json<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_owned(),
        message: e.to_string(),
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| io_error(path, source))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)).map_err(|source| io_error(path, source))
}

pub fn graph_from_json(text: &str) -> Result<Graph> {
    from_json::<GraphFile>(text, "graph")?.into_graph()
}

pub fn graph_to_json(g: &Graph) -> String {
    to_json(&GraphFile::from(g))
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    from_json::<GraphFile>(&read(path)?, &path.display().to_string())?.into_graph()
}

pub fn save_graph(path: &Path, g: &Graph) -> Result<()> {
    write_json(path, &GraphFile::from(g))
}

pub fn bundle_from_json(text: &str) -> Result<GradientBundle> {
    from_json::<BundleFile>(text, "bundle")?.into_bundle()
}

pub fn bundle_to_json(b: &GradientBundle) -> String {
    to_json(&BundleFile::from(b))
}

pub fn load_bundle(path: &Path) -> Result<GradientBundle> {
    from_json::<BundleFile>(&read(path)?, &path.display().to_string())?.into_bundle()
}

pub fn save_bundle(path: &Path, b: &GradientBundle) -> Result<()> {
    write_json(path, &BundleFile::from(b))
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let schema: FeatureSchema = from_json(&read(path)?, &path.display().to_string())?;
    schema.validate()?;
    Ok(schema)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    from_json(&read(path)?, &path.display().to_string())
}
