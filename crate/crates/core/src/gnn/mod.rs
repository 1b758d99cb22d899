//! Small bias-free GCN/GAT models with a per-node two-layer readout, exact
//! reverse-mode gradients, and single-step client simulation.

mod adjacency;
mod backward;
mod bundle;
mod forward;
mod propagate;

pub use adjacency::{attention_adjacency_gat, normalized_adjacency_gcn, Attention};
pub use backward::{backward, Backward};
pub use bundle::{client_gradients, simulate_client_step, GradientBundle, LabelPolicy};
pub use forward::{forward, ForwardTrace, Labels, LayerTrace};
pub use propagate::propagate_block;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureSchema, Task};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => x * std_normal_cdf(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                std_normal_cdf(x) + x * pdf
            }
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub activation: Activation,
    pub input_dim: usize,
    pub num_classes: usize,
    pub task: Task,
    pub seed: u64,
}

impl ModelConfig {
    /// Configuration sized for `schema` with the usual defaults: two layers,
    /// 300 hidden units, two attention heads, ReLU.
    pub fn for_schema(schema: &FeatureSchema, arch: Arch) -> Self {
        Self {
            arch,
            num_layers: 2,
            hidden_dim: 300,
            heads: 2,
            activation: Activation::Relu,
            input_dim: schema.one_hot_width(),
            num_classes: schema.num_classes,
            task: schema.task,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be positive".into()));
        }
        if self.hidden_dim == 0 || self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.arch == Arch::Gat && (self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads)) {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if schema.one_hot_width() != self.input_dim {
            return Err(Error::Shape(format!(
                "schema one-hot width {} differs from model input_dim {}",
                schema.one_hot_width(),
                self.input_dim
            )));
        }
        if schema.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "schema has {} classes, model has {}",
                schema.num_classes, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        match self.arch {
            Arch::Gcn => self.hidden_dim,
            Arch::Gat => self.hidden_dim / self.heads,
        }
    }

    pub fn num_heads(&self) -> usize {
        match self.arch {
            Arch::Gcn => 1,
            Arch::Gat => self.heads,
        }
    }

    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Parameter names and shapes, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        for l in 0..self.num_layers {
            out.push((format!("gnn.{l}.weight"), (self.layer_input_dim(l), self.hidden_dim)));
            if self.arch == Arch::Gat {
                out.push((format!("gnn.{l}.attention"), (self.heads, 2 * self.head_dim())));
            }
        }
        out.push(("readout.0.weight".into(), (self.hidden_dim, self.hidden_dim)));
        out.push(("readout.1.weight".into(), (self.hidden_dim, self.num_classes)));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayer {
    /// `d_in × d′` weight.
    pub weight: DMatrix<f64>,
    /// GAT only: one row per head, `[a_src ‖ a_dst]`.
    pub attention: Option<DMatrix<f64>>,
}

/// A full set of model parameters. Also used to hold gradients, which share
/// the parameters' shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub layers: Vec<GnnLayer>,
    pub readout: [DMatrix<f64>; 2],
}

impl ModelWeights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layers = (0..cfg.num_layers)
            .map(|l| GnnLayer {
                weight: DMatrix::zeros(cfg.layer_input_dim(l), cfg.hidden_dim),
                attention: (cfg.arch == Arch::Gat)
                    .then(|| DMatrix::zeros(cfg.heads, 2 * cfg.head_dim())),
            })
            .collect();
        Self {
            layers,
            readout: [
                DMatrix::zeros(cfg.hidden_dim, cfg.hidden_dim),
                DMatrix::zeros(cfg.hidden_dim, cfg.num_classes),
            ],
        }
    }

    /// Uniform fan-in initialization from a ChaCha8 stream seeded with
    /// `cfg.seed`, filling parameters in canonical order, row-major. An
    /// attention row is dotted with a concatenated pair of head outputs, so
    /// its fan-in is the row length.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut w = Self::zeros(cfg);
        for (name, m) in w.params_mut() {
            let fan_in = if name.ends_with(".attention") { m.ncols() } else { m.nrows() };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    m[(i, j)] = rng.random_range(-bound..bound);
                }
            }
        }
        w
    }

    pub fn params(&self) -> Vec<(String, &DMatrix<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("gnn.{l}.weight"), &layer.weight));
            if let Some(a) = &layer.attention {
                out.push((format!("gnn.{l}.attention"), a));
            }
        }
        out.push(("readout.0.weight".into(), &self.readout[0]));
        out.push(("readout.1.weight".into(), &self.readout[1]));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut DMatrix<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("gnn.{l}.weight"), &mut layer.weight));
            if let Some(a) = &mut layer.attention {
                out.push((format!("gnn.{l}.attention"), a));
            }
        }
        let [r0, r1] = &mut self.readout;
        out.push(("readout.0.weight".into(), r0));
        out.push(("readout.1.weight".into(), r1));
        out
    }

    pub fn param(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.params().into_iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = cfg.param_shapes();
        let actual = self.params();
        if expected.len() != actual.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, found {}",
                expected.len(),
                actual.len()
            )));
        }
        for ((name, shape), (got_name, m)) in expected.iter().zip(&actual) {
            if name != got_name || *shape != m.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {shape:?}, found {got_name} with {:?}",
                    m.shape()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Shape(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Squared Frobenius distance summed over parameters; `gnn_only` skips
    /// the readout.
    pub fn squared_distance(&self, other: &ModelWeights, gnn_only: bool) -> f64 {
        self.params()
            .iter()
            .zip(other.params())
            .filter(|((name, _), _)| !gnn_only || name.starts_with("gnn."))
            .map(|((_, a), (_, b))| (*a - b).norm_squared())
            .sum()
    }

    pub fn squared_norm(&self, gnn_only: bool) -> f64 {
        self.params()
            .iter()
            .filter(|(name, _)| !gnn_only || name.starts_with("gnn."))
            .map(|(_, m)| m.norm_squared())
            .sum()
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::graph::{FeatureSpec, Graph, NodeFeatures};
    use rand::seq::SliceRandom;
    use std::sync::Arc;

    pub fn schema(task: Task) -> Arc<FeatureSchema> {
        Arc::new(
            FeatureSchema::new(
                vec![
                    FeatureSpec {
                        name: "degree".into(),
                        cardinality: 5,
                    },
                    FeatureSpec {
                        name: "kind".into(),
                        cardinality: 4,
                    },
                ],
                0,
                3,
                task,
            )
            .unwrap(),
        )
    }

    pub fn config(arch: Arch, hidden: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            arch,
            num_layers: 2,
            hidden_dim: hidden,
            heads: 2,
            activation: Activation::Relu,
            input_dim: 9,
            num_classes: 3,
            task: Task::GraphClassification,
            seed,
        }
    }

    /// Random graph with up to `max_n` nodes, degree cap 4 and declared
    /// degrees at or slightly above the structural ones.
    pub fn random_graph(rng: &mut ChaCha8Rng, max_n: usize, task: Task) -> Graph {
        let n = rng.random_range(1..=max_n);
        let mut pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        pairs.shuffle(rng);
        let mut deg = vec![0u32; n];
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if deg[a] < 4 && deg[b] < 4 && rng.random_bool(0.4) {
                deg[a] += 1;
                deg[b] += 1;
                edges.push((a, b));
            }
        }
        let nodes = deg
            .iter()
            .map(|&d| {
                let extra = u32::from(d < 4 && rng.random_bool(0.2));
                NodeFeatures::new(vec![d + extra, rng.random_range(0..4)])
            })
            .collect();
        Graph::new(schema(task), nodes, edges).unwrap()
    }
}
