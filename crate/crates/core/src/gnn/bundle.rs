use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, Labels, ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::graph::{Graph, Task};

/// Everything the server observes after one client step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub config: ModelConfig,
    pub weights: ModelWeights,
    pub grads: ModelWeights,
    /// Per-node labels; present only for node classification.
    pub labels: Option<Vec<usize>>,
}

impl GradientBundle {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.weights.check_shapes(&self.config)?;
        self.grads.check_shapes(&self.config)?;
        match (self.config.task, &self.labels) {
            (Task::GraphClassification, None) => Ok(()),
            (Task::NodeClassification, Some(ys)) if ys.iter().all(|&c| c < self.config.num_classes) => Ok(()),
            (task, labels) => Err(Error::Shape(format!(
                "labels {labels:?} are inconsistent with task {task:?}"
            ))),
        }
    }
}

/// How the client's training labels are chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelPolicy {
    Graph(usize),
    Nodes(Vec<usize>),
    /// Draw labels from a ChaCha8 stream seeded with the model seed.
    Seeded,
}

impl LabelPolicy {
    pub fn resolve(&self, g: &Graph, cfg: &ModelConfig) -> Labels {
        match self {
            LabelPolicy::Graph(c) => Labels::Graph(*c),
            LabelPolicy::Nodes(ys) => Labels::Nodes(ys.clone()),
            LabelPolicy::Seeded => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6c61_6265_6c73);
                match cfg.task {
                    Task::GraphClassification => Labels::Graph(rng.random_range(0..cfg.num_classes)),
                    Task::NodeClassification => {
                        Labels::Nodes((0..g.n()).map(|_| rng.random_range(0..cfg.num_classes)).collect())
                    }
                }
            }
        }
    }
}

/// Gradients of `g` under the given weights and labels.
pub fn client_gradients(g: &Graph, w: &ModelWeights, cfg: &ModelConfig, labels: &Labels) -> Result<ModelWeights> {
    let trace = forward(g, w, cfg, labels)?;
    Ok(backward(&trace, w, cfg).grads)
}

/// One FedSGD client step: weights are initialized from `cfg.seed`, and the
/// gradients of the loss on `g` are returned alongside them.
pub fn simulate_client_step(g: &Graph, cfg: &ModelConfig, policy: &LabelPolicy) -> Result<GradientBundle> {
    cfg.validate()?;
    cfg.check_schema(g.schema())?;
    let weights = ModelWeights::init(cfg);
    let labels = policy.resolve(g, cfg);
    let grads = client_gradients(g, &weights, cfg, &labels)?;
    let labels = match labels {
        Labels::Nodes(ys) => Some(ys),
        Labels::Graph(_) => None,
    };
    Ok(GradientBundle {
        config: cfg.clone(),
        weights,
        grads,
        labels,
    })
}
