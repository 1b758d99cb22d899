use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{attention_adjacency_gat, normalized_adjacency_gcn, Arch, ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::graph::{Graph, Task};

/// Training targets: one class for the whole graph, or one per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    Graph(usize),
    Nodes(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Layer input `X^l`.
    pub x: DMatrix<f64>,
    /// `Y^l = X^l W^l`.
    pub y: DMatrix<f64>,
    /// One propagation matrix per head (a single one for GCN).
    pub adjacency: Vec<DMatrix<f64>>,
    /// GAT attention logits before the LeakyReLU; empty for GCN.
    pub pre: Vec<DMatrix<f64>>,
    /// `Z^l`, heads concatenated.
    pub z: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Final node embeddings `X^L`.
    pub embeddings: DMatrix<f64>,
    /// Readout pre-activation `X^L R_0`.
    pub readout_pre: DMatrix<f64>,
    /// Readout hidden `σ(X^L R_0)`.
    pub readout_hidden: DMatrix<f64>,
    /// Per-node logits.
    pub logits: DMatrix<f64>,
    /// Softmax probabilities: one row for graph tasks, one per node otherwise.
    pub probs: DMatrix<f64>,
    pub labels: Labels,
    pub loss: f64,
}

/// Runs the model on `g`. Node logits are mean-pooled before the
/// cross-entropy for graph classification; for node classification the
/// per-node cross-entropies are averaged.
pub fn forward(g: &Graph, w: &ModelWeights, cfg: &ModelConfig, labels: &Labels) -> Result<ForwardTrace> {
    cfg.validate()?;
    w.check_shapes(cfg)?;
    if g.is_empty() {
        return Err(Error::Shape("graph has no nodes".into()));
    }
    if g.schema().one_hot_width() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "graph one-hot width {} differs from input_dim {}",
            g.schema().one_hot_width(),
            cfg.input_dim
        )));
    }
    check_labels(g, cfg, labels)?;

    let gcn = (cfg.arch == Arch::Gcn).then(|| normalized_adjacency_gcn(g));
    let mut x = g.one_hot_matrix();
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for layer in &w.layers {
        let y = &x * &layer.weight;
        let (adjacency, pre, z) = match (&gcn, &layer.attention) {
            (Some(a), _) => {
                let z = a * &y;
                (vec![a.clone()], Vec::new(), z)
            }
            (None, Some(att)) => {
                let attn = attention_adjacency_gat(g, &y, att);
                let hd = cfg.head_dim();
                let mut z = DMatrix::zeros(g.n(), cfg.hidden_dim);
                for (h, alpha) in attn.alpha.iter().enumerate() {
                    let zh = alpha * y.columns(h * hd, hd);
                    z.columns_mut(h * hd, hd).copy_from(&zh);
                }
                (attn.alpha, attn.pre, z)
            }
            (None, None) => unreachable!("GAT layers carry attention parameters"),
        };
        let next = z.map(|v| cfg.activation.apply(v));
        layers.push(LayerTrace { x, y, adjacency, pre, z });
        x = next;
    }

    let readout_pre = &x * &w.readout[0];
    let readout_hidden = readout_pre.map(|v| cfg.activation.apply(v));
    let logits = &readout_hidden * &w.readout[1];
    let (probs, loss) = match labels {
        Labels::Graph(c) => {
            let pooled = logits.row_mean();
            let p = softmax(pooled.iter().copied());
            let loss = -p[*c].ln();
            (DMatrix::from_row_slice(1, p.len(), &p), loss)
        }
        Labels::Nodes(ys) => {
            let mut probs = DMatrix::zeros(g.n(), cfg.num_classes);
            let mut loss = 0.0;
            for (i, &c) in ys.iter().enumerate() {
                let p = softmax(logits.row(i).iter().copied());
                loss -= p[c].ln();
                probs.row_mut(i).copy_from_slice(&p);
            }
            (probs, loss / g.n() as f64)
        }
    };
    Ok(ForwardTrace {
        layers,
        embeddings: x,
        readout_pre,
        readout_hidden,
        logits,
        probs,
        labels: labels.clone(),
        loss,
    })
}

fn check_labels(g: &Graph, cfg: &ModelConfig, labels: &Labels) -> Result<()> {
    match (labels, cfg.task) {
        (Labels::Graph(c), Task::GraphClassification) if *c < cfg.num_classes => Ok(()),
        (Labels::Nodes(ys), Task::NodeClassification)
            if ys.len() == g.n() && ys.iter().all(|&c| c < cfg.num_classes) =>
        {
            Ok(())
        }
        _ => Err(Error::Shape(format!(
            "labels {labels:?} do not fit a {:?} task with {} classes on {} nodes",
            cfg.task,
            cfg.num_classes,
            g.n()
        ))),
    }
}

fn softmax(v: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::Activation;
    use super::*;
    use crate::graph::NodeFeatures;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_uniform_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for arch in [Arch::Gcn, Arch::Gat] {
            let cfg = config(arch, 8, 0);
            let g = random_graph(&mut rng, 6, Task::GraphClassification);
            let t = forward(&g, &ModelWeights::zeros(&cfg), &cfg, &Labels::Graph(1)).unwrap();
            assert!(t.logits.iter().all(|&x| x == 0.0));
            assert!((t.loss - 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn single_node_gcn_by_hand() {
        // Declared degree 1 gives a self coefficient of 1/2.
        let s = schema(Task::GraphClassification);
        let g = Graph::single(s, NodeFeatures::new(vec![1, 2])).unwrap();
        let mut cfg = config(Arch::Gcn, 9, 0);
        cfg.num_layers = 1;
        let mut w = ModelWeights::init(&cfg);
        let mut ident = DMatrix::<f64>::identity(9, 9);
        ident[(7, 7)] = -1.0;
        w.layers[0].weight = ident;
        let t = forward(&g, &w, &cfg, &Labels::Graph(0)).unwrap();
        let x = g.one_hot_matrix();
        let expected = (&x * &w.layers[0].weight * 0.5).map(|v: f64| v.max(0.0));
        assert_eq!(t.embeddings, expected);
        assert_eq!(x[(0, 7)], 1.0);
        assert_eq!(t.embeddings[(0, 7)], 0.0);
        assert_eq!(t.embeddings[(0, 1)], 0.5);
    }

    #[test]
    fn graph_loss_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for arch in [Arch::Gcn, Arch::Gat] {
            let mut cfg = config(arch, 8, 5);
            cfg.activation = Activation::Gelu;
            let w = ModelWeights::init(&cfg);
            for _ in 0..20 {
                let g = random_graph(&mut rng, 7, Task::GraphClassification);
                let perm: Vec<usize> = (0..g.n()).rev().collect();
                let a = forward(&g, &w, &cfg, &Labels::Graph(2)).unwrap().loss;
                let b = forward(&g.permuted(&perm), &w, &cfg, &Labels::Graph(2)).unwrap().loss;
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_bad_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = config(Arch::Gcn, 8, 0);
        let g = random_graph(&mut rng, 4, Task::GraphClassification);
        let w = ModelWeights::init(&cfg);
        assert!(forward(&g, &w, &cfg, &Labels::Graph(3)).is_err());
        assert!(forward(&g, &w, &cfg, &Labels::Nodes(vec![0; g.n()])).is_err());
    }
}
