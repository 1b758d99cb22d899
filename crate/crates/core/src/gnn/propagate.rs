use nalgebra::DMatrix;

use super::adjacency::leaky;
use super::{Arch, ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::graph::BuildingBlock;

/// The layer-`l` input embedding of the block's center, computed on the block
/// alone. At layer `k` only nodes within `l - k` hops of the center are
/// evaluated, which is exactly the set the center's embedding depends on.
/// GCN normalization uses declared degrees, so boundary nodes whose
/// neighborhoods are cut off still contribute their true coefficients.
pub fn propagate_block(b: &BuildingBlock, w: &ModelWeights, cfg: &ModelConfig, l: usize) -> Result<Vec<f64>> {
    if l > b.hop() {
        return Err(Error::HopTooSmall { hop: b.hop(), layer: l });
    }
    if l > cfg.num_layers {
        return Err(Error::Config(format!(
            "layer {l} exceeds the model's {} layers",
            cfg.num_layers
        )));
    }
    let g = b.graph();
    let schema = g.schema();
    if l == 0 {
        return Ok(b.center_features().one_hot(schema));
    }
    let dist: Vec<usize> = g
        .distances_from(b.center())
        .into_iter()
        .map(|d| d.expect("block nodes are reachable from the center"))
        .collect();
    let offsets = schema.offsets();
    let eff: Vec<f64> = (0..g.n()).map(|i| (g.declared_degree(i) + 1) as f64).collect();

    // `x` holds one row per node of `active`, in `active` order.
    let mut active: Vec<usize> = (0..g.n()).filter(|&v| dist[v] <= l).collect();
    let mut x: Option<DMatrix<f64>> = None;
    let mut row_of = vec![usize::MAX; g.n()];
    for k in 0..l {
        for (r, &v) in active.iter().enumerate() {
            row_of[v] = r;
        }
        let weight = &w.layers[k].weight;
        let y = match &x {
            None => {
                let mut y = DMatrix::zeros(active.len(), cfg.hidden_dim);
                for (r, &v) in active.iter().enumerate() {
                    let mut row = y.row_mut(r);
                    for (f, &val) in g.node(v).values().iter().enumerate() {
                        row += weight.row(offsets[f] + val as usize);
                    }
                }
                y
            }
            Some(x) => x * weight,
        };
        let out: Vec<usize> = active.iter().copied().filter(|&v| dist[v] < l - k).collect();
        let mut z = DMatrix::zeros(out.len(), cfg.hidden_dim);
        match cfg.arch {
            Arch::Gcn => {
                for (r, &i) in out.iter().enumerate() {
                    let closed = std::iter::once(i).chain(g.neighbors(i).iter().copied());
                    for j in closed {
                        let coef = 1.0 / (eff[i] * eff[j]).sqrt();
                        let rj = row_of[j];
                        for c in 0..cfg.hidden_dim {
                            z[(r, c)] += coef * y[(rj, c)];
                        }
                    }
                }
            }
            Arch::Gat => {
                let att = w.layers[k].attention.as_ref().expect("GAT attention");
                let hd = cfg.head_dim();
                for h in 0..cfg.heads {
                    let yh = y.columns(h * hd, hd);
                    let a_src = att.row(h).columns(0, hd).transpose();
                    let a_dst = att.row(h).columns(hd, hd).transpose();
                    for (r, &i) in out.iter().enumerate() {
                        let s = yh.row(row_of[i]).dot(&a_src.transpose());
                        let closed: Vec<usize> = std::iter::once(i).chain(g.neighbors(i).iter().copied()).collect();
                        let logits: Vec<f64> = closed
                            .iter()
                            .map(|&j| leaky(s + yh.row(row_of[j]).dot(&a_dst.transpose())))
                            .collect();
                        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = logits.iter().map(|e| (e - max).exp()).sum();
                        for (&j, e) in closed.iter().zip(&logits) {
                            let alpha = (e - max).exp() / total;
                            let rj = row_of[j];
                            for c in 0..hd {
                                z[(r, h * hd + c)] += alpha * yh[(rj, c)];
                            }
                        }
                    }
                }
            }
        }
        x = Some(z.map(|v| cfg.activation.apply(v)));
        active = out;
    }
    let x = x.expect("at least one layer");
    debug_assert_eq!(active, vec![b.center()]);
    Ok(x.row(0).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::{forward, Activation, Labels};
    use super::*;
    use crate::graph::{k_hop_neighborhood, Graph, NodeFeatures, Task};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layer_zero_is_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let g = random_graph(&mut rng, 5, Task::GraphClassification);
        let cfg = config(Arch::Gcn, 8, 0);
        let w = ModelWeights::init(&cfg);
        let b = k_hop_neighborhood(&g, 0, 0).unwrap();
        assert_eq!(propagate_block(&b, &w, &cfg, 0).unwrap(), g.node(0).one_hot(g.schema()));
        assert!(matches!(
            propagate_block(&b, &w, &cfg, 1),
            Err(Error::HopTooSmall { hop: 0, layer: 1 })
        ));
    }

    #[test]
    fn block_embedding_equals_full_graph_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for arch in [Arch::Gcn, Arch::Gat] {
            for activation in [Activation::Relu, Activation::Gelu] {
                let mut cfg = config(arch, 8, 7);
                cfg.activation = activation;
                cfg.num_layers = 3;
                let w = ModelWeights::init(&cfg);
                for _ in 0..15 {
                    let g = random_graph(&mut rng, 9, Task::GraphClassification);
                    let t = forward(&g, &w, &cfg, &Labels::Graph(0)).unwrap();
                    for l in 1..=3 {
                        let full = if l < 3 { &t.layers[l].x } else { &t.embeddings };
                        for v in 0..g.n() {
                            let b = k_hop_neighborhood(&g, v, l).unwrap();
                            let got = propagate_block(&b, &w, &cfg, l).unwrap();
                            for (c, &val) in got.iter().enumerate() {
                                assert!((val - full[(v, c)]).abs() <= 1e-12, "{arch:?} l={l} v={v}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn distant_features_do_not_matter() {
        // Path 0-1-2-3: node 3 is three hops from node 0.
        let s = schema(Task::GraphClassification);
        let build = |kind: u32| {
            Graph::new(
                s.clone(),
                vec![
                    NodeFeatures::new(vec![1, 0]),
                    NodeFeatures::new(vec![2, 1]),
                    NodeFeatures::new(vec![2, 2]),
                    NodeFeatures::new(vec![1, kind]),
                ],
                [(0, 1), (1, 2), (2, 3)],
            )
            .unwrap()
        };
        for arch in [Arch::Gcn, Arch::Gat] {
            let cfg = config(arch, 8, 3);
            let w = ModelWeights::init(&cfg);
            let a = forward(&build(0), &w, &cfg, &Labels::Graph(0)).unwrap();
            let b = forward(&build(3), &w, &cfg, &Labels::Graph(0)).unwrap();
            assert_eq!(a.embeddings.row(0), b.embeddings.row(0));
            assert_ne!(a.embeddings.row(2), b.embeddings.row(2));
        }
    }
}
