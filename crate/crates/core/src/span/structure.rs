use std::collections::HashMap;

use super::{Candidate, CandidateSet};
use crate::gnn::GradientBundle;
use crate::graph::{can_glue, Graph, NodeFeatures};
use crate::par;
use crate::recon::{gradient_distance, is_exact};

#[derive(Debug, Clone)]
pub enum StructureOutcome {
    /// A block that is already a complete graph reproducing the gradients.
    Exact { graph: Graph, distance: f64 },
    /// Blocks whose every dangling node can take at least one other block.
    Filtered(CandidateSet),
}

/// Removes blocks that cannot be completed by gluing other blocks of `t_l`,
/// or short-circuits when one of them is already the client graph.
pub fn structure_filter(t_l: CandidateSet, bundle: &GradientBundle, gnn_only: bool) -> StructureOutcome {
    let hop = bundle.config.num_layers;
    let mut by_center: HashMap<&NodeFeatures, Vec<usize>> = HashMap::new();
    for (i, c) in t_l.blocks.iter().enumerate() {
        by_center.entry(c.block.center_features()).or_default().push(i);
    }

    enum Verdict {
        Exact(f64),
        Keep,
        Drop,
    }
    let verdicts = par::map(&t_l.blocks, |c: &Candidate| {
        let g = c.block.graph();
        let dangling = c.block.dangling();
        if dangling.is_empty() {
            let d = gradient_distance(g, bundle, gnn_only).distance;
            return if is_exact(d, bundle, gnn_only) { Verdict::Exact(d) } else { Verdict::Keep };
        }
        let ok = dangling.iter().all(|&v| {
            by_center
                .get(g.node(v))
                .is_some_and(|ids| ids.iter().any(|&j| can_glue(g, &t_l.blocks[j].block, v, hop)))
        });
        if ok {
            Verdict::Keep
        } else {
            Verdict::Drop
        }
    });

    for (c, v) in t_l.blocks.iter().zip(&verdicts) {
        if let Verdict::Exact(distance) = v {
            return StructureOutcome::Exact {
                graph: c.block.graph().clone(),
                distance: *distance,
            };
        }
    }
    let level = t_l.level;
    let blocks = t_l
        .blocks
        .into_iter()
        .zip(verdicts)
        .filter_map(|(c, v)| matches!(v, Verdict::Keep).then_some(c))
        .collect();
    StructureOutcome::Filtered(CandidateSet { level, blocks })
}
