use std::cmp::Ordering;
use std::collections::HashMap;

use crate::graph::{can_glue, canonical_key_with_colors, BuildingBlock, GraphKey, NodeFeatures};
use crate::par;
use crate::span::{Candidate, CandidateSet};

/// A block with its ordering score and rooted canonical key.
#[derive(Debug, Clone)]
pub struct RankedBlock {
    pub candidate: Candidate,
    pub score: f64,
    pub key: GraphKey,
}

impl RankedBlock {
    pub fn block(&self) -> &BuildingBlock {
        &self.candidate.block
    }
}

/// Canonical key of a block that distinguishes its center.
pub fn rooted_key(b: &BuildingBlock) -> GraphKey {
    let colors: Vec<u32> = (0..b.graph().n()).map(|i| u32::from(i != b.center())).collect();
    canonical_key_with_colors(b.graph(), &colors)
}

/// Indices sorting `scores` ascending, ties broken by `keys`. NaN sorts last.
pub fn order_by_scores<K: Ord>(scores: &[f64], keys: &[K]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        cmp_f64(scores[a], scores[b]).then_with(|| keys[a].cmp(&keys[b]))
    });
    idx
}

/// Scores every block by summing, over its dangling nodes, the smallest span
/// distance of a block that can be glued there (`+∞` when none can), and
/// returns the blocks sorted by that score.
pub fn order_blocks(t_b: &CandidateSet, hop: usize) -> Vec<RankedBlock> {
    let mut by_center: HashMap<&NodeFeatures, Vec<usize>> = HashMap::new();
    for (i, c) in t_b.blocks.iter().enumerate() {
        by_center.entry(c.block.center_features()).or_default().push(i);
    }
    let scores = par::map(&t_b.blocks, |c| {
        let g = c.block.graph();
        c.block
            .dangling()
            .into_iter()
            .map(|v| {
                by_center
                    .get(g.node(v))
                    .into_iter()
                    .flatten()
                    .filter(|&&j| can_glue(g, &t_b.blocks[j].block, v, hop))
                    .map(|&j| t_b.blocks[j].distance)
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
    });
    let keys = par::map(&t_b.blocks, |c| rooted_key(&c.block));
    order_by_scores(&scores, &keys)
        .into_iter()
        .map(|i| RankedBlock {
            candidate: t_b.blocks[i].clone(),
            score: scores[i],
            key: keys[i].clone(),
        })
        .collect()
}

pub(crate) fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan()))
}
