use std::collections::HashSet;
use std::sync::Arc;

use super::{Candidate, CandidateSet, SpanChecker};
use crate::error::{Error, Result};
use crate::graph::{canonical_key_with_colors, glue_merged, BuildingBlock, FeatureSchema, Graph, NodeFeatures};
use crate::par;
use crate::recon::rooted_key;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub tau: f64,
    pub candidate_cap: usize,
    /// Assume node feature vectors are pairwise distinct.
    pub unique_heuristic: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            candidate_cap: 200_000,
            unique_heuristic: false,
        }
    }
}

/// Candidate counts before and after the span check at one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub generated: usize,
    pub kept: usize,
}

/// All 1-hop blocks whose center is drawn from `pool` and whose neighbors form
/// a multiset of exactly `deg(center)` pool nodes with nonzero declared
/// degree. Centers with declared degree 0 become single-node blocks.
pub fn one_hop_blocks(
    pool: &[NodeFeatures],
    schema: &Arc<FeatureSchema>,
    cap: usize,
    unique: bool,
) -> Result<Vec<BuildingBlock>> {
    let leaves: Vec<&NodeFeatures> = pool.iter().filter(|f| f.declared_degree(schema) >= 1).collect();
    let mut total = 0usize;
    for center in pool {
        let d = center.declared_degree(schema);
        total = total.saturating_add(multiset_count(leaves.len(), d));
        if total > cap {
            return Err(Error::CandidateCap { level: 1, count: total, cap });
        }
    }
    let mut out = Vec::with_capacity(total);
    for center in pool {
        let d = center.declared_degree(schema);
        let mut choice = Vec::with_capacity(d);
        multisets(leaves.len(), d, 0, &mut choice, &mut |picked| {
            let mut nodes = Vec::with_capacity(d + 1);
            nodes.push(center.clone());
            nodes.extend(picked.iter().map(|&i| leaves[i].clone()));
            if unique && has_duplicate_features(&nodes) {
                return;
            }
            let edges = (1..=d).map(|i| (0, i));
            let g = Graph::new(schema.clone(), nodes, edges).expect("leaves have declared degree >= 1");
            out.push(BuildingBlock::new(g, 0, 1).expect("stars are 1-hop blocks"));
        });
    }
    Ok(out)
}

fn multiset_count(n: usize, k: usize) -> usize {
    // C(n + k - 1, k), saturating.
    if k == 0 {
        return 1;
    }
    if n == 0 {
        return 0;
    }
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c * (n as u128 + i) / (i + 1);
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

fn multisets(n: usize, k: usize, start: usize, current: &mut Vec<usize>, emit: &mut impl FnMut(&[usize])) {
    if current.len() == k {
        emit(current);
        return;
    }
    for i in start..n {
        current.push(i);
        multisets(n, k, i, current, emit);
        current.pop();
    }
}

fn has_duplicate_features(nodes: &[NodeFeatures]) -> bool {
    let mut seen = HashSet::new();
    !nodes.iter().all(|f| seen.insert(f))
}

/// Grows an `l`-hop block into every consistent `(l + 1)`-hop block by gluing
/// 1-hop blocks onto its dangling boundary nodes, one node at a time, and
/// merging the new nodes into existing ones where features allow.
pub fn extend_block(b: &BuildingBlock, one_hop: &[BuildingBlock], unique: bool) -> Vec<BuildingBlock> {
    let l = b.hop();
    let base = b.graph();
    let dist = base.distances_from(b.center());
    let mut boundary = Vec::new();
    for (v, d) in dist.iter().enumerate() {
        if base.deficit(v) > 0 {
            if *d != Some(l) {
                return Vec::new();
            }
            boundary.push(v);
        }
    }
    let fixed = base.n();
    let key_of = |g: &Graph| {
        let colors: Vec<u32> = (0..g.n())
            .map(|i| if i < fixed { i as u32 } else { u32::MAX })
            .collect();
        canonical_key_with_colors(g, &colors)
    };

    let mut states = vec![base.clone()];
    for &v in &boundary {
        let mut next = Vec::new();
        let mut seen = HashSet::new();
        for s in &states {
            if s.deficit(v) == 0 {
                if seen.insert(key_of(s)) {
                    next.push(s.clone());
                }
                continue;
            }
            for blk in one_hop.iter().filter(|blk| blk.center_features() == s.node(v)) {
                for variant in glue_merged(s, blk, v, 1, unique) {
                    if variant.deficit(v) == 0 && seen.insert(key_of(&variant)) {
                        next.push(variant);
                    }
                }
            }
        }
        states = next;
        if states.is_empty() {
            return Vec::new();
        }
    }

    states
        .into_iter()
        .filter_map(|g| {
            let d = g.distances_from(b.center());
            let inner_complete = (0..g.n()).all(|i| d[i].is_some_and(|x| x > l) || g.deficit(i) == 0);
            if !inner_complete || (unique && has_duplicate_features(g.nodes())) {
                return None;
            }
            BuildingBlock::new(g, b.center(), l + 1).ok()
        })
        .collect()
}

/// Builds the filtered block sets `T*_0 ..= T*_L` from the recovered node
/// feature vectors. Level `l` blocks are checked against the layer-`l`
/// gradient; level `L` against the first readout layer.
pub fn generate_bbs(
    t0: &[NodeFeatures],
    schema: &Arc<FeatureSchema>,
    checker: &SpanChecker<'_>,
    opts: &GenerateOptions,
) -> Result<(Vec<CandidateSet>, Vec<LevelStats>)> {
    let num_layers = checker.bundle().config.num_layers;
    let singles: Vec<BuildingBlock> = t0
        .iter()
        .map(|f| {
            let g = Graph::single(schema.clone(), f.clone()).expect("valid node features");
            BuildingBlock::new(g, 0, 0).expect("single node block")
        })
        .collect();
    let level0: Vec<Candidate> = singles
        .into_iter()
        .map(|block| {
            let distance = checker.distance(&block, 0)?;
            Ok(Candidate { block, distance })
        })
        .collect::<Result<_>>()?;
    let mut levels = vec![CandidateSet { level: 0, blocks: level0 }];
    let mut stats = vec![LevelStats {
        level: 0,
        generated: t0.len(),
        kept: t0.len(),
    }];

    let raw = one_hop_blocks(t0, schema, opts.candidate_cap, opts.unique_heuristic)?;
    let generated = raw.len();
    let t1 = checker.filter(raw, 1, opts.tau)?;
    log::info!("level 1: {} of {generated} blocks survive", t1.len());
    stats.push(LevelStats {
        level: 1,
        generated,
        kept: t1.len(),
    });
    let one_hop: Vec<BuildingBlock> = t1.iter().map(|c| c.block.clone()).collect();
    levels.push(CandidateSet { level: 1, blocks: t1 });

    for l in 1..num_layers {
        let current = &levels[l].blocks;
        let extended = par::map(current, |c| extend_block(&c.block, &one_hop, opts.unique_heuristic));
        let mut seen = HashSet::new();
        let mut raw = Vec::new();
        for block in extended.into_iter().flatten() {
            if seen.insert(rooted_key(&block)) {
                raw.push(block);
                if raw.len() > opts.candidate_cap {
                    return Err(Error::CandidateCap {
                        level: l + 1,
                        count: raw.len(),
                        cap: opts.candidate_cap,
                    });
                }
            }
        }
        let generated = raw.len();
        let kept = checker.filter(raw, l + 1, opts.tau)?;
        log::info!("level {}: {} of {generated} blocks survive", l + 1, kept.len());
        stats.push(LevelStats {
            level: l + 1,
            generated,
            kept: kept.len(),
        });
        levels.push(CandidateSet { level: l + 1, blocks: kept });
    }
    Ok((levels, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{simulate_client_step, Activation, Arch, LabelPolicy, ModelConfig};
    use crate::graph::{feature_isomorphic_rooted, k_hop_neighborhood, FeatureSpec, Task};

    fn schema() -> Arc<FeatureSchema> {
        Arc::new(
            FeatureSchema::new(
                vec![
                    FeatureSpec { name: "degree".into(), cardinality: 4 },
                    FeatureSpec { name: "kind".into(), cardinality: 5 },
                ],
                0,
                2,
                Task::GraphClassification,
            )
            .unwrap(),
        )
    }

    fn nf(d: u32, k: u32) -> NodeFeatures {
        NodeFeatures::new(vec![d, k])
    }

    fn cfg(arch: Arch) -> ModelConfig {
        ModelConfig {
            arch,
            num_layers: 2,
            hidden_dim: 32,
            heads: 2,
            activation: Activation::Relu,
            input_dim: 9,
            num_classes: 2,
            task: Task::GraphClassification,
            seed: 9,
        }
    }

    #[test]
    fn multiset_attachment_count() {
        let s = schema();
        let pool = vec![nf(2, 0), nf(1, 1), nf(1, 2)];
        let blocks = one_hop_blocks(&pool[..1], &s, 100, false).unwrap();
        assert_eq!(blocks.len(), 1);
        let mut all = one_hop_blocks(&pool, &s, 100, false).unwrap();
        // Center of degree 2 over a pool of 3: C(4, 2) = 6; the two degree-1
        // centers add 3 each.
        assert_eq!(all.len(), 12);
        all.retain(|b| b.center_features() == &nf(2, 0));
        assert_eq!(all.len(), 6);
        assert!(matches!(
            one_hop_blocks(&pool, &s, 5, false),
            Err(Error::CandidateCap { level: 1, .. })
        ));
        assert_eq!(multiset_count(3, 2), 6);
        assert_eq!(multiset_count(0, 0), 1);
    }

    #[test]
    fn path_yields_true_two_hop_blocks() {
        let s = schema();
        let g = Graph::new(s.clone(), vec![nf(1, 0), nf(2, 1), nf(1, 2)], [(0, 1), (1, 2)]).unwrap();
        for arch in [Arch::Gcn, Arch::Gat] {
            let bundle = simulate_client_step(&g, &cfg(arch), &LabelPolicy::Graph(0)).unwrap();
            let checker = SpanChecker::new(&bundle);
            let (levels, stats) = generate_bbs(g.nodes(), &s, &checker, &GenerateOptions::default()).unwrap();
            assert_eq!(stats.len(), 3);
            let top = &levels[2];
            assert_eq!(top.len(), 3, "{arch:?}: {stats:?}");
            for v in 0..3 {
                let truth = k_hop_neighborhood(&g, v, 2).unwrap();
                assert!(top.blocks.iter().any(|c| feature_isomorphic_rooted(
                    c.block.graph(),
                    c.block.center(),
                    truth.graph(),
                    truth.center()
                )));
            }
        }
    }

    #[test]
    fn lone_node_passes_through() {
        let s = schema();
        let g = Graph::single(s.clone(), nf(0, 3)).unwrap();
        let bundle = simulate_client_step(&g, &cfg(Arch::Gcn), &LabelPolicy::Graph(1)).unwrap();
        let checker = SpanChecker::new(&bundle);
        let (levels, _) = generate_bbs(g.nodes(), &s, &checker, &GenerateOptions::default()).unwrap();
        for level in &levels {
            assert_eq!(level.len(), 1);
            assert_eq!(level.blocks[0].block.graph(), &g);
        }
    }

    #[test]
    fn extension_recovers_cycles() {
        // Triangle 0-1-2 plus pendant 3 on node 2.
        let s = schema();
        let g = Graph::new(
            s,
            vec![nf(2, 0), nf(2, 1), nf(3, 2), nf(1, 3)],
            [(0, 1), (0, 2), (1, 2), (2, 3)],
        )
        .unwrap();
        let one_hop: Vec<BuildingBlock> = (0..g.n()).map(|v| k_hop_neighborhood(&g, v, 1).unwrap()).collect();
        for unique in [false, true] {
            for v in 0..g.n() {
                let truth = k_hop_neighborhood(&g, v, 2).unwrap();
                let ext = extend_block(&one_hop[v], &one_hop, unique);
                assert!(
                    ext.iter().any(|b| feature_isomorphic_rooted(b.graph(), b.center(), truth.graph(), truth.center())),
                    "v={v} unique={unique}"
                );
            }
        }
    }
}
