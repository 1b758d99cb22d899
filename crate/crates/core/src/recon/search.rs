use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::time::{Duration, Instant};

use lru::LruCache;
use serde::{Deserialize, Serialize};

use super::order::{cmp_f64, order_blocks, RankedBlock};
use super::{gradient_distance, is_exact};
use crate::gnn::{GradientBundle, Labels};
use crate::graph::{canonical_key, dangling_nodes, glue_merged, Graph, GraphKey};
use crate::par;
use crate::span::CandidateSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Wall-clock budget; `None` searches to exhaustion.
    pub timeout: Option<Duration>,
    pub unique_heuristic: bool,
    pub memo_capacity: usize,
    /// States with more nodes than this are pruned.
    pub max_nodes: usize,
    pub gnn_only_distance: bool,
    /// Search the subtrees of different root blocks concurrently.
    pub parallel_roots: bool,
}

impl SearchOptions {
    pub fn for_bundle(bundle: &GradientBundle) -> Self {
        Self {
            timeout: Some(Duration::from_secs(900)),
            unique_heuristic: false,
            memo_capacity: 1_000_000,
            max_nodes: bundle.config.hidden_dim.saturating_sub(1).max(1),
            gnn_only_distance: false,
            parallel_roots: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub expanded: u64,
    pub pruned: u64,
    pub complete_graphs: u64,
    pub timed_out: bool,
}

impl SearchStats {
    pub(crate) fn absorb(&mut self, other: &SearchStats) {
        self.expanded += other.expanded;
        self.pruned += other.pruned;
        self.complete_graphs += other.complete_graphs;
        self.timed_out |= other.timed_out;
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// The best complete graph, or the least incomplete state when no
    /// complete graph was reached; `None` only when there were no blocks.
    pub best_graph: Option<Graph>,
    pub best_distance: f64,
    pub exact: bool,
    /// Whether `best_graph` has no dangling nodes.
    pub complete: bool,
    pub label_argmin: Option<Labels>,
    pub stats: SearchStats,
    pub elapsed: Duration,
}

/// The dangling node with the largest degree deficit, lowest index first.
///
/// # Panics
/// If `g` has no dangling node.
pub fn select_dangling(g: &Graph) -> usize {
    (0..g.n())
        .filter(|&v| g.deficit(v) > 0)
        .max_by(|&a, &b| g.deficit(a).cmp(&g.deficit(b)).then(b.cmp(&a)))
        .expect("graph has a dangling node")
}

/// Every state reachable from `g` by gluing one block at `v`, with and
/// without merging the new nodes into existing ones. Each returned graph has
/// `v` complete and keeps every previously complete node complete. The index
/// of the block used accompanies each graph.
pub fn branch(ordered: &[RankedBlock], g: &Graph, v: usize, hop: usize, unique: bool) -> Vec<(usize, Graph)> {
    let host_n = g.n();
    let mut out = Vec::new();
    for (i, r) in ordered.iter().enumerate() {
        if r.block().center_features() != g.node(v) {
            continue;
        }
        for variant in glue_merged(g, r.block(), v, hop, unique) {
            let progress = variant.deficit(v) == 0 && (0..host_n).all(|u| g.deficit(u) > 0 || variant.deficit(u) == 0);
            if progress {
                out.push((i, variant));
            }
        }
    }
    out
}

struct Best {
    complete: Option<(f64, GraphKey, Graph, Option<Labels>)>,
    partial: Option<(usize, Graph)>,
    exact: bool,
}

impl Best {
    fn new() -> Self {
        Self {
            complete: None,
            partial: None,
            exact: false,
        }
    }
}

struct Search<'a> {
    ordered: &'a [RankedBlock],
    bundle: &'a GradientBundle,
    opts: &'a SearchOptions,
    hop: usize,
    start: Instant,
    cancel: &'a AtomicBool,
    memo: LruCache<(GraphKey, Vec<usize>), ()>,
    stats: SearchStats,
    best: Best,
}

impl Search<'_> {
    fn out_of_time(&mut self) -> bool {
        if self.opts.timeout.is_some_and(|t| self.start.elapsed() >= t) {
            self.stats.timed_out = true;
            return true;
        }
        self.cancel.load(AtomicOrdering::Relaxed)
    }

    /// Returns `true` once an exact graph is found or the search must stop.
    fn visit(&mut self, g: Graph, used: &mut Vec<usize>) -> bool {
        if self.out_of_time() {
            return true;
        }
        let key = canonical_key(&g);
        let used_key = if self.opts.unique_heuristic {
            let mut u = used.clone();
            u.sort_unstable();
            u
        } else {
            Vec::new()
        };
        if self.memo.put((key.clone(), used_key), ()).is_some() {
            self.stats.pruned += 1;
            return false;
        }
        self.stats.expanded += 1;

        let dangling = dangling_nodes(&g);
        if dangling.is_empty() {
            self.stats.complete_graphs += 1;
            let r = gradient_distance(&g, self.bundle, self.opts.gnn_only_distance);
            let exact = is_exact(r.distance, self.bundle, self.opts.gnn_only_distance);
            let better = match &self.best.complete {
                None => true,
                Some((d, k, _, _)) => cmp_f64(r.distance, *d).then_with(|| key.cmp(k)).is_lt(),
            };
            if better {
                self.best.complete = Some((r.distance, key, g, r.labels));
            }
            if exact {
                self.best.exact = true;
                return true;
            }
            return false;
        }

        let total_deficit: usize = dangling.iter().map(|&v| g.deficit(v)).sum();
        if self.best.partial.as_ref().is_none_or(|(d, _)| total_deficit < *d) {
            self.best.partial = Some((total_deficit, g.clone()));
        }

        let v = select_dangling(&g);
        for (i, child) in branch(self.ordered, &g, v, self.hop, self.opts.unique_heuristic) {
            if self.opts.unique_heuristic && used.contains(&i) {
                continue;
            }
            if child.n() > self.opts.max_nodes {
                self.stats.pruned += 1;
                continue;
            }
            used.push(i);
            let stop = self.visit(child, used);
            used.pop();
            if stop {
                return true;
            }
        }
        false
    }
}

fn run_roots(
    ordered: &[RankedBlock],
    roots: &[usize],
    bundle: &GradientBundle,
    opts: &SearchOptions,
    start: Instant,
    cancel: &AtomicBool,
) -> (Best, SearchStats) {
    let hop = bundle.config.num_layers;
    let cap = NonZeroUsize::new(opts.memo_capacity.max(1)).expect("nonzero");
    let mut s = Search {
        ordered,
        bundle,
        opts,
        hop,
        start,
        cancel,
        memo: LruCache::new(cap),
        stats: SearchStats::default(),
        best: Best::new(),
    };
    for &r in roots {
        let g = ordered[r].block().graph().clone();
        if g.n() > opts.max_nodes {
            s.stats.pruned += 1;
            continue;
        }
        let mut used = vec![r];
        if s.visit(g, &mut used) {
            break;
        }
    }
    (s.best, s.stats)
}

/// Depth-first reconstruction from the block set `t_b`. Roots are tried in
/// score order; at every state the dangling node with the largest deficit is
/// completed by gluing blocks. The search stops at the first complete graph
/// whose gradients match the bundle, on timeout, or on exhaustion.
pub fn do_dfs(t_b: &CandidateSet, bundle: &GradientBundle, opts: &SearchOptions) -> SearchResult {
    let start = Instant::now();
    let hop = bundle.config.num_layers;
    let ordered = order_blocks(t_b, hop);
    let cancel = AtomicBool::new(false);

    let (best, stats) = if opts.parallel_roots && ordered.len() > 1 {
        let roots: Vec<usize> = (0..ordered.len()).collect();
        let parts = par::map(&roots, |&r| {
            let out = run_roots(&ordered, &[r], bundle, opts, start, &cancel);
            if out.0.exact {
                cancel.store(true, AtomicOrdering::Relaxed);
            }
            out
        });
        merge(parts)
    } else {
        let roots: Vec<usize> = (0..ordered.len()).collect();
        run_roots(&ordered, &roots, bundle, opts, start, &cancel)
    };

    let elapsed = start.elapsed();
    match best.complete {
        Some((distance, _, graph, labels)) => SearchResult {
            best_graph: Some(graph),
            best_distance: distance,
            exact: best.exact,
            complete: true,
            label_argmin: labels,
            stats,
            elapsed,
        },
        None => {
            let (graph, distance, labels) = match best.partial {
                Some((_, g)) => {
                    let r = gradient_distance(&g, bundle, opts.gnn_only_distance);
                    (Some(g), r.distance, r.labels)
                }
                None => (None, f64::INFINITY, None),
            };
            SearchResult {
                best_graph: graph,
                best_distance: distance,
                exact: false,
                complete: false,
                label_argmin: labels,
                stats,
                elapsed,
            }
        }
    }
}

/// Combines per-root results: exact graphs first, then smaller distance,
/// then canonical key; partial states by smaller total deficit, earlier root
/// first.
fn merge(parts: Vec<(Best, SearchStats)>) -> (Best, SearchStats) {
    let mut best = Best::new();
    let mut stats = SearchStats::default();
    for (b, s) in parts {
        stats.absorb(&s);
        if let Some(c) = b.complete {
            let better = match &best.complete {
                None => true,
                Some(cur) => {
                    let ord = if b.exact && best.exact {
                        c.1.cmp(&cur.1)
                    } else if b.exact != best.exact {
                        if b.exact {
                            std::cmp::Ordering::Less
                        } else {
                            std::cmp::Ordering::Greater
                        }
                    } else {
                        cmp_f64(c.0, cur.0).then_with(|| c.1.cmp(&cur.1))
                    };
                    ord.is_lt()
                }
            };
            if better {
                best.complete = Some(c);
                best.exact |= b.exact;
            }
        }
        if let Some(p) = b.partial {
            if best.partial.as_ref().is_none_or(|(d, _)| p.0 < *d) {
                best.partial = Some(p);
            }
        }
    }
    (best, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{simulate_client_step, Arch, LabelPolicy, ModelConfig};
    use crate::graph::test_support::graph;
    use crate::graph::{feature_isomorphic, k_hop_neighborhood};
    use crate::span::Candidate;

    fn bundle(g: &Graph, arch: Arch) -> GradientBundle {
        let mut cfg = ModelConfig::for_schema(g.schema(), arch);
        cfg.hidden_dim = 32;
        cfg.seed = 17;
        simulate_client_step(g, &cfg, &LabelPolicy::Graph(1)).unwrap()
    }

    fn true_blocks(g: &Graph, hop: usize) -> CandidateSet {
        CandidateSet {
            level: hop,
            blocks: (0..g.n())
                .map(|v| Candidate {
                    block: k_hop_neighborhood(g, v, hop).unwrap(),
                    distance: 0.0,
                })
                .collect(),
        }
    }

    fn opts(b: &GradientBundle) -> SearchOptions {
        SearchOptions {
            timeout: None,
            ..SearchOptions::for_bundle(b)
        }
    }

    #[test]
    fn select_dangling_rule() {
        let g = graph(&[0, 1, 2], &[(0, 1), (1, 2)]);
        let mut nodes = g.nodes().to_vec();
        nodes[0] = crate::graph::test_support::nf(2, 0);
        let one = Graph::new(g.schema().clone(), nodes.clone(), g.edges().iter().copied()).unwrap();
        assert_eq!(select_dangling(&one), 0);
        nodes[2] = crate::graph::test_support::nf(4, 2);
        let two = Graph::new(g.schema().clone(), nodes.clone(), g.edges().iter().copied()).unwrap();
        assert_eq!(select_dangling(&two), 2);
        nodes[0] = crate::graph::test_support::nf(4, 0);
        let tie = Graph::new(g.schema().clone(), nodes, g.edges().iter().copied()).unwrap();
        assert_eq!(select_dangling(&tie), 0);
    }

    #[test]
    fn single_block_graph_is_exact_at_the_root() {
        let g = graph(&[0, 1, 2], &[(0, 1), (1, 2)]);
        let b = bundle(&g, Arch::Gcn);
        let r = do_dfs(&true_blocks(&g, 2), &b, &opts(&b));
        assert!(r.exact && r.complete);
        assert_eq!(r.stats.expanded, 1);
        assert!(feature_isomorphic(r.best_graph.as_ref().unwrap(), &g));
    }

    #[test]
    fn reconstructs_paths_and_cycles() {
        let cases = [
            graph(&[0, 1, 2, 3, 4], &[(0, 1), (1, 2), (2, 3), (3, 4)]),
            graph(&[0, 1, 2, 3, 4, 5], &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]),
            graph(&[0, 1, 2, 3, 4, 5], &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5)]),
            graph(&[0, 1, 1, 2, 3, 1], &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]),
        ];
        for g in &cases {
            for arch in [Arch::Gcn, Arch::Gat] {
                let b = bundle(g, arch);
                let r = do_dfs(&true_blocks(g, 2), &b, &opts(&b));
                assert!(r.exact, "{arch:?} {g:?}");
                assert!(feature_isomorphic(r.best_graph.as_ref().unwrap(), g));
                let par = do_dfs(&true_blocks(g, 2), &b, &SearchOptions { parallel_roots: true, ..opts(&b) });
                assert!(par.exact);
            }
        }
    }

    #[test]
    fn branch_offers_open_and_closed_variants() {
        // 4-cycle with kinds 0-1-2-1. Starting from the star around kind 0,
        // the first glue adds the kind-2 node; the second can either close the
        // cycle onto it or leave a second kind-2 node open.
        let g = graph(&[0, 1, 2, 1], &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let ordered = order_blocks(&true_blocks(&g, 1), 1);
        let start = k_hop_neighborhood(&g, 0, 1).unwrap().into_graph();
        let first = branch(&ordered, &start, select_dangling(&start), 1, false);
        assert!(!first.is_empty());
        let step = &first[0].1;
        assert_eq!(step.n(), 4);
        let children = branch(&ordered, step, select_dangling(step), 1, false);
        let closed = children.iter().find(|(_, c)| c.n() == 4).expect("closed variant");
        assert!(feature_isomorphic(&closed.1, &g));
        assert!(children.iter().any(|(_, c)| c.n() == 5));
        let unique = branch(&ordered, step, select_dangling(step), 1, true);
        assert!(!unique.is_empty());
        assert!(unique.iter().all(|(_, c)| c.n() == 4));
        assert!(branch(&[], step, select_dangling(step), 1, false).is_empty());
    }

    #[test]
    fn missing_blocks_are_not_exact() {
        let g = graph(&[0, 1, 2, 3, 4, 5, 6], &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]);
        let b = bundle(&g, Arch::Gat);
        // Without the blocks centered on the middle three nodes no root can
        // be completed.
        let mut set = true_blocks(&g, 2);
        set.blocks.drain(2..5);
        let r = do_dfs(&set, &b, &opts(&b));
        assert!(!r.exact);
        assert!(r.best_distance > 0.0);
        assert!(!r.stats.timed_out);
    }

    #[test]
    fn deterministic_and_empty() {
        let g = graph(&[0, 1, 2, 3, 4, 5], &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5)]);
        let b = bundle(&g, Arch::Gcn);
        let a = do_dfs(&true_blocks(&g, 2), &b, &opts(&b));
        let c = do_dfs(&true_blocks(&g, 2), &b, &opts(&b));
        assert_eq!(a.best_graph, c.best_graph);
        assert_eq!(a.stats, c.stats);
        let e = do_dfs(&CandidateSet::default(), &b, &opts(&b));
        assert!(e.best_graph.is_none() && e.best_distance.is_infinite() && !e.exact);
    }
}
