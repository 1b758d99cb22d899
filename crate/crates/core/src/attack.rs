//! The end-to-end attack: node features, building blocks, structure filter,
//! then the depth-first search.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gnn::{GradientBundle, Labels};
use crate::graph::{glue_merged, FeatureSchema, Graph};
use crate::io::GraphFile;
use crate::recon::{do_dfs, SearchOptions, SearchStats};
use crate::span::{filter_nodes, Candidate, CandidateSet, generate_bbs, structure_filter, GenerateOptions, LevelStats, SpanChecker, StructureOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOptions {
    pub tau: f64,
    /// Budget for the search stage; `None` searches to exhaustion.
    pub timeout: Option<Duration>,
    pub unique_heuristic: bool,
    pub candidate_cap: usize,
    pub memo_capacity: usize,
    /// Largest graph the search will build; defaults to one less than the
    /// hidden width.
    pub max_nodes: Option<usize>,
    pub gnn_only_distance: bool,
    pub parallel_roots: bool,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            timeout: Some(Duration::from_secs(900)),
            unique_heuristic: false,
            candidate_cap: 200_000,
            memo_capacity: 1_000_000,
            max_nodes: None,
            gnn_only_distance: false,
            parallel_roots: false,
        }
    }
}

/// Wall time per stage, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub filter_nodes: f64,
    pub generate: f64,
    pub structure: f64,
    pub search: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.filter_nodes + self.generate + self.structure + self.search
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub graph: Option<Graph>,
    pub distance: f64,
    pub exact: bool,
    /// Whether `graph` has no dangling nodes.
    pub complete: bool,
    pub label_argmin: Option<Labels>,
    pub levels: Vec<LevelStats>,
    /// Blocks left after the structure filter.
    pub structure_kept: usize,
    pub search: SearchStats,
    pub timings: StageTimings,
}

fn secs(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

/// Reconstructs the client graph behind `bundle`. The attacker knows the
/// feature schema but not the graph.
pub fn run_attack(bundle: &GradientBundle, schema: &Arc<FeatureSchema>, opts: &AttackOptions) -> Result<AttackOutcome> {
    bundle.validate()?;
    bundle.config.check_schema(schema)?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let t0 = filter_nodes(schema, &bundle.grads.layers[0].weight, opts.tau, opts.candidate_cap)?;
    timings.filter_nodes = secs(t);
    log::info!("{} candidate node feature vectors", t0.len());

    let t = Instant::now();
    let checker = SpanChecker::new(bundle);
    let gen = GenerateOptions {
        tau: opts.tau,
        candidate_cap: opts.candidate_cap,
        unique_heuristic: opts.unique_heuristic,
    };
    let (levels, stats) = generate_bbs(&t0, schema, &checker, &gen)?;
    timings.generate = secs(t);
    let fallback = best_block(levels.iter());
    let top = levels.last().expect("at least one level").clone();

    let t = Instant::now();
    let outcome = structure_filter(top.clone(), bundle, opts.gnn_only_distance);
    timings.structure = secs(t);
    let t_b = match outcome {
        StructureOutcome::Exact { graph, distance } => {
            log::info!("a single block reproduces the gradients");
            let label_argmin = crate::recon::gradient_distance(&graph, bundle, opts.gnn_only_distance).labels;
            return Ok(AttackOutcome {
                graph: Some(graph),
                distance,
                exact: true,
                complete: true,
                label_argmin,
                levels: stats,
                structure_kept: 1,
                search: SearchStats::default(),
                timings,
            });
        }
        StructureOutcome::Filtered(set) => set,
    };
    log::info!("{} blocks after the structure filter", t_b.len());

    let t = Instant::now();
    let mut search = SearchOptions::for_bundle(bundle);
    search.timeout = opts.timeout;
    search.unique_heuristic = opts.unique_heuristic;
    search.memo_capacity = opts.memo_capacity;
    search.gnn_only_distance = opts.gnn_only_distance;
    search.parallel_roots = opts.parallel_roots;
    if let Some(m) = opts.max_nodes {
        search.max_nodes = m;
    }
    let mut result = do_dfs(&t_b, bundle, &search);
    // The structure filter assumes every true block survived the span check.
    // When a readout row is unrecoverable that fails, and the blocks it drops
    // may be needed, so search the unfiltered level once more.
    let remaining = search.timeout.map(|limit| limit.saturating_sub(t.elapsed()));
    if !result.exact && t_b.len() < top.len() && !result.stats.timed_out && remaining != Some(Duration::ZERO) {
        log::info!("retrying the search on all {} top-level blocks", top.len());
        let retry = do_dfs(&top, bundle, &SearchOptions { timeout: remaining, ..search.clone() });
        let mut stats = result.stats.clone();
        stats.absorb(&retry.stats);
        // Unfiltered blocks easily assemble into wrong complete graphs, so
        // only an exact or closer complete graph replaces the first result.
        let better = retry.exact || (retry.complete && result.complete && retry.best_distance < result.best_distance);
        if better {
            result = retry;
        }
        result.stats = stats;
    }
    timings.search = secs(t);
    if result.stats.timed_out {
        log::warn!("search timed out after {:.1}s", timings.search);
    }
    let max_nodes = search.max_nodes;
    let (graph, distance, label_argmin) = match (result.best_graph, fallback) {
        (Some(g), _) if result.complete => (Some(g), result.best_distance, result.label_argmin),
        (partial, block) => match partial.or(block) {
            Some(start) => {
                let g = grow_partial(start, &levels, max_nodes);
                log::info!("no complete graph found; returning a partial graph on {} nodes", g.n());
                let r = crate::recon::gradient_distance(&g, bundle, opts.gnn_only_distance);
                (Some(g), r.distance, r.labels)
            }
            None => (None, f64::INFINITY, None),
        },
    };
    let complete = graph.as_ref().is_some_and(Graph::is_complete) && result.complete;
    Ok(AttackOutcome {
        graph,
        distance,
        exact: result.exact,
        complete,
        label_argmin,
        levels: stats,
        structure_kept: t_b.len(),
        search: result.stats,
        timings,
    })
}

/// The lowest-distance block of the deepest nonempty level, as a graph.
fn best_block<'a>(levels: impl DoubleEndedIterator<Item = &'a CandidateSet>) -> Option<Graph> {
    levels.rev().find(|set| !set.is_empty()).map(|set| {
        let best = set
            .blocks
            .iter()
            .min_by(|a, b| a.distance.total_cmp(&b.distance))
            .expect("nonempty level");
        best.block.graph().clone()
    })
}

/// Greedily completes dangling nodes of an unfinished reconstruction. Each
/// dangling node, lowest index first, takes the first block that glues
/// without leaving it or any complete node incomplete; blocks are tried from
/// the deepest level down and by span distance within a level. Appended nodes
/// always merge into feature-equal ones, so growth cannot repeat a cycle
/// indefinitely.
fn grow_partial(mut g: Graph, levels: &[CandidateSet], max_nodes: usize) -> Graph {
    let ranked: Vec<&Candidate> = levels
        .iter()
        .rev()
        .filter(|set| set.level > 0)
        .flat_map(|set| {
            let mut blocks: Vec<&Candidate> = set.blocks.iter().collect();
            blocks.sort_by(|a, b| a.distance.total_cmp(&b.distance));
            blocks
        })
        .collect();
    let mut stuck = vec![false; g.n()];
    while let Some(v) = (0..g.n()).find(|&v| g.deficit(v) > 0 && !stuck.get(v).copied().unwrap_or(false)) {
        let next = ranked
            .iter()
            .filter(|c| c.block.center_features() == g.node(v))
            .find_map(|c| {
                glue_merged(&g, &c.block, v, c.block.hop(), true).into_iter().find(|h| {
                    h.n() <= max_nodes && h.deficit(v) == 0 && (0..g.n()).all(|u| g.deficit(u) > 0 || h.deficit(u) == 0)
                })
            });
        match next {
            Some(h) => {
                stuck.resize(h.n(), false);
                g = h;
            }
            None => stuck[v] = true,
        }
    }
    g
}

/// Statistics attached to a saved reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    pub levels: Vec<LevelStats>,
    pub structure_kept: usize,
    pub search: SearchStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

/// On-disk reconstruction. `delta` is `null` when no graph could be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionFile {
    pub graph: Option<GraphFile>,
    pub delta: Option<f64>,
    pub exact: bool,
    pub complete: bool,
    pub label_argmin: Option<Labels>,
    pub stats: ReconstructionStats,
}

impl ReconstructionFile {
    /// `with_timings = false` leaves out wall times so that repeated runs
    /// serialize identically.
    pub fn from_outcome(o: &AttackOutcome, with_timings: bool) -> Self {
        Self {
            graph: o.graph.as_ref().map(GraphFile::from),
            delta: o.distance.is_finite().then_some(o.distance),
            exact: o.exact,
            complete: o.complete,
            label_argmin: o.label_argmin.clone(),
            stats: ReconstructionStats {
                levels: o.levels.clone(),
                structure_kept: o.structure_kept,
                search: o.search.clone(),
                timings: with_timings.then_some(o.timings),
            },
        }
    }
}
