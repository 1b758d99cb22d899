use crate::gnn::{client_gradients, GradientBundle, Labels};
use crate::graph::{Graph, Task};

/// Cap on the label assignments tried for node classification.
pub const MAX_LABEL_PERMUTATIONS: usize = 5040;

/// Relative tolerance for treating a gradient distance as zero.
pub const EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceResult {
    pub distance: f64,
    /// The labels that attain the minimum; `None` when no labelling was
    /// feasible.
    pub labels: Option<Labels>,
}

/// Frobenius distance between the gradients `g` produces and the observed
/// ones, minimized over the labels the client could have used.
///
/// For graph classification every class is tried. For node classification
/// the bundle's label multiset is known but the node order of `g` is not, so
/// the distinct arrangements of that multiset are tried (up to
/// [`MAX_LABEL_PERMUTATIONS`]); a graph of the wrong size is infinitely far.
pub fn gradient_distance(g: &Graph, bundle: &GradientBundle, gnn_only: bool) -> DistanceResult {
    let cfg = &bundle.config;
    let candidates: Vec<Labels> = match cfg.task {
        Task::GraphClassification => (0..cfg.num_classes).map(Labels::Graph).collect(),
        Task::NodeClassification => match &bundle.labels {
            Some(ys) if ys.len() == g.n() => label_arrangements(ys, MAX_LABEL_PERMUTATIONS)
                .into_iter()
                .map(Labels::Nodes)
                .collect(),
            _ => Vec::new(),
        },
    };
    let mut best = DistanceResult {
        distance: f64::INFINITY,
        labels: None,
    };
    for labels in candidates {
        let Ok(grads) = client_gradients(g, &bundle.weights, cfg, &labels) else {
            continue;
        };
        let d = grads.squared_distance(&bundle.grads, gnn_only).sqrt();
        if d < best.distance {
            best = DistanceResult {
                distance: d,
                labels: Some(labels),
            };
        }
    }
    best
}

/// Whether `distance` is zero relative to the size of the observed gradients.
pub fn is_exact(distance: f64, bundle: &GradientBundle, gnn_only: bool) -> bool {
    distance <= EXACT_TOL * bundle.grads.squared_norm(gnn_only).sqrt()
}

/// Distinct permutations of `ys` in lexicographic order, at most `cap`.
fn label_arrangements(ys: &[usize], cap: usize) -> Vec<Vec<usize>> {
    let mut cur = ys.to_vec();
    cur.sort_unstable();
    let mut out = vec![cur.clone()];
    while out.len() < cap && next_permutation(&mut cur) {
        out.push(cur.clone());
    }
    out
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot has a successor");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
