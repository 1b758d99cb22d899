//! Canonical labelling and feature-preserving isomorphism.
//!
//! Colors start from node features (plus optional caller colors), are refined
//! by 1-WL, and ties are broken by individualization. The canonical key is the
//! lexicographically smallest leaf encoding. Twin vertices (same cell, same
//! neighborhood up to each other) are interchangeable, so only one of them is
//! individualized per cell.

use std::collections::HashMap;

use super::Graph;

const LEAF_BUDGET: usize = 50_000;

/// Canonical key of a graph. Two graphs with canonical keys compare equal iff
/// they are feature-isomorphic (respecting any caller colors). When the
/// search budget is exhausted a labelled key is produced instead; such keys
/// never collide with canonical ones but may differ for isomorphic inputs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GraphKey(Vec<u32>);

impl GraphKey {
    pub fn is_canonical(&self) -> bool {
        self.0.first() == Some(&0)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

pub fn canonical_key(g: &Graph) -> GraphKey {
    canonical_key_with_colors(g, &vec![0; g.n()])
}

/// Canonical key where node `i` additionally carries `colors[i]`. Nodes with
/// distinct colors can never be swapped.
pub fn canonical_key_with_colors(g: &Graph, colors: &[u32]) -> GraphKey {
    assert_eq!(colors.len(), g.n());
    let adj: Vec<&[usize]> = (0..g.n()).map(|i| g.neighbors(i)).collect();
    let init = initial_colors(&[g], &[colors]);
    let mut search = Search {
        adj: &adj,
        best: None,
        leaves: 0,
        encode: |order: &[usize]| encode(g, colors, order),
    };
    let start = refine(&adj, init);
    if search.run(start) {
        let mut key = search.best.expect("at least one leaf");
        key.insert(0, 0);
        GraphKey(key)
    } else {
        let order: Vec<usize> = (0..g.n()).collect();
        let mut key = encode(g, colors, &order);
        key.insert(0, 1);
        GraphKey(key)
    }
}

fn encode(g: &Graph, colors: &[u32], order: &[usize]) -> Vec<u32> {
    let mut label = vec![0u32; g.n()];
    for (k, &v) in order.iter().enumerate() {
        label[v] = k as u32;
    }
    let width = g.schema().num_features();
    let mut out = Vec::with_capacity(1 + g.n() * (width + 1) + 2 * g.num_edges());
    out.push(g.n() as u32);
    for &v in order {
        out.push(colors[v]);
        out.extend_from_slice(g.node(v).values());
    }
    let mut edges: Vec<(u32, u32)> = g
        .edges()
        .iter()
        .map(|&(a, b)| {
            let (x, y) = (label[a], label[b]);
            (x.min(y), x.max(y))
        })
        .collect();
    edges.sort_unstable();
    for (a, b) in edges {
        out.push(a);
        out.push(b);
    }
    out
}

/// Dense ranks of (caller color, features) signatures over all given graphs,
/// concatenated in graph order.
fn initial_colors(graphs: &[&Graph], colors: &[&[u32]]) -> Vec<u32> {
    let sigs: Vec<(u32, &[u32])> = graphs
        .iter()
        .zip(colors)
        .flat_map(|(g, c)| (0..g.n()).map(move |i| (c[i], g.node(i).values())))
        .collect();
    rank(&sigs)
}

fn rank<T: Ord + Clone>(sigs: &[T]) -> Vec<u32> {
    let mut sorted: Vec<T> = sigs.to_vec();
    sorted.sort();
    sorted.dedup();
    sigs.iter()
        .map(|s| sorted.binary_search(s).unwrap() as u32)
        .collect()
}

fn num_classes(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

/// Color refinement to the coarsest equitable partition finer than `colors`.
/// Ranks are assigned from sorted signatures, so the result does not depend on
/// node order.
fn refine(adj: &[&[usize]], mut colors: Vec<u32>) -> Vec<u32> {
    let mut classes = num_classes(&colors);
    loop {
        let sigs: Vec<(u32, Vec<u32>)> = (0..adj.len())
            .map(|v| {
                let mut nb: Vec<u32> = adj[v].iter().map(|&w| colors[w]).collect();
                nb.sort_unstable();
                (colors[v], nb)
            })
            .collect();
        let next = rank(&sigs);
        let next_classes = num_classes(&next);
        colors = next;
        if next_classes == classes {
            return colors;
        }
        classes = next_classes;
    }
}

fn is_twin(adj: &[&[usize]], u: usize, w: usize) -> bool {
    let a = adj[u].iter().filter(|&&x| x != w);
    let b = adj[w].iter().filter(|&&x| x != u);
    a.eq(b)
}

/// One representative per twin class among `cell`.
fn twin_representatives(adj: &[&[usize]], cell: &[usize]) -> Vec<usize> {
    let mut reps: Vec<usize> = Vec::new();
    for &v in cell {
        if !reps.iter().any(|&r| is_twin(adj, r, v)) {
            reps.push(v);
        }
    }
    reps
}

struct Search<'a, F> {
    adj: &'a [&'a [usize]],
    best: Option<Vec<u32>>,
    leaves: usize,
    encode: F,
}

impl<F: Fn(&[usize]) -> Vec<u32>> Search<'_, F> {
    /// Returns false when the leaf budget runs out.
    fn run(&mut self, colors: Vec<u32>) -> bool {
        let n = colors.len();
        let mut cells: HashMap<u32, Vec<usize>> = HashMap::new();
        for (v, &c) in colors.iter().enumerate() {
            cells.entry(c).or_default().push(v);
        }
        let target = cells
            .iter()
            .filter(|(_, members)| members.len() > 1)
            .map(|(&c, _)| c)
            .min();
        let Some(target) = target else {
            self.leaves += 1;
            if self.leaves > LEAF_BUDGET {
                return false;
            }
            let mut order = vec![0; n];
            for (v, &c) in colors.iter().enumerate() {
                order[c as usize] = v;
            }
            let enc = (self.encode)(&order);
            if self.best.as_ref().is_none_or(|b| enc < *b) {
                self.best = Some(enc);
            }
            return true;
        };
        let cell = &cells[&target];
        for v in twin_representatives(self.adj, cell) {
            let split: Vec<u32> = colors
                .iter()
                .enumerate()
                .map(|(u, &c)| if u == v { 2 * c } else { 2 * c + 1 })
                .collect();
            if !self.run(refine(self.adj, split)) {
                return false;
            }
        }
        true
    }
}

/// Whether a bijection between the nodes exists that preserves node features
/// and edges.
pub fn feature_isomorphic(g1: &Graph, g2: &Graph) -> bool {
    isomorphic_colored(g1, &vec![0; g1.n()], g2, &vec![0; g2.n()])
}

/// As [`feature_isomorphic`], additionally requiring `r1` to map to `r2`.
pub fn feature_isomorphic_rooted(g1: &Graph, r1: usize, g2: &Graph, r2: usize) -> bool {
    let c1: Vec<u32> = (0..g1.n()).map(|i| u32::from(i != r1)).collect();
    let c2: Vec<u32> = (0..g2.n()).map(|i| u32::from(i != r2)).collect();
    isomorphic_colored(g1, &c1, g2, &c2)
}

fn isomorphic_colored(g1: &Graph, c1: &[u32], g2: &Graph, c2: &[u32]) -> bool {
    if g1.n() != g2.n() || g1.num_edges() != g2.num_edges() {
        return false;
    }
    let mut f1: Vec<(u32, &[u32])> = (0..g1.n()).map(|i| (c1[i], g1.node(i).values())).collect();
    let mut f2: Vec<(u32, &[u32])> = (0..g2.n()).map(|i| (c2[i], g2.node(i).values())).collect();
    f1.sort_unstable();
    f2.sort_unstable();
    if f1 != f2 {
        return false;
    }
    let k1 = canonical_key_with_colors(g1, c1);
    let k2 = canonical_key_with_colors(g2, c2);
    if k1.is_canonical() && k2.is_canonical() {
        return k1 == k2;
    }
    backtrack_isomorphic(g1, c1, g2, c2)
}

/// Matches nodes of `g1` to `g2` one by one, restricted to equal colors of a
/// joint refinement of the disjoint union.
fn backtrack_isomorphic(g1: &Graph, c1: &[u32], g2: &Graph, c2: &[u32]) -> bool {
    let n = g1.n();
    let shifted: Vec<Vec<usize>> = (0..g2.n())
        .map(|i| g2.neighbors(i).iter().map(|&w| w + n).collect())
        .collect();
    let adj: Vec<&[usize]> = (0..n)
        .map(|i| g1.neighbors(i))
        .chain(shifted.iter().map(|v| v.as_slice()))
        .collect();
    let colors = refine(&adj, initial_colors(&[g1, g2], &[c1, c2]));
    let (left, right) = colors.split_at(n);
    let mut l = left.to_vec();
    let mut r = right.to_vec();
    l.sort_unstable();
    r.sort_unstable();
    if l != r {
        return false;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (std::cmp::Reverse(g1.degree(v)), v));
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    extend(g1, g2, left, right, &order, 0, &mut map, &mut used)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    g1: &Graph,
    g2: &Graph,
    left: &[u32],
    right: &[u32],
    order: &[usize],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    let Some(&v) = order.get(depth) else {
        return true;
    };
    for w in 0..g2.n() {
        if used[w] || left[v] != right[w] {
            continue;
        }
        let consistent = g1
            .neighbors(v)
            .iter()
            .filter(|&&u| map[u] != usize::MAX)
            .all(|&u| g2.has_edge(w, map[u]))
            && (0..g1.n())
                .filter(|&u| map[u] != usize::MAX && !g1.has_edge(v, u))
                .all(|u| !g2.has_edge(w, map[u]));
        if !consistent {
            continue;
        }
        map[v] = w;
        used[w] = true;
        if extend(g1, g2, left, right, order, depth + 1, map, used) {
            return true;
        }
        map[v] = usize::MAX;
        used[w] = false;
    }
    false
}
