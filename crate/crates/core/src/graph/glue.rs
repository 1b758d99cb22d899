use std::collections::HashSet;

use super::{canonical_key_with_colors, BuildingBlock, Graph};

/// All graphs obtained by gluing `b` onto `g` at host node `c`.
///
/// Every host node within `l` hops of `c` is matched, center first and then
/// outwards in (distance, index) order, to a distinct block node with equal
/// features. Host edges inside the `l`-hop neighborhood must be present in the
/// block between the matched images. Block nodes left unmatched are appended
/// after the host nodes, in block order, and all block edges are carried over.
/// Results whose structural degrees exceed the declared ones are dropped, and
/// results equal up to a relabelling of the appended nodes are reported once.
pub fn glue(g: &Graph, b: &BuildingBlock, c: usize, l: usize) -> Vec<Graph> {
    run_glue(g, b, c, l, Mode::Strict, false)
}

/// [`glue`] followed by [`overlap_variants`]. Degrees are only checked after
/// merging: an appended node may duplicate a host node that is farther than
/// `l` hops from `c` in the partial host but not in the full graph, and the
/// duplicate can overload a neighbor until it is merged away.
pub fn glue_merged(g: &Graph, b: &BuildingBlock, c: usize, l: usize, unique: bool) -> Vec<Graph> {
    run_glue(g, b, c, l, Mode::Merged { unique }, false)
}

/// Whether [`glue_merged`] would return at least one graph; stops at the
/// first.
pub fn can_glue(g: &Graph, b: &BuildingBlock, c: usize, l: usize) -> bool {
    !run_glue(g, b, c, l, Mode::Merged { unique: false }, true).is_empty()
}

#[derive(Clone, Copy)]
enum Mode {
    Strict,
    Merged { unique: bool },
}

fn run_glue(g: &Graph, b: &BuildingBlock, c: usize, l: usize, mode: Mode, first_only: bool) -> Vec<Graph> {
    let bg = b.graph();
    if c >= g.n() || g.node(c) != bg.node(b.center()) {
        return Vec::new();
    }
    let dist = g.distances_from(c);
    let mut members: Vec<(usize, usize)> = dist
        .iter()
        .enumerate()
        .filter_map(|(v, d)| d.filter(|&d| d <= l).map(|d| (d, v)))
        .collect();
    members.sort_unstable();
    let members: Vec<usize> = members.into_iter().map(|(_, v)| v).collect();
    if members.len() > bg.n() {
        return Vec::new();
    }

    let mut matcher = Matcher {
        g,
        bg,
        dist: &dist,
        l,
        members: &members,
        image: vec![usize::MAX; g.n()],
        used: vec![false; bg.n()],
        out: Vec::new(),
        seen: HashSet::new(),
        mode,
        first_only,
    };
    matcher.image[c] = b.center();
    matcher.used[b.center()] = true;
    matcher.extend(1);
    matcher.out
}

struct Matcher<'a> {
    g: &'a Graph,
    bg: &'a Graph,
    dist: &'a [Option<usize>],
    l: usize,
    members: &'a [usize],
    image: Vec<usize>,
    used: Vec<bool>,
    out: Vec<Graph>,
    seen: HashSet<super::GraphKey>,
    mode: Mode,
    first_only: bool,
}

impl Matcher<'_> {
    fn extend(&mut self, pos: usize) {
        if self.first_only && !self.out.is_empty() {
            return;
        }
        let Some(&v) = self.members.get(pos) else {
            self.emit();
            return;
        };
        let dv = self.dist[v].unwrap();
        for w in 0..self.bg.n() {
            if self.used[w] || self.g.node(v) != self.bg.node(w) {
                continue;
            }
            let consistent = self.g.neighbors(v).iter().all(|&u| {
                let mapped = self.image[u];
                mapped == usize::MAX
                    || dv.min(self.dist[u].unwrap()) >= self.l
                    || self.bg.has_edge(w, mapped)
            });
            if !consistent {
                continue;
            }
            self.image[v] = w;
            self.used[w] = true;
            self.extend(pos + 1);
            self.image[v] = usize::MAX;
            self.used[w] = false;
        }
    }

    fn emit(&mut self) {
        let host_n = self.g.n();
        let mut position = vec![usize::MAX; self.bg.n()];
        for &v in self.members {
            position[self.image[v]] = v;
        }
        let mut nodes = self.g.nodes().to_vec();
        for (w, slot) in position.iter_mut().enumerate() {
            if *slot == usize::MAX {
                *slot = nodes.len();
                nodes.push(self.bg.node(w).clone());
            }
        }
        let edges = self
            .g
            .edges()
            .iter()
            .copied()
            .chain(self.bg.edges().iter().map(|&(a, b)| (position[a], position[b])));
        let schema = self.g.schema().clone();
        let unique = match self.mode {
            Mode::Strict => {
                if let Ok(result) = Graph::new(schema, nodes, edges) {
                    self.push(result, host_n);
                }
                return;
            }
            Mode::Merged { unique } => unique,
        };
        let Ok(raw) = Graph::relaxed(schema, nodes, edges) else {
            return;
        };
        let variants = if self.first_only {
            let forced = overlap_variants(&raw, host_n, true);
            if forced.is_empty() {
                overlap_variants(&raw, host_n, false)
            } else {
                forced
            }
        } else {
            overlap_variants(&raw, host_n, unique)
        };
        for v in variants {
            self.push(v, host_n);
            if self.first_only {
                return;
            }
        }
    }

    fn push(&mut self, result: Graph, host_n: usize) {
        if self.first_only {
            self.out.push(result);
            return;
        }
        let colors: Vec<u32> = (0..result.n())
            .map(|i| if i < host_n { i as u32 } else { u32::MAX })
            .collect();
        if self.seen.insert(canonical_key_with_colors(&result, &colors)) {
            self.out.push(result);
        }
    }
}

/// Merges each `(keep, remove)` pair: `remove` is deleted and its edges are
/// re-homed onto `keep`. Returns `None` when a pair has differing features,
/// the pairs are not a valid partial matching, or a merged node would exceed
/// its declared degree. Remaining nodes keep their relative order.
pub fn overlap(g: &Graph, pairs: &[(usize, usize)]) -> Option<Graph> {
    let n = g.n();
    let mut rep: Vec<usize> = (0..n).collect();
    let mut removed = vec![false; n];
    for &(keep, remove) in pairs {
        if keep >= n || remove >= n || keep == remove || removed[remove] {
            return None;
        }
        if g.node(keep) != g.node(remove) {
            return None;
        }
        removed[remove] = true;
        rep[remove] = keep;
    }
    if pairs.iter().any(|&(keep, _)| removed[keep]) {
        return None;
    }
    let mut index = vec![usize::MAX; n];
    let mut nodes = Vec::with_capacity(n - pairs.len());
    for v in 0..n {
        if !removed[v] {
            index[v] = nodes.len();
            nodes.push(g.node(v).clone());
        }
    }
    let edges = g.edges().iter().filter_map(|&(a, b)| {
        let (x, y) = (index[rep[a]], index[rep[b]]);
        (x != y).then_some((x, y))
    });
    Graph::new(g.schema().clone(), nodes, edges).ok()
}

/// Pairs `(existing, new)` with `existing < host_n <= new` that could be
/// merged: equal features and not adjacent. Degrees are checked by
/// [`overlap`] once a whole matching is applied, since merging one pair can
/// fold away edges another pair would otherwise add.
pub fn overlap_candidates(g: &Graph, host_n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for new in host_n..g.n() {
        for existing in 0..host_n.min(g.n()) {
            if g.node(existing) == g.node(new) && !g.has_edge(existing, new) {
                out.push((existing, new));
            }
        }
    }
    out
}

/// The graphs reachable from `g` by merging nodes appended after `host_n`
/// into feature-equal host nodes.
///
/// By default every partial matching between appended and host nodes is
/// tried, most merges first and the unmerged graph last. With `unique` set,
/// feature vectors are assumed pairwise distinct, so every appended node that
/// has a feature-equal host node must be merged into it: at most one graph is
/// returned.
pub fn overlap_variants(g: &Graph, host_n: usize, unique: bool) -> Vec<Graph> {
    let candidates = overlap_candidates(g, host_n);
    if unique {
        let mut pairs = Vec::new();
        for new in host_n..g.n() {
            let equal: Vec<usize> = (0..host_n).filter(|&e| g.node(e) == g.node(new)).collect();
            match equal.as_slice() {
                [] => {}
                [e] if candidates.contains(&(*e, new)) && !pairs.iter().any(|&(x, _)| x == *e) => {
                    pairs.push((*e, new));
                }
                _ => return Vec::new(),
            }
        }
        return overlap(g, &pairs).into_iter().collect();
    }

    let mut matchings: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut current = Vec::new();
    let mut used = vec![false; host_n];
    enumerate_matchings(g, host_n, &candidates, &mut used, &mut current, &mut matchings);
    matchings.sort_by_key(|m| std::cmp::Reverse(m.len()));

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in matchings {
        if let Some(r) = overlap(g, &m) {
            let colors: Vec<u32> = (0..r.n())
                .map(|i| if i < host_n { i as u32 } else { u32::MAX })
                .collect();
            if seen.insert(canonical_key_with_colors(&r, &colors)) {
                out.push(r);
            }
        }
    }
    out
}

fn enumerate_matchings(
    g: &Graph,
    new: usize,
    candidates: &[(usize, usize)],
    used: &mut [bool],
    current: &mut Vec<(usize, usize)>,
    out: &mut Vec<Vec<(usize, usize)>>,
) {
    if new == g.n() {
        out.push(current.clone());
        return;
    }
    for &(e, v) in candidates.iter().filter(|&&(_, v)| v == new) {
        if used[e] {
            continue;
        }
        used[e] = true;
        current.push((e, v));
        enumerate_matchings(g, new + 1, candidates, used, current, out);
        current.pop();
        used[e] = false;
    }
    enumerate_matchings(g, new + 1, candidates, used, current, out);
}
