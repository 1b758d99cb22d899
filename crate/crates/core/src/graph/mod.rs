//! Graph values, k-hop neighborhoods and the combinatorial operations used to
//! assemble graphs from building blocks.

mod glue;
mod iso;

pub use glue::{can_glue, glue, glue_merged, overlap, overlap_candidates, overlap_variants};
pub use iso::{canonical_key, canonical_key_with_colors, feature_isomorphic, feature_isomorphic_rooted, GraphKey};

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub cardinality: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GraphClassification,
    NodeClassification,
}

/// Discrete feature layout shared by every graph of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub degree_feature_index: usize,
    pub num_classes: usize,
    pub task: Task,
}

impl FeatureSchema {
    pub fn new(
        features: Vec<FeatureSpec>,
        degree_feature_index: usize,
        num_classes: usize,
        task: Task,
    ) -> Result<Self> {
        let schema = Self {
            features,
            degree_feature_index,
            num_classes,
            task,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        if let Some((i, f)) = self.features.iter().enumerate().find(|(_, f)| f.cardinality == 0) {
            return Err(Error::Schema(format!("feature {i} ({}) has cardinality 0", f.name)));
        }
        if self.degree_feature_index >= self.features.len() {
            return Err(Error::Schema(format!(
                "degree_feature_index {} out of range for {} features",
                self.degree_feature_index,
                self.features.len()
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Schema("num_classes must be positive".into()));
        }
        Ok(())
    }

    /// Total one-hot width, the sum of all cardinalities.
    pub fn one_hot_width(&self) -> usize {
        self.features.iter().map(|f| f.cardinality as usize).sum()
    }

    /// Starting column of each feature block in the one-hot encoding.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.features
            .iter()
            .map(|f| {
                let o = acc;
                acc += f.cardinality as usize;
                o
            })
            .collect()
    }

    pub fn max_degree(&self) -> usize {
        self.features[self.degree_feature_index].cardinality as usize - 1
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }
}

/// Category index per schema feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeFeatures(Vec<u32>);

impl NodeFeatures {
    pub fn new(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn check(&self, schema: &FeatureSchema, node: usize) -> Result<()> {
        if self.0.len() != schema.features.len() {
            return Err(Error::FeatureArity {
                node,
                expected: schema.features.len(),
                got: self.0.len(),
            });
        }
        for (feature, (&value, spec)) in self.0.iter().zip(&schema.features).enumerate() {
            if value >= spec.cardinality {
                return Err(Error::FeatureOutOfRange {
                    node,
                    feature,
                    value,
                    cardinality: spec.cardinality,
                });
            }
        }
        Ok(())
    }

    pub fn declared_degree(&self, schema: &FeatureSchema) -> usize {
        self.0[schema.degree_feature_index] as usize
    }

    pub fn one_hot(&self, schema: &FeatureSchema) -> Vec<f64> {
        let mut v = vec![0.0; schema.one_hot_width()];
        self.write_one_hot(schema, &mut v);
        v
    }

    pub(crate) fn write_one_hot(&self, schema: &FeatureSchema, out: &mut [f64]) {
        let mut offset = 0;
        for (&value, spec) in self.0.iter().zip(&schema.features) {
            out[offset + value as usize] = 1.0;
            offset += spec.cardinality as usize;
        }
    }
}

/// Undirected graph with discrete node features. Edges are stored as sorted
/// `(i, j)` pairs with `i < j`; every node's structural degree is bounded by
/// the degree its features declare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    schema: Arc<FeatureSchema>,
    nodes: Vec<NodeFeatures>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, normalizing edge orientation and collapsing duplicates.
    pub fn new(
        schema: Arc<FeatureSchema>,
        nodes: Vec<NodeFeatures>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        Self::build(schema, nodes, edges, true)
    }

    /// Like [`Graph::new`] but lets structural degrees exceed the declared
    /// ones. Only for gluing states that are merged before use.
    pub(crate) fn relaxed(
        schema: Arc<FeatureSchema>,
        nodes: Vec<NodeFeatures>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        Self::build(schema, nodes, edges, false)
    }

    fn build(
        schema: Arc<FeatureSchema>,
        nodes: Vec<NodeFeatures>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        check_degrees: bool,
    ) -> Result<Self> {
        for (i, node) in nodes.iter().enumerate() {
            node.check(&schema, i)?;
        }
        let n = nodes.len();
        let mut set = BTreeSet::new();
        for (e, (a, b)) in edges.into_iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::EdgeOutOfRange { edge: e, a, b, n });
            }
            if a == b {
                return Err(Error::SelfLoop { edge: e, node: a });
            }
            set.insert((a.min(b), a.max(b)));
        }
        Self::from_sorted(schema, nodes, set.into_iter().collect(), check_degrees)
    }

    fn from_sorted(
        schema: Arc<FeatureSchema>,
        nodes: Vec<NodeFeatures>,
        edges: Vec<(usize, usize)>,
        check_degrees: bool,
    ) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        for (i, list) in adjacency.iter().enumerate().filter(|_| check_degrees) {
            let declared = nodes[i].declared_degree(&schema);
            if list.len() > declared {
                return Err(Error::DegreeExceeded {
                    node: i,
                    structural: list.len(),
                    declared,
                });
            }
        }
        Ok(Self {
            schema,
            nodes,
            edges,
            adjacency,
        })
    }

    pub fn single(schema: Arc<FeatureSchema>, features: NodeFeatures) -> Result<Self> {
        Self::new(schema, vec![features], [])
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeFeatures] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeFeatures {
        &self.nodes[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn declared_degree(&self, i: usize) -> usize {
        self.nodes[i].declared_degree(&self.schema)
    }

    /// Declared degree minus structural degree.
    pub fn deficit(&self, i: usize) -> usize {
        self.declared_degree(i) - self.degree(i)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// `n × m_total` one-hot feature matrix.
    pub fn one_hot_matrix(&self) -> DMatrix<f64> {
        let width = self.schema.one_hot_width();
        let mut m = DMatrix::zeros(self.n(), width);
        let mut row = vec![0.0; width];
        for (i, node) in self.nodes.iter().enumerate() {
            row.iter_mut().for_each(|x| *x = 0.0);
            node.write_one_hot(&self.schema, &mut row);
            for (j, &x) in row.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        m
    }

    /// Breadth-first distances from `source`; unreachable nodes get `None`.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &w in &self.adjacency[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Returns a copy with nodes reordered so that new index `k` holds old
    /// node `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Graph {
        assert_eq!(order.len(), self.n());
        let mut inverse = vec![0; self.n()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let nodes = order.iter().map(|&o| self.nodes[o].clone()).collect();
        let edges = self.edges.iter().map(|&(a, b)| (inverse[a], inverse[b]));
        Graph::new(self.schema.clone(), nodes, edges).expect("permutation preserves validity")
    }

    /// Whether every node's structural degree equals its declared degree.
    pub fn is_complete(&self) -> bool {
        (0..self.n()).all(|i| self.deficit(i) == 0)
    }
}

/// All nodes whose declared degree exceeds their structural degree.
pub fn dangling_nodes(g: &Graph) -> Vec<usize> {
    (0..g.n()).filter(|&i| g.deficit(i) > 0).collect()
}

/// A k-hop neighborhood with its center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildingBlock {
    graph: Graph,
    center: usize,
    hop: usize,
}

impl BuildingBlock {
    /// Validates that every node lies within `hop` of `center` and that every
    /// edge touches a node strictly closer than `hop`.
    pub fn new(graph: Graph, center: usize, hop: usize) -> Result<Self> {
        if center >= graph.n() {
            return Err(Error::NodeOutOfRange {
                index: center,
                n: graph.n(),
            });
        }
        let dist = graph.distances_from(center);
        for (i, d) in dist.iter().enumerate() {
            match d {
                Some(d) if *d <= hop => {}
                _ => {
                    return Err(Error::Block(format!(
                        "node {i} is farther than {hop} hops from center {center}"
                    )))
                }
            }
        }
        for &(a, b) in graph.edges() {
            let da = dist[a].unwrap();
            let db = dist[b].unwrap();
            if da.min(db) >= hop {
                return Err(Error::Block(format!(
                    "edge ({a}, {b}) joins two nodes at distance {hop}"
                )));
            }
        }
        Ok(Self { graph, center, hop })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn dangling(&self) -> Vec<usize> {
        dangling_nodes(&self.graph)
    }

    pub fn center_features(&self) -> &NodeFeatures {
        self.graph.node(self.center)
    }
}

/// The k-hop neighborhood of `v`, returned together with the original index
/// of every block node. Block nodes are ordered by (distance, original index),
/// so the center is always node 0.
pub fn k_hop_with_map(g: &Graph, v: usize, k: usize) -> Result<(BuildingBlock, Vec<usize>)> {
    if v >= g.n() {
        return Err(Error::NodeOutOfRange { index: v, n: g.n() });
    }
    let dist = g.distances_from(v);
    let mut members: Vec<(usize, usize)> = dist
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.filter(|&d| d <= k).map(|d| (d, i)))
        .collect();
    members.sort_unstable();
    let order: Vec<usize> = members.iter().map(|&(_, i)| i).collect();
    let mut position = vec![usize::MAX; g.n()];
    for (p, &i) in order.iter().enumerate() {
        position[i] = p;
    }
    let nodes = order.iter().map(|&i| g.node(i).clone()).collect();
    // An edge belongs to the neighborhood when one endpoint is within k-1
    // hops and the other within k.
    let edges = g.edges().iter().filter_map(|&(a, b)| {
        let (da, db) = (dist[a]?, dist[b]?);
        (k > 0 && da.min(db) < k && da.max(db) <= k).then(|| (position[a], position[b]))
    });
    let graph = Graph::new(g.schema().clone(), nodes, edges)?;
    Ok((BuildingBlock { graph, center: 0, hop: k }, order))
}

pub fn k_hop_neighborhood(g: &Graph, v: usize, k: usize) -> Result<BuildingBlock> {
    k_hop_with_map(g, v, k).map(|(b, _)| b)
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    fn path3() -> Graph {
        graph(&[0, 1, 2], &[(0, 1), (1, 2)])
    }

    #[test]
    fn k_hop_of_path() {
        let g = path3();
        let b0 = k_hop_neighborhood(&g, 0, 0).unwrap();
        assert_eq!(b0.graph().n(), 1);
        assert!(b0.graph().edges().is_empty());

        let (b1, map) = k_hop_with_map(&g, 0, 1).unwrap();
        assert_eq!(map, vec![0, 1]);
        assert_eq!(b1.graph().edges(), &[(0, 1)]);

        let b2 = k_hop_neighborhood(&g, 0, 2).unwrap();
        assert_eq!(b2.graph().n(), 3);
        assert_eq!(b2.graph().num_edges(), 2);
        assert_eq!(b2.hop(), 2);
    }

    #[test]
    fn k_hop_excludes_edges_between_outer_nodes() {
        // Triangle: at k = 1 from node 0 the edge (1, 2) joins two
        // distance-1 nodes and is left out.
        let g = graph(&[0, 1, 2], &[(0, 1), (0, 2), (1, 2)]);
        let b = k_hop_neighborhood(&g, 0, 1).unwrap();
        assert_eq!(b.graph().num_edges(), 2);
        let b2 = k_hop_neighborhood(&g, 0, 2).unwrap();
        assert_eq!(b2.graph().num_edges(), 3);
    }

    #[test]
    fn k_hop_rejects_bad_index() {
        assert!(matches!(
            k_hop_neighborhood(&path3(), 3, 1),
            Err(Error::NodeOutOfRange { index: 3, n: 3 })
        ));
    }

    #[test]
    fn k_hop_is_idempotent_on_blocks() {
        let g = graph(&[0, 1, 2, 3, 4], &[(0, 1), (1, 2), (2, 3), (1, 4), (3, 4)]);
        for v in 0..g.n() {
            for k in 0..3 {
                let b = k_hop_neighborhood(&g, v, k).unwrap();
                let again = k_hop_neighborhood(b.graph(), b.center(), k).unwrap();
                assert_eq!(again.graph(), b.graph());
            }
        }
    }

    #[test]
    fn dangling_examples() {
        let s = schema(4);
        let lone = Graph::single(s.clone(), nf(0, 0)).unwrap();
        assert!(dangling_nodes(&lone).is_empty());
        let wants_two = Graph::single(s.clone(), nf(2, 0)).unwrap();
        assert_eq!(dangling_nodes(&wants_two), vec![0]);

        // Star: center declares 3, leaves declare 1, 2, 1.
        let star = Graph::new(
            s,
            vec![nf(3, 0), nf(1, 1), nf(2, 1), nf(1, 2)],
            [(0, 1), (0, 2), (0, 3)],
        )
        .unwrap();
        assert_eq!(dangling_nodes(&star), vec![2]);
    }

    #[test]
    fn graph_rejects_invalid_input() {
        let s = schema(4);
        assert!(matches!(
            Graph::new(s.clone(), vec![nf(1, 0), nf(1, 0)], [(0, 2)]),
            Err(Error::EdgeOutOfRange { .. })
        ));
        assert!(matches!(
            Graph::new(s.clone(), vec![nf(1, 0)], [(0, 0)]),
            Err(Error::SelfLoop { .. })
        ));
        assert!(matches!(
            Graph::new(s.clone(), vec![nf(0, 0), nf(1, 0)], [(0, 1)]),
            Err(Error::DegreeExceeded { node: 0, .. })
        ));
        assert!(matches!(
            Graph::new(s, vec![nf(0, 9)], []),
            Err(Error::FeatureOutOfRange { feature: 1, .. })
        ));
    }

    #[test]
    fn block_validation() {
        let g = path3();
        assert!(BuildingBlock::new(g.clone(), 0, 2).is_ok());
        assert!(BuildingBlock::new(g.clone(), 0, 1).is_err());
        assert!(BuildingBlock::new(g, 1, 1).is_ok());
    }

    #[test]
    fn one_hot_layout() {
        let s = schema(3);
        assert_eq!(s.one_hot_width(), 8);
        assert_eq!(s.offsets(), vec![0, 5]);
        assert_eq!(nf(2, 1).one_hot(&s), vec![0., 0., 1., 0., 0., 0., 1., 0.]);
    }
}
