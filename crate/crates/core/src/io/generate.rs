use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureSchema, FeatureSpec, Graph, NodeFeatures, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    RandomTree,
    ErdosRenyi,
    /// Trees plus a few ring closures, degree at most 4, mostly 1 to 3.
    MoleculeLike,
    /// A tree plus optional extra edges, with pairwise distinct feature
    /// vectors.
    UniqueFeatures,
}

/// Parameters of a synthetic graph. The schema has a `degree` feature of
/// cardinality `max_degree + 1` followed by one feature per entry of
/// `cardinalities`. Randomness comes from ChaCha8 seeded with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    /// Edge probability for `erdos_renyi`; probability of each extra edge
    /// for `unique_features`.
    #[serde(default)]
    pub edge_prob: f64,
    pub max_degree: usize,
    pub cardinalities: Vec<u32>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_task")]
    pub task: Task,
    pub seed: u64,
}

fn default_classes() -> usize {
    2
}

fn default_task() -> Task {
    Task::GraphClassification
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            edge_prob: 0.0,
            max_degree: 4,
            cardinalities: vec![8, 4],
            num_classes: 2,
            task: Task::GraphClassification,
            seed,
        }
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        let mut features = vec![FeatureSpec {
            name: "degree".into(),
            cardinality: self.max_degree as u32 + 1,
        }];
        features.extend(self.cardinalities.iter().enumerate().map(|(i, &c)| FeatureSpec {
            name: format!("f{i}"),
            cardinality: c,
        }));
        FeatureSchema::new(features, 0, self.num_classes, self.task)
    }

    fn degree_cap(&self) -> usize {
        match self.kind {
            GeneratorKind::MoleculeLike => self.max_degree.min(4),
            _ => self.max_degree,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Infeasible("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::Infeasible(format!("edge_prob {} is not a probability", self.edge_prob)));
        }
        let cap = self.degree_cap();
        let connected = !matches!(self.kind, GeneratorKind::ErdosRenyi);
        if connected && self.n > 2 && cap < 2 {
            return Err(Error::Infeasible(format!(
                "a connected graph on {} nodes needs max_degree >= 2",
                self.n
            )));
        }
        if connected && self.n == 2 && cap < 1 {
            return Err(Error::Infeasible("a connected pair needs max_degree >= 1".into()));
        }
        if self.kind == GeneratorKind::UniqueFeatures {
            let space: u128 = self.cardinalities.iter().map(|&c| u128::from(c)).product();
            if space < self.n as u128 {
                return Err(Error::Infeasible(format!(
                    "{} nodes cannot have distinct features drawn from {space} combinations",
                    self.n
                )));
            }
        }
        Ok(())
    }
}

/// Draws a graph; degree features are set from the structure.
pub fn generate(spec: &GeneratorSpec) -> Result<Graph> {
    spec.check()?;
    let schema = Arc::new(spec.schema()?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cap = spec.degree_cap();
    let n = spec.n;
    let mut edges = match spec.kind {
        GeneratorKind::RandomTree | GeneratorKind::UniqueFeatures => random_tree(&mut rng, n, cap, &[1; 5]),
        GeneratorKind::MoleculeLike => random_tree(&mut rng, n, cap, &[3, 3, 2, 1, 0]),
        GeneratorKind::ErdosRenyi => Vec::new(),
    };
    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let extra_prob = match spec.kind {
        GeneratorKind::RandomTree => 0.0,
        GeneratorKind::ErdosRenyi | GeneratorKind::UniqueFeatures => spec.edge_prob,
        GeneratorKind::MoleculeLike => 1.5 / n.max(1) as f64,
    };
    if extra_prob > 0.0 {
        let existing: HashSet<(usize, usize)> = edges.iter().copied().collect();
        for i in 0..n {
            for j in i + 1..n {
                if !existing.contains(&(i, j)) && rng.random_bool(extra_prob) && degree[i] < cap && degree[j] < cap {
                    edges.push((i, j));
                    degree[i] += 1;
                    degree[j] += 1;
                }
            }
        }
    }

    let mut values: Vec<Vec<u32>> = match spec.kind {
        GeneratorKind::UniqueFeatures => distinct_features(&mut rng, n, &spec.cardinalities),
        _ => (0..n)
            .map(|_| spec.cardinalities.iter().map(|&c| rng.random_range(0..c)).collect())
            .collect(),
    };
    let nodes = values
        .iter_mut()
        .zip(&degree)
        .map(|(v, &d)| {
            let mut all = Vec::with_capacity(v.len() + 1);
            all.push(d as u32);
            all.append(v);
            NodeFeatures::new(all)
        })
        .collect();
    Graph::new(schema, nodes, edges)
}

/// Random recursive tree: node `i` attaches to an earlier node chosen with
/// weight `weights[degree]` among nodes below the degree cap.
fn random_tree(rng: &mut ChaCha8Rng, n: usize, cap: usize, weights: &[u32]) -> Vec<(usize, usize)> {
    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let w: Vec<u32> = (0..i)
            .map(|j| if degree[j] < cap { weights.get(degree[j]).copied().unwrap_or(0).max(1) } else { 0 })
            .collect();
        let total: u32 = w.iter().sum();
        let mut pick = rng.random_range(0..total);
        let parent = w
            .iter()
            .position(|&x| {
                if pick < x {
                    true
                } else {
                    pick -= x;
                    false
                }
            })
            .expect("a parent below the cap exists");
        edges.push((parent, i));
        degree[parent] += 1;
        degree[i] += 1;
    }
    edges
}

fn distinct_features(rng: &mut ChaCha8Rng, n: usize, cards: &[u32]) -> Vec<Vec<u32>> {
    let space: u128 = cards.iter().map(|&c| u128::from(c)).product();
    let decode = |mut code: u128| {
        cards
            .iter()
            .rev()
            .map(|&c| {
                let v = (code % u128::from(c)) as u32;
                code /= u128::from(c);
                v
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect::<Vec<u32>>()
    };
    if space <= 4 * n as u128 {
        let mut codes: Vec<u128> = (0..space).collect();
        codes.shuffle(rng);
        return codes[..n].iter().map(|&c| decode(c)).collect();
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: Vec<u32> = cards.iter().map(|&c| rng.random_range(0..c)).collect();
        if seen.insert(v.clone()) {
            out.push(v);
        }
    }
    out
}
