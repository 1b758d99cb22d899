//! Per-graph records and aggregate summaries with bootstrap confidence
//! intervals.

use std::panic::AssertUnwindSafe;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, AttackOptions, AttackOutcome, StageTimings};
use crate::error::Result;
use crate::gnn::{simulate_client_step, LabelPolicy, ModelConfig};
use crate::gsm::{evaluate, Aggregator};
use crate::graph::Graph;
use crate::par;
use crate::span::LevelStats;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const BOOTSTRAP_SEED: u64 = 0x5eed;

/// Mean with a two-sided percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap of the mean. `confidence` is e.g. `0.95`.
///
/// # Panics
/// If `values` is empty or `resamples` is zero.
pub fn bootstrap_ci(values: &[f64], resamples: usize, confidence: f64, seed: u64) -> Estimate {
    assert!(!values.is_empty() && resamples > 0, "bootstrap needs data and resamples");
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_unstable_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    let pick = |q: f64| {
        let idx = (q * (resamples - 1) as f64).round() as usize;
        means[idx.min(resamples - 1)]
    };
    Estimate {
        mean,
        lo: pick(alpha),
        hi: pick(1.0 - alpha),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub nodes: usize,
    /// `null` when no graph could be scored.
    pub delta: Option<f64>,
    pub exact: bool,
    pub complete: bool,
    pub gsm0: f64,
    pub gsm1: f64,
    pub gsm2: f64,
    pub full: bool,
    pub levels: Vec<LevelStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
    /// Set when the attack aborted; all scores are then zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GraphRecord {
    pub fn from_outcome(id: &str, truth: &Graph, outcome: &AttackOutcome, agg: &Aggregator, with_timings: bool) -> Self {
        let scores = outcome.graph.as_ref().map(|h| evaluate(truth, h, agg));
        Self {
            id: id.to_owned(),
            nodes: truth.n(),
            delta: outcome.distance.is_finite().then_some(outcome.distance),
            exact: outcome.exact,
            complete: outcome.complete,
            gsm0: scores.as_ref().map_or(0.0, |s| s.gsm0),
            gsm1: scores.as_ref().map_or(0.0, |s| s.gsm1),
            gsm2: scores.as_ref().map_or(0.0, |s| s.gsm2),
            full: scores.as_ref().is_some_and(|s| s.full),
            levels: outcome.levels.clone(),
            timings: with_timings.then_some(outcome.timings),
            error: None,
        }
    }

    pub fn failed(id: &str, nodes: usize, error: String) -> Self {
        Self {
            id: id.to_owned(),
            nodes,
            delta: None,
            exact: false,
            complete: false,
            gsm0: 0.0,
            gsm1: 0.0,
            gsm2: 0.0,
            full: false,
            levels: Vec::new(),
            timings: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub graphs: usize,
    pub failures: usize,
    pub gsm0: Estimate,
    pub gsm1: Estimate,
    pub gsm2: Estimate,
    /// Percentage of feature-isomorphic reconstructions.
    pub full: Estimate,
    /// Percentage of runs ending with a gradient-exact graph.
    pub exact: Estimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<GraphRecord>,
    pub summary: Option<Summary>,
}

impl RunReport {
    /// Builds the report; the summary is recomputed from the records.
    pub fn new(records: Vec<GraphRecord>) -> Self {
        let summary = summarize(&records);
        Self { records, summary }
    }
}

/// Aggregates over all records; `None` when there are none.
pub fn summarize(records: &[GraphRecord]) -> Option<Summary> {
    if records.is_empty() {
        return None;
    }
    let est = |f: &dyn Fn(&GraphRecord) -> f64| {
        let values: Vec<f64> = records.iter().map(f).collect();
        bootstrap_ci(&values, BOOTSTRAP_RESAMPLES, 0.95, BOOTSTRAP_SEED)
    };
    let times: Vec<f64> = records.iter().filter_map(|r| r.timings.map(|t| t.total())).collect();
    Some(Summary {
        graphs: records.len(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        gsm0: est(&|r| r.gsm0),
        gsm1: est(&|r| r.gsm1),
        gsm2: est(&|r| r.gsm2),
        full: est(&|r| if r.full { 100.0 } else { 0.0 }),
        exact: est(&|r| if r.exact { 100.0 } else { 0.0 }),
        wall_time: (!times.is_empty()).then(|| bootstrap_ci(&times, BOOTSTRAP_RESAMPLES, 0.95, BOOTSTRAP_SEED)),
    })
}

/// One graph of a batch run.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub id: String,
    pub graph: Graph,
    /// Training label of a graph-classification client; drawn from the model
    /// seed when absent.
    pub label: Option<usize>,
}

/// Simulates one client step per item and attacks it. `model` supplies the
/// architecture; input width and classes are taken from each graph's schema.
/// A failure (including a panic) in one graph becomes a failed record and
/// never aborts the others. Records keep the input order.
pub fn run_batch(items: &[BatchItem], model: &ModelConfig, opts: &AttackOptions, with_timings: bool) -> RunReport {
    let agg = Aggregator::default();
    let records = par::map(items, |item| {
        let attempt = std::panic::catch_unwind(AssertUnwindSafe(|| attack_one(item, model, opts, &agg, with_timings)));
        match attempt {
            Ok(Ok(record)) => record,
            Ok(Err(e)) => GraphRecord::failed(&item.id, item.graph.n(), e.to_string()),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                    .unwrap_or_else(|| "attack panicked".to_owned());
                GraphRecord::failed(&item.id, item.graph.n(), msg)
            }
        }
    });
    RunReport::new(records)
}

fn attack_one(
    item: &BatchItem,
    model: &ModelConfig,
    opts: &AttackOptions,
    agg: &Aggregator,
    with_timings: bool,
) -> Result<GraphRecord> {
    let schema = item.graph.schema();
    let cfg = ModelConfig {
        input_dim: schema.one_hot_width(),
        num_classes: schema.num_classes,
        task: schema.task,
        ..model.clone()
    };
    let policy = item.label.map_or(LabelPolicy::Seeded, LabelPolicy::Graph);
    let bundle = simulate_client_step(&item.graph, &cfg, &policy)?;
    let outcome = run_attack(&bundle, schema, opts)?;
    Ok(GraphRecord::from_outcome(&item.id, &item.graph, &outcome, agg, with_timings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, gsm0: f64, full: bool) -> GraphRecord {
        GraphRecord {
            gsm0,
            gsm1: gsm0,
            gsm2: gsm0,
            full,
            exact: full,
            complete: true,
            delta: Some(0.0),
            ..GraphRecord::failed(id, 3, String::new())
        }
    }

    #[test]
    fn constant_data_has_degenerate_interval() {
        let e = bootstrap_ci(&[4.0; 10], 1000, 0.95, 1);
        assert_eq!((e.mean, e.lo, e.hi), (4.0, 4.0, 4.0));
    }

    #[test]
    fn interval_brackets_the_mean_and_is_seeded() {
        let values: Vec<f64> = (0..50).map(f64::from).collect();
        let a = bootstrap_ci(&values, BOOTSTRAP_RESAMPLES, 0.95, 7);
        assert_eq!(a, bootstrap_ci(&values, BOOTSTRAP_RESAMPLES, 0.95, 7));
        assert!(a.lo < a.mean && a.mean < a.hi);
        // Standard error of the mean is about 2.0 here.
        assert!((a.hi - a.lo - 2.0 * 1.96 * 2.04).abs() < 1.5, "{a:?}");
    }

    #[test]
    fn summary_is_recomputable() {
        let records = vec![record("a", 100.0, true), record("b", 50.0, false)];
        let r = RunReport::new(records.clone());
        let s = r.summary.as_ref().unwrap();
        assert_eq!(s.graphs, 2);
        assert_eq!(s.gsm0.mean, 75.0);
        assert_eq!(s.full.mean, 50.0);
        assert!(s.wall_time.is_none());
        assert_eq!(summarize(&r.records), r.summary);
        assert!(RunReport::new(Vec::new()).summary.is_none());
    }

    #[test]
    fn batch_isolates_failures_and_keeps_order() {
        use crate::gnn::Arch;
        use crate::io::{generate, GeneratorKind, GeneratorSpec};
        use std::time::Duration;

        let item = |id: &str, seed: u64, label: Option<usize>| {
            let mut spec = GeneratorSpec::new(GeneratorKind::UniqueFeatures, 5, seed);
            spec.cardinalities = vec![6, 3];
            BatchItem {
                id: id.into(),
                graph: generate(&spec).unwrap(),
                label,
            }
        };
        let items = vec![item("a", 1, None), item("bad", 2, Some(9)), item("c", 3, Some(1))];
        let mut model = ModelConfig::for_schema(items[0].graph.schema(), Arch::Gat);
        model.hidden_dim = 32;
        let opts = AttackOptions {
            unique_heuristic: true,
            timeout: Some(Duration::from_secs(30)),
            ..AttackOptions::default()
        };
        let r = run_batch(&items, &model, &opts, false);
        let ids: Vec<&str> = r.records.iter().map(|x| x.id.as_str()).collect();
        assert_eq!(ids, ["a", "bad", "c"]);
        assert!(r.records[1].error.is_some());
        assert!(r.records[0].error.is_none() && r.records[2].error.is_none());
        assert_eq!(r.summary.as_ref().unwrap().failures, 1);
    }
}
