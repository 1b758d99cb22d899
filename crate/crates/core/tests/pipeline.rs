use std::sync::Arc;
use std::time::Duration;

use grain::attack::{run_attack, AttackOptions, ReconstructionFile};
use grain::gnn::{backward, forward, simulate_client_step, LabelPolicy};
use grain::graph::{feature_isomorphic, k_hop_neighborhood};
use grain::gsm::{evaluate, Aggregator};
use grain::io::{
    from_json, generate, load_bundle, load_graph, load_manifest, load_schema, save_bundle, save_graph, to_json,
    write_json, GeneratorKind, GeneratorSpec, Manifest, ManifestEntry,
};
use grain::recon::{gradient_distance, EXACT_TOL};
use grain::report::{run_batch, BatchItem};
use grain::span::{recoverable_rows, SpanChecker};
use grain::{Arch, Graph, ModelConfig};

fn unique_graph(n: usize, seed: u64) -> Graph {
    let spec = GeneratorSpec {
        edge_prob: 0.1,
        cardinalities: vec![10, 8, 6],
        num_classes: 3,
        ..GeneratorSpec::new(GeneratorKind::UniqueFeatures, n, seed)
    };
    generate(&spec).unwrap()
}

fn gat(g: &Graph, seed: u64) -> ModelConfig {
    ModelConfig {
        hidden_dim: 64,
        seed,
        ..ModelConfig::for_schema(g.schema(), Arch::Gat)
    }
}

fn options() -> AttackOptions {
    AttackOptions {
        unique_heuristic: true,
        timeout: Some(Duration::from_secs(60)),
        ..AttackOptions::default()
    }
}

#[test]
fn attack_through_files_recovers_the_graph() {
    let dir = tempfile::tempdir().unwrap();
    let g = unique_graph(8, 3);
    save_graph(&dir.path().join("g.json"), &g).unwrap();
    write_json(&dir.path().join("s.json"), g.schema().as_ref()).unwrap();
    let bundle = simulate_client_step(&g, &gat(&g, 3), &LabelPolicy::Seeded).unwrap();
    save_bundle(&dir.path().join("b.json"), &bundle).unwrap();

    let truth = load_graph(&dir.path().join("g.json")).unwrap();
    let schema = Arc::new(load_schema(&dir.path().join("s.json")).unwrap());
    let observed = load_bundle(&dir.path().join("b.json")).unwrap();
    assert_eq!(observed, bundle);

    let out = run_attack(&observed, &schema, &options()).unwrap();
    assert!(out.exact && out.complete, "{:?} {:?}", out.levels, out.search);
    let h = out.graph.clone().unwrap();
    assert!(feature_isomorphic(&h, &truth));
    assert!(gradient_distance(&truth, &observed, false).distance < EXACT_TOL);

    let report = evaluate(&truth, &h, &Aggregator::default());
    assert_eq!((report.gsm0, report.gsm1, report.gsm2, report.full), (100.0, 100.0, 100.0, true));

    let file = ReconstructionFile::from_outcome(&out, false);
    let back: ReconstructionFile = from_json(&to_json(&file), "reconstruction").unwrap();
    assert_eq!(back, file);
}

#[test]
fn true_blocks_survive_filtering_when_recoverable() {
    let mut checked = 0;
    for seed in 0..10 {
        let g = unique_graph(6 + (seed % 5) as usize, 100 + seed);
        let cfg = gat(&g, seed);
        let bundle = simulate_client_step(&g, &cfg, &LabelPolicy::Seeded).unwrap();
        let labels = LabelPolicy::Seeded.resolve(&g, &cfg);
        let bw = backward(&forward(&g, &bundle.weights, &cfg, &labels).unwrap(), &bundle.weights, &cfg);
        let checker = SpanChecker::new(&bundle);
        for layer in 0..=cfg.num_layers {
            let dy = if layer < cfg.num_layers { &bw.dy[layer] } else { &bw.d_readout_pre };
            for v in recoverable_rows(dy) {
                let block = k_hop_neighborhood(&g, v, layer).unwrap();
                let d = checker.distance(&block, layer).unwrap();
                assert!(d < 1e-4, "seed {seed} layer {layer} node {v}: distance {d:e}");
                checked += 1;
            }
        }
    }
    assert!(checked > 100, "only {checked} rows were recoverable");
}

#[test]
fn batch_over_a_manifest_is_ordered_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = Manifest::default();
    for i in 0..4 {
        let name = format!("g{i}.json");
        save_graph(&dir.path().join(&name), &unique_graph(5 + i, 40 + i as u64)).unwrap();
        manifest.graphs.push(ManifestEntry {
            id: format!("g{i}"),
            graph: name.into(),
            label: Some(i % 3),
        });
    }
    let path = dir.path().join("manifest.json");
    write_json(&path, &manifest).unwrap();

    let loaded = load_manifest(&path).unwrap();
    let items: Vec<BatchItem> = loaded
        .graphs
        .iter()
        .zip(loaded.resolve(&path))
        .map(|(e, p)| BatchItem {
            id: e.id.clone(),
            graph: load_graph(&p).unwrap(),
            label: e.label,
        })
        .collect();
    let model = gat(&items[0].graph, 9);
    let a = to_json(&run_batch(&items, &model, &options(), false));
    let b = to_json(&run_batch(&items, &model, &options(), false));
    assert_eq!(a, b);
    let report = run_batch(&items, &model, &options(), true);
    let ids: Vec<&str> = report.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["g0", "g1", "g2", "g3"]);
    assert!(report.records.iter().all(|r| r.timings.is_some() && r.error.is_none()));
    assert!(report.summary.unwrap().wall_time.is_some());
}


#[test]
fn default_tree_is_recovered_without_heuristics() {
    let g = generate(&GeneratorSpec::new(GeneratorKind::RandomTree, 6, 1)).unwrap();
    let cfg = ModelConfig {
        hidden_dim: 64,
        ..ModelConfig::for_schema(g.schema(), Arch::Gat)
    };
    let bundle = simulate_client_step(&g, &cfg, &LabelPolicy::Seeded).unwrap();
    let outcome = run_attack(&bundle, g.schema(), &AttackOptions::default()).unwrap();
    assert!(outcome.exact);
    assert!(feature_isomorphic(outcome.graph.as_ref().unwrap(), &g));
}
