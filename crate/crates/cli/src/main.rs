//! `grain`: generate graphs, simulate a client step, attack the gradient and
//! score the reconstruction. Every command reads and writes JSON. Errors go
//! to stderr as `{"error": ...}` with a nonzero exit code.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use grain::attack::{run_attack, AttackOptions, ReconstructionFile};
use grain::gnn::{simulate_client_step, LabelPolicy};
use grain::gsm::{evaluate, Aggregator};
use grain::io::{
    from_json, generate, load_bundle, load_graph, load_manifest, load_schema, save_bundle, save_graph, to_json,
    GeneratorKind, GeneratorSpec, GraphFile, Manifest, ManifestEntry,
};
use grain::report::{run_batch, BatchItem};
use grain::{Activation, Arch, Graph, ModelConfig};

#[derive(Parser)]
#[command(name = "grain", version, about = "Graph reconstruction from GNN gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic graphs.
    Gen(GenArgs),
    /// Compute the gradient bundle of one client step on a graph.
    Simulate(SimulateArgs),
    /// Reconstruct a graph from a gradient bundle.
    Attack(AttackArgs),
    /// Score a reconstruction against the true graph.
    Evaluate(EvaluateArgs),
    /// Simulate and attack every graph of a manifest and write a report.
    Batch(BatchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Tree,
    ErdosRenyi,
    Molecule,
    Unique,
}

impl From<KindArg> for GeneratorKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Tree => GeneratorKind::RandomTree,
            KindArg::ErdosRenyi => GeneratorKind::ErdosRenyi,
            KindArg::Molecule => GeneratorKind::MoleculeLike,
            KindArg::Unique => GeneratorKind::UniqueFeatures,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Gcn,
    Gat,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Gelu,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "tree")]
    kind: KindArg,
    /// Nodes per graph.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    edge_prob: f64,
    #[arg(long, default_value_t = 4)]
    max_degree: usize,
    /// Cardinalities of the non-degree features.
    #[arg(long, value_delimiter = ',', default_value = "8,4")]
    cards: Vec<u32>,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Number of graphs. With more than one, `--out` is a directory that
    /// receives one file per graph and a `manifest.json`.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the feature schema here.
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "gcn")]
    arch: ArchArg,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 300)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, value_enum, default_value = "relu")]
    activation: ActivationArg,
    /// Seed of the weight initialization and of drawn labels.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self, g: &Graph) -> ModelConfig {
        ModelConfig {
            arch: match self.arch {
                ArchArg::Gcn => Arch::Gcn,
                ArchArg::Gat => Arch::Gat,
            },
            num_layers: self.layers,
            hidden_dim: self.hidden,
            heads: self.heads,
            activation: match self.activation {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::Gelu => Activation::Gelu,
            },
            seed: self.seed,
            ..ModelConfig::for_schema(g.schema(), Arch::Gcn)
        }
    }
}

#[derive(Args, Clone)]
struct AttackFlags {
    /// Relative span distance below which a candidate is kept.
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    /// Search budget in seconds; 0 disables the limit.
    #[arg(long, default_value_t = 900)]
    timeout_sec: u64,
    /// Assume node feature vectors are pairwise distinct.
    #[arg(long)]
    unique_heuristic: bool,
    #[arg(long, default_value_t = 200_000)]
    candidate_cap: usize,
    /// Largest graph to build; defaults to one less than the hidden width.
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Leave wall times out of the output so repeated runs are identical.
    #[arg(long)]
    deterministic: bool,
}

impl AttackFlags {
    fn options(&self) -> Result<AttackOptions> {
        if self.tau.is_nan() || self.tau < 0.0 {
            bail!("--tau must be a nonnegative number, got {}", self.tau);
        }
        Ok(AttackOptions {
            tau: self.tau,
            timeout: (self.timeout_sec > 0).then(|| Duration::from_secs(self.timeout_sec)),
            unique_heuristic: self.unique_heuristic,
            candidate_cap: self.candidate_cap,
            max_nodes: self.max_nodes,
            ..AttackOptions::default()
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Training label; drawn from the seed when omitted.
    #[arg(long)]
    label: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Feature schema known to the attacker.
    #[arg(long)]
    schema: PathBuf,
    #[command(flatten)]
    flags: AttackFlags,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    /// A reconstruction written by `attack`, or a plain graph file.
    #[arg(long)]
    reconstruction: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    flags: AttackFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec_for = |seed: u64| GeneratorSpec {
        edge_prob: a.edge_prob,
        max_degree: a.max_degree,
        cardinalities: a.cards.clone(),
        num_classes: a.classes,
        ..GeneratorSpec::new(a.kind.into(), a.n, seed)
    };
    if let Some(path) = &a.schema_out {
        emit(Some(path), &to_json(&spec_for(a.seed).schema()?))?;
    }
    if a.count <= 1 {
        return Ok(save_graph(&a.out, &generate(&spec_for(a.seed))?)?);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = Manifest::default();
    for i in 0..a.count {
        let name = format!("g{i:04}.json");
        save_graph(&a.out.join(&name), &generate(&spec_for(a.seed.wrapping_add(i as u64)))?)?;
        manifest.graphs.push(ManifestEntry {
            id: format!("g{i:04}"),
            graph: name.into(),
            label: None,
        });
    }
    emit(Some(&a.out.join("manifest.json")), &to_json(&manifest))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let cfg = a.model.config(&g);
    let policy = a.label.map_or(LabelPolicy::Seeded, LabelPolicy::Graph);
    let bundle = simulate_client_step(&g, &cfg, &policy)?;
    Ok(save_bundle(&a.out, &bundle)?)
}

fn cmd_attack(a: &AttackArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let schema = std::sync::Arc::new(load_schema(&a.schema)?);
    let outcome = run_attack(&bundle, &schema, &a.flags.options()?)?;
    let file = ReconstructionFile::from_outcome(&outcome, !a.flags.deterministic);
    emit(a.out.as_deref(), &to_json(&file))
}

/// Reads either a reconstruction file or a bare graph file.
fn load_reconstruction(path: &Path) -> Result<Option<Graph>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let context = path.display().to_string();
    let file = match from_json::<ReconstructionFile>(&text, &context) {
        Ok(rec) => rec.graph,
        Err(_) => Some(from_json::<GraphFile>(&text, &context)?),
    };
    Ok(file.map(GraphFile::into_graph).transpose()?)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let truth = load_graph(&a.truth)?;
    let agg = Aggregator::default();
    let report = match load_reconstruction(&a.reconstruction)? {
        Some(h) => {
            if h.schema() != truth.schema() {
                bail!("reconstruction and truth use different feature schemas");
            }
            serde_json::to_value(evaluate(&truth, &h, &agg))?
        }
        None => json!({
            "gsm0": 0.0,
            "gsm1": 0.0,
            "gsm2": 0.0,
            "full": false,
            "sizes": [truth.n(), 0],
            "matching": [],
        }),
    };
    emit(a.out.as_deref(), &to_json(&report))
}

fn cmd_batch(a: &BatchArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let items = manifest
        .graphs
        .iter()
        .zip(manifest.resolve(&a.manifest))
        .map(|(entry, path)| {
            Ok(BatchItem {
                id: entry.id.clone(),
                graph: load_graph(&path)?,
                label: entry.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = items.first() else {
        bail!("manifest {} lists no graphs", a.manifest.display());
    };
    let model = a.model.config(&first.graph);
    let report = run_batch(&items, &model, &a.flags.options()?, !a.flags.deterministic);
    emit(a.out.as_deref(), &to_json(&report))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Batch(a) => cmd_batch(a),
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRAIN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.to_string(), 2),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail("failed", format!("{e:#}"), 1),
    }
}
