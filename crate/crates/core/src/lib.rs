//! Gradient inversion for graph neural networks.
//!
//! Given the weights of a small GCN/GAT and the weight gradients one client
//! produced on a single graph, the crate recovers the graph: node features are
//! recovered with span checks against the first-layer gradient, k-hop building
//! blocks are grown and filtered layer by layer, and a depth-first search glues
//! the surviving blocks into complete graphs ranked by gradient distance.
//!
//! Module map:
//!
//! * [`graph`]: graph values, k-hop neighborhoods, gluing, overlap, isomorphism
//! * [`gnn`]: forward pass, exact reverse-mode gradients, client step simulation
//! * [`span`]: span bases, recoverability, node/block filtering, structure filter
//! * [`recon`]: gradient distance, block ordering, DFS reconstruction
//! * [`gsm`]: GSM-N similarity metrics and exact-match scoring
//! * [`io`]: JSON formats and synthetic graph generators
//! * [`attack`] / [`report`]: the end-to-end pipeline and run reports

pub mod attack;
pub mod error;
pub mod graph;
pub mod gnn;
pub mod gsm;
pub mod io;
pub mod par;
pub mod recon;
pub mod report;
pub mod span;

pub use error::{Error, Result};
pub use graph::{BuildingBlock, FeatureSchema, Graph, NodeFeatures, Task};
pub use gnn::{Activation, Arch, GradientBundle, ModelConfig, ModelWeights};
