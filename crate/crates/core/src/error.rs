use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("node {node}: feature {feature} has value {value} but cardinality is {cardinality}")]
    FeatureOutOfRange {
        node: usize,
        feature: usize,
        value: u32,
        cardinality: u32,
    },

    #[error("node {node}: expected {expected} feature values, got {got}")]
    FeatureArity {
        node: usize,
        expected: usize,
        got: usize,
    },

    #[error("edge {edge} ({a}, {b}) references a node outside 0..{n}")]
    EdgeOutOfRange { edge: usize, a: usize, b: usize, n: usize },

    #[error("edge {edge} is a self-loop on node {node}")]
    SelfLoop { edge: usize, node: usize },

    #[error("edge {edge} ({a}, {b}) is a duplicate")]
    DuplicateEdge { edge: usize, a: usize, b: usize },

    #[error("node {node}: structural degree {structural} exceeds declared degree {declared}")]
    DegreeExceeded {
        node: usize,
        structural: usize,
        declared: usize,
    },

    #[error("node index {index} out of range for graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },

    #[error("invalid building block: {0}")]
    Block(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("block hop {hop} is too small to propagate to layer {layer}")]
    HopTooSmall { hop: usize, layer: usize },

    #[error("candidate cap exceeded at level {level}: {count} candidates > cap {cap}")]
    CandidateCap { level: usize, count: usize, cap: usize },

    #[error("infeasible generator spec: {0}")]
    Infeasible(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("cannot access {}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}
