use nalgebra::DMatrix;

use super::{build_span_basis, numerical_rank, span_distance, SpanBasis, RANK_TOL};
use crate::error::{Error, Result};
use crate::gnn::{propagate_block, GradientBundle};
use crate::graph::{BuildingBlock, FeatureSchema, NodeFeatures};
use crate::par;

/// A building block that passed a span check, with its distance.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub block: BuildingBlock,
    pub distance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub level: usize,
    pub blocks: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Span bases for every layer of a bundle. Layer `l < L` uses the gradient of
/// `gnn.{l}.weight`; layer `L` uses the first readout layer.
#[derive(Debug, Clone)]
pub struct SpanChecker<'a> {
    bundle: &'a GradientBundle,
    bases: Vec<SpanBasis>,
}

impl<'a> SpanChecker<'a> {
    pub fn new(bundle: &'a GradientBundle) -> Self {
        let cfg = &bundle.config;
        let bases = (0..=cfg.num_layers)
            .map(|l| build_span_basis(layer_gradient(bundle, l), RANK_TOL, None))
            .collect();
        Self { bundle, bases }
    }

    pub fn bundle(&self) -> &GradientBundle {
        self.bundle
    }

    pub fn basis(&self, layer: usize) -> &SpanBasis {
        &self.bases[layer]
    }

    /// Span distance of the block center's layer-`layer` embedding.
    pub fn distance(&self, block: &BuildingBlock, layer: usize) -> Result<f64> {
        let cfg = &self.bundle.config;
        let z = propagate_block(block, &self.bundle.weights, cfg, layer)?;
        Ok(span_distance(&z, &self.bases[layer]))
    }

    /// Keeps the blocks whose distance is below `tau`, preserving order.
    pub fn filter(&self, blocks: Vec<BuildingBlock>, layer: usize, tau: f64) -> Result<Vec<Candidate>> {
        let distances = par::map(&blocks, |b| self.distance(b, layer));
        let mut out = Vec::new();
        for (block, d) in blocks.into_iter().zip(distances) {
            let distance = d?;
            if distance < tau {
                out.push(Candidate { block, distance });
            }
        }
        Ok(out)
    }
}

fn layer_gradient(bundle: &GradientBundle, layer: usize) -> &DMatrix<f64> {
    if layer < bundle.config.num_layers {
        &bundle.grads.layers[layer].weight
    } else {
        &bundle.grads.readout[0]
    }
}

/// Filters `candidates` against the gradient of `layer`; see [`SpanChecker`].
pub fn filter(candidates: CandidateSet, bundle: &GradientBundle, tau: f64, layer: usize) -> Result<CandidateSet> {
    let checker = SpanChecker::new(bundle);
    let blocks = candidates.blocks.into_iter().map(|c| c.block).collect();
    Ok(CandidateSet {
        level: candidates.level,
        blocks: checker.filter(blocks, layer, tau)?,
    })
}

/// Recovers candidate node feature vectors one feature at a time: partial
/// one-hot prefixes are extended by every value of the next feature and, once
/// the prefix is wider than the rank of `grad_w0`, checked against the span of
/// the matching leading rows of `grad_w0`.
pub fn filter_nodes(schema: &FeatureSchema, grad_w0: &DMatrix<f64>, tau: f64, cap: usize) -> Result<Vec<NodeFeatures>> {
    let rank = numerical_rank(grad_w0);
    let mut prefixes: Vec<Vec<u32>> = vec![Vec::new()];
    let mut d_sum = 0;
    for (k, spec) in schema.features.iter().enumerate() {
        let count = prefixes.len() * spec.cardinality as usize;
        if count > cap {
            return Err(Error::CandidateCap { level: 0, count, cap });
        }
        prefixes = prefixes
            .into_iter()
            .flat_map(|p| {
                (0..spec.cardinality).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
        d_sum += spec.cardinality as usize;
        if d_sum > rank {
            let basis = build_span_basis(grad_w0, RANK_TOL, Some(d_sum));
            let offsets = &schema.offsets()[..=k];
            let keep = par::map(&prefixes, |p| {
                let mut z = vec![0.0; d_sum];
                for (o, &v) in offsets.iter().zip(p) {
                    z[o + v as usize] = 1.0;
                }
                span_distance(&z, &basis) < tau
            });
            prefixes = prefixes
                .into_iter()
                .zip(keep)
                .filter_map(|(p, k)| k.then_some(p))
                .collect();
        }
        log::debug!("feature {k}: {} partial vectors survive (width {d_sum}, rank {rank})", prefixes.len());
    }
    Ok(prefixes.into_iter().map(NodeFeatures::new).collect())
}
