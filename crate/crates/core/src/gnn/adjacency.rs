use nalgebra::DMatrix;

use super::LEAKY_SLOPE;
use crate::graph::Graph;

/// Symmetric normalized adjacency over closed neighborhoods:
/// `A[i][j] = 1 / sqrt((deg_i + 1) (deg_j + 1))` for `j = i` or `j ~ i`, where
/// `deg` is the degree declared by the node features.
pub fn normalized_adjacency_gcn(g: &Graph) -> DMatrix<f64> {
    let n = g.n();
    let eff: Vec<f64> = (0..n).map(|i| (g.declared_degree(i) + 1) as f64).collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0 / eff[i];
        for &j in g.neighbors(i) {
            a[(i, j)] = 1.0 / (eff[i] * eff[j]).sqrt();
        }
    }
    a
}

/// Per-head attention coefficients and the pre-activation logits they were
/// computed from.
#[derive(Debug, Clone)]
pub struct Attention {
    pub alpha: Vec<DMatrix<f64>>,
    pub pre: Vec<DMatrix<f64>>,
}

/// GAT attention for each head over closed neighborhoods. `y` holds the
/// transformed node features `X W` (heads concatenated column-wise) and row
/// `h` of `a` is `[a_src ‖ a_dst]` for head `h`. Entries outside the closed
/// neighborhood are zero in both `alpha` and `pre`.
pub fn attention_adjacency_gat(g: &Graph, y: &DMatrix<f64>, a: &DMatrix<f64>) -> Attention {
    let n = g.n();
    let heads = a.nrows();
    let hd = a.ncols() / 2;
    let mut alpha = Vec::with_capacity(heads);
    let mut pre = Vec::with_capacity(heads);
    for h in 0..heads {
        let yh = y.columns(h * hd, hd);
        let src = yh * a.row(h).columns(0, hd).transpose();
        let dst = yh * a.row(h).columns(hd, hd).transpose();
        let mut p = DMatrix::zeros(n, n);
        let mut al = DMatrix::zeros(n, n);
        for i in 0..n {
            let closed = std::iter::once(i).chain(g.neighbors(i).iter().copied());
            let logits: Vec<(usize, f64, f64)> = closed
                .map(|j| {
                    let x = src[i] + dst[j];
                    (j, x, leaky(x))
                })
                .collect();
            let max = logits.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logits.iter().map(|t| (t.2 - max).exp()).sum();
            for &(j, x, e) in &logits {
                p[(i, j)] = x;
                al[(i, j)] = (e - max).exp() / total;
            }
        }
        alpha.push(al);
        pre.push(p);
    }
    Attention { alpha, pre }
}

pub(crate) fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub(crate) fn leaky_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}
