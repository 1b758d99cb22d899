use nalgebra::DMatrix;

use super::adjacency::leaky_slope;
use super::{Arch, ForwardTrace, Labels, ModelConfig, ModelWeights};

/// Gradients of the loss with respect to every parameter, together with the
/// per-layer `∂L/∂Y^l` and the readout `∂L/∂(X^L R_0)`.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: ModelWeights,
    pub dy: Vec<DMatrix<f64>>,
    pub d_readout_pre: DMatrix<f64>,
}

/// Reverse-mode pass over a trace produced by [`super::forward`] with the same
/// weights and configuration.
pub fn backward(trace: &ForwardTrace, w: &ModelWeights, cfg: &ModelConfig) -> Backward {
    let n = trace.logits.nrows();
    let mut grads = ModelWeights::zeros(cfg);

    let mut dlogits = DMatrix::zeros(n, cfg.num_classes);
    match &trace.labels {
        Labels::Graph(c) => {
            for i in 0..n {
                for k in 0..cfg.num_classes {
                    let target = if k == *c { 1.0 } else { 0.0 };
                    dlogits[(i, k)] = (trace.probs[(0, k)] - target) / n as f64;
                }
            }
        }
        Labels::Nodes(ys) => {
            for (i, &c) in ys.iter().enumerate() {
                for k in 0..cfg.num_classes {
                    let target = if k == c { 1.0 } else { 0.0 };
                    dlogits[(i, k)] = (trace.probs[(i, k)] - target) / n as f64;
                }
            }
        }
    }

    grads.readout[1] = trace.readout_hidden.transpose() * &dlogits;
    let dhidden = &dlogits * w.readout[1].transpose();
    let d_readout_pre = dhidden.zip_map(&trace.readout_pre, |d, u| d * cfg.activation.derivative(u));
    grads.readout[0] = trace.embeddings.transpose() * &d_readout_pre;
    let mut dx = &d_readout_pre * w.readout[0].transpose();

    let mut dy_all = vec![DMatrix::zeros(0, 0); cfg.num_layers];
    for l in (0..cfg.num_layers).rev() {
        let lt = &trace.layers[l];
        let dz = dx.zip_map(&lt.z, |d, z| d * cfg.activation.derivative(z));
        let dy = match cfg.arch {
            Arch::Gcn => lt.adjacency[0].transpose() * &dz,
            Arch::Gat => {
                let att = w.layers[l].attention.as_ref().expect("GAT attention");
                let (dy, da) = gat_backward(lt.adjacency.as_slice(), &lt.pre, &lt.y, &dz, att, cfg.head_dim());
                grads.layers[l].attention = Some(da);
                dy
            }
        };
        grads.layers[l].weight = lt.x.transpose() * &dy;
        if l > 0 {
            dx = &dy * w.layers[l].weight.transpose();
        }
        dy_all[l] = dy;
    }
    Backward {
        grads,
        dy: dy_all,
        d_readout_pre,
    }
}

/// Backpropagates through `Z_h = α_h Y_h` for every head, including the
/// dependence of the attention coefficients on `Y`.
fn gat_backward(
    alpha: &[DMatrix<f64>],
    pre: &[DMatrix<f64>],
    y: &DMatrix<f64>,
    dz: &DMatrix<f64>,
    a: &DMatrix<f64>,
    hd: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.nrows();
    let mut dy = DMatrix::zeros(n, y.ncols());
    let mut da = DMatrix::zeros(a.nrows(), a.ncols());
    for (h, (al, p)) in alpha.iter().zip(pre).enumerate() {
        let yh = y.columns(h * hd, hd);
        let dzh = dz.columns(h * hd, hd);
        let mut dyh = al.transpose() * dzh;

        // dα_ij = dZ_i · Y_j, restricted to the neighborhood pattern.
        let dalpha = dzh * yh.transpose();
        let mut ds = vec![0.0; n];
        let mut dt = vec![0.0; n];
        for i in 0..n {
            let weighted: f64 = (0..n).map(|k| al[(i, k)] * dalpha[(i, k)]).sum();
            for j in 0..n {
                if al[(i, j)] == 0.0 {
                    continue;
                }
                let de = al[(i, j)] * (dalpha[(i, j)] - weighted);
                let dpre = de * leaky_slope(p[(i, j)]);
                ds[i] += dpre;
                dt[j] += dpre;
            }
        }
        let a_src = a.row(h).columns(0, hd).into_owned();
        let a_dst = a.row(h).columns(hd, hd).into_owned();
        for i in 0..n {
            for c in 0..hd {
                da[(h, c)] += ds[i] * yh[(i, c)];
                da[(h, hd + c)] += dt[i] * yh[(i, c)];
                dyh[(i, c)] += ds[i] * a_src[c] + dt[i] * a_dst[c];
            }
        }
        dy.columns_mut(h * hd, hd).copy_from(&dyh);
    }
    (dy, da)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::{forward, Activation};
    use super::*;
    use crate::graph::{Graph, Task};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss(g: &Graph, w: &ModelWeights, cfg: &ModelConfig, labels: &Labels) -> f64 {
        forward(g, w, cfg, labels).unwrap().loss
    }

    /// Smallest |pre-activation| across the trace; finite differences are
    /// unreliable next to the ReLU and LeakyReLU kinks.
    fn kink_margin(trace: &ForwardTrace, cfg: &ModelConfig) -> f64 {
        let mut m = f64::INFINITY;
        if cfg.activation == Activation::Relu {
            for lt in &trace.layers {
                m = lt.z.iter().fold(m, |acc, v| acc.min(v.abs()));
            }
            m = trace.readout_pre.iter().fold(m, |acc, v| acc.min(v.abs()));
        }
        for lt in &trace.layers {
            for (p, al) in lt.pre.iter().zip(&lt.adjacency) {
                for (x, a) in p.iter().zip(al.iter()) {
                    if *a != 0.0 {
                        m = m.min(x.abs());
                    }
                }
            }
        }
        m
    }

    fn check_fd(arch: Arch, activation: Activation, task: Task, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut checked = 0;
        while checked < 8 {
            let mut cfg = config(arch, 6, rng.random());
            cfg.activation = activation;
            cfg.task = task;
            let g = random_graph(&mut rng, 6, task);
            let labels = match task {
                Task::GraphClassification => Labels::Graph(rng.random_range(0..3)),
                Task::NodeClassification => Labels::Nodes((0..g.n()).map(|_| rng.random_range(0..3)).collect()),
            };
            let w = ModelWeights::init(&cfg);
            let trace = forward(&g, &w, &cfg, &labels).unwrap();
            if kink_margin(&trace, &cfg) < 1e-4 {
                continue;
            }
            checked += 1;
            let bw = backward(&trace, &w, &cfg);
            let analytic = bw.grads.params();
            let h = 1e-5;
            for (idx, (name, grad)) in analytic.iter().enumerate() {
                for r in 0..grad.nrows() {
                    for c in 0..grad.ncols() {
                        let mut plus = w.clone();
                        plus.params_mut()[idx].1[(r, c)] += h;
                        let mut minus = w.clone();
                        minus.params_mut()[idx].1[(r, c)] -= h;
                        let fd = (loss(&g, &plus, &cfg, &labels) - loss(&g, &minus, &cfg, &labels)) / (2.0 * h);
                        let an = grad[(r, c)];
                        let tol = 1e-6_f64.max(1e-5 * an.abs().max(fd.abs()));
                        assert!((an - fd).abs() <= tol, "{name}[{r},{c}]: analytic {an} vs fd {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn gcn_matches_finite_differences() {
        check_fd(Arch::Gcn, Activation::Relu, Task::GraphClassification, 21);
        check_fd(Arch::Gcn, Activation::Gelu, Task::NodeClassification, 22);
    }

    #[test]
    fn gat_matches_finite_differences() {
        check_fd(Arch::Gat, Activation::Relu, Task::GraphClassification, 23);
        check_fd(Arch::Gat, Activation::Gelu, Task::NodeClassification, 24);
    }

    #[test]
    fn weight_gradient_is_input_times_dy() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for arch in [Arch::Gcn, Arch::Gat] {
            let cfg = config(arch, 8, 1);
            let w = ModelWeights::init(&cfg);
            let g = random_graph(&mut rng, 7, Task::GraphClassification);
            let trace = forward(&g, &w, &cfg, &Labels::Graph(0)).unwrap();
            let bw = backward(&trace, &w, &cfg);
            for l in 0..cfg.num_layers {
                let rebuilt = trace.layers[l].x.transpose() * &bw.dy[l];
                assert!((rebuilt - &bw.grads.layers[l].weight).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn saturated_logits_vanish() {
        // Scale the last readout layer so the correct class dominates.
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let cfg = config(Arch::Gcn, 8, 2);
        let g = random_graph(&mut rng, 5, Task::GraphClassification);
        let base = ModelWeights::init(&cfg);
        let trace = forward(&g, &base, &cfg, &Labels::Graph(0)).unwrap();
        let mut pooled = trace.readout_hidden.row_mean();
        pooled /= pooled.norm_squared();
        let mut w = base.clone();
        // Pooled logits become (s, -s, -s) at scale s.
        for r in 0..cfg.hidden_dim {
            w.readout[1][(r, 0)] = pooled[r];
            w.readout[1][(r, 1)] = -pooled[r];
            w.readout[1][(r, 2)] = -pooled[r];
        }
        let norm_at = |scale: f64| {
            let mut ws = w.clone();
            ws.readout[1] *= scale;
            let t = forward(&g, &ws, &cfg, &Labels::Graph(0)).unwrap();
            backward(&t, &ws, &cfg).grads.squared_norm(false).sqrt()
        };
        let small = norm_at(1.0);
        let large = norm_at(50.0);
        assert!(large < small * 1e-3, "{large} vs {small}");
    }
}
