//! Column-span bases of weight gradients, span distances, and the candidate
//! filtering pipeline built on them.

mod filter;
mod generate;
mod structure;

pub use filter::{filter, filter_nodes, Candidate, CandidateSet, SpanChecker};
pub use generate::{extend_block, generate_bbs, one_hop_blocks, GenerateOptions, LevelStats};
pub use structure::{structure_filter, StructureOutcome};

use nalgebra::{DMatrix, DVector, SVD};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// A row is recoverable when its relative residual against the span of the
/// other rows exceeds this.
pub const RECOVERABLE_TOL: f64 = 1e-8;

/// Orthonormal basis of the column span of a gradient matrix (optionally of
/// its first `truncation` rows).
#[derive(Debug, Clone)]
pub struct SpanBasis {
    basis: DMatrix<f64>,
    truncation: Option<usize>,
}

impl SpanBasis {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn truncation(&self) -> Option<usize> {
        self.truncation
    }
}

pub fn build_span_basis(grad: &DMatrix<f64>, tol: f64, truncation: Option<usize>) -> SpanBasis {
    let rows = truncation.map_or(grad.nrows(), |t| t.min(grad.nrows()));
    let m = grad.rows(0, rows).into_owned();
    SpanBasis {
        basis: orthonormal_columns(m, tol),
        truncation,
    }
}

/// Left singular vectors with singular value above `tol · σ_max`.
fn orthonormal_columns(m: DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let rows = m.nrows();
    if m.ncols() == 0 || rows == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = SVD::new(m, true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    if smax.is_nan() || smax <= 0.0 {
        return DMatrix::zeros(rows, 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol * smax)
        .collect();
    DMatrix::from_fn(rows, keep.len(), |r, c| u[(r, keep[c])])
}

/// Numerical rank of `m` under the same tolerance as the span bases.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    orthonormal_columns(m.clone(), RANK_TOL).ncols()
}

/// Relative distance `‖z − B Bᵀ z‖ / max(‖z‖, 1e-30)`.
///
/// # Panics
/// If `z` does not have the basis' row count.
pub fn span_distance(z: &[f64], basis: &SpanBasis) -> f64 {
    assert_eq!(z.len(), basis.dim(), "vector length does not match basis");
    let z = DVector::from_column_slice(z);
    let norm = z.norm();
    if basis.rank() == 0 {
        return norm / norm.max(1e-30);
    }
    let coef = basis.basis.tr_mul(&z);
    let residual = &z - &basis.basis * coef;
    residual.norm() / norm.max(1e-30)
}

/// Rows of `grad_y` that do not lie in the span of the remaining rows.
pub fn recoverable_rows(grad_y: &DMatrix<f64>) -> Vec<usize> {
    let n = grad_y.nrows();
    (0..n)
        .filter(|&i| {
            let others = grad_y.clone().remove_row(i);
            let basis = SpanBasis {
                basis: orthonormal_columns(others.transpose(), RANK_TOL),
                truncation: None,
            };
            let row: Vec<f64> = grad_y.row(i).iter().copied().collect();
            span_distance(&row, &basis) > RECOVERABLE_TOL
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn basis_examples() {
        let collinear = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert_eq!(build_span_basis(&collinear, RANK_TOL, None).rank(), 1);
        assert_eq!(build_span_basis(&DMatrix::identity(3, 3), RANK_TOL, None).rank(), 3);
        assert_eq!(build_span_basis(&DMatrix::zeros(3, 3), RANK_TOL, None).rank(), 0);
        let truncated = build_span_basis(&DMatrix::identity(3, 3), RANK_TOL, Some(2));
        assert_eq!((truncated.dim(), truncated.rank()), (2, 2));
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..20 {
            let m = random(&mut rng, 12, 5) * random(&mut rng, 5, 9);
            let b = build_span_basis(&m, RANK_TOL, None);
            assert_eq!(b.rank(), 5);
            let gram = b.basis().tr_mul(b.basis());
            assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
        }
    }

    #[test]
    fn rows_of_x_lie_in_gradient_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let x = random(&mut rng, 4, 10);
        let g = random(&mut rng, 4, 16);
        let b = build_span_basis(&(x.transpose() * g), RANK_TOL, None);
        assert_eq!(b.rank(), 4);
        for i in 0..4 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            assert!(span_distance(&row, &b) < 1e-8);
        }
    }

    #[test]
    fn distance_examples() {
        let e12 = build_span_basis(&DMatrix::from_column_slice(3, 2, &[1., 0., 0., 0., 1., 0.]), RANK_TOL, None);
        assert!(span_distance(&[2.0, -1.0, 0.0], &e12) < 1e-12);
        assert!((span_distance(&[0.0, 0.0, 1.0], &e12) - 1.0).abs() < 1e-12);
        let expected = 5.0 / 50f64.sqrt();
        for scale in [1e-6, 1.0, 1e6] {
            let d = span_distance(&[3.0 * scale, 4.0 * scale, 5.0 * scale], &e12);
            assert!((d - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn recoverable_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let full = random(&mut rng, 4, 7);
        assert_eq!(recoverable_rows(&full), vec![0, 1, 2, 3]);

        let mut dup = random(&mut rng, 4, 7);
        let r1 = dup.row(1).into_owned();
        dup.row_mut(2).copy_from(&r1);
        assert_eq!(recoverable_rows(&dup), vec![0, 3]);

        let u = random(&mut rng, 5, 1);
        let v = random(&mut rng, 1, 7);
        assert!(recoverable_rows(&(u * v)).is_empty());
    }
}
