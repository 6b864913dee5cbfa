//! Deterministic block power iteration for the leading eigenpairs of a
//! symmetric positive semi-definite operator.
//!
//! The operator is supplied as a closure mapping an `n × p` block to
//! `A · block`, so dense covariance products and sparse matrices share the
//! same solver. Each sweep multiplies the block by `A`, performs a
//! Rayleigh–Ritz step on the `p × p` projection and re-orthonormalises.
//! The block carries a few extra columns beyond the requested rank, which
//! keeps convergence fast when the leading eigenvalues are close.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    pub max_iter: usize,
    /// Convergence threshold on `‖A u − λ u‖` relative to the largest `|λ|`.
    pub tol: f64,
    pub seed: u64,
    pub oversample: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            seed: 0x5c1_1e,
            oversample: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Descending.
    pub values: Vec<f64>,
    /// `n × k`, orthonormal columns matching `values`.
    pub vectors: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Leading `k` eigenpairs of the symmetric operator `apply` on `R^n`.
pub fn top_eigenpairs<F>(n: usize, k: usize, apply: F, opts: &PowerOptions) -> Eigenpairs
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let k = k.min(n);
    if k == 0 {
        return Eigenpairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
            iterations: 0,
            converged: true,
        };
    }
    let p = (k + opts.oversample).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let mut q = start.qr().q();

    let mut values = vec![0.0; k];
    let mut ritz = q.columns(0, k).into_owned();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opts.max_iter.max(1) {
        iterations = it;
        let z = apply(&q);
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let (vals, vecs) = sorted_eigen(h);
        let zv = &z * &vecs;
        let qv = &q * &vecs;

        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let worst = (0..k)
            .map(|i| (zv.column(i) - qv.column(i) * vals[i]).norm())
            .fold(0.0, f64::max);
        values.copy_from_slice(&vals[..k]);
        ritz = qv.columns(0, k).into_owned();
        if worst <= opts.tol * scale {
            converged = true;
            break;
        }
        q = zv.qr().q();
    }
    canonical_signs(&mut ritz);
    Eigenpairs {
        values,
        vectors: ritz,
        iterations,
        converged,
    }
}

/// Eigen-decomposition of a small symmetric matrix, eigenvalues descending.
pub fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let p = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn canonical_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        for &x in col.iter() {
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::<f64>::from_fn(3 * n, n, |_, _| StandardNormal.sample(&mut rng));
        x.transpose() * x
    }

    #[test]
    fn matches_dense_eigensolver() {
        let a = random_psd(30, 7);
        let got = top_eigenpairs(30, 4, |b| &a * b, &PowerOptions::default());
        assert!(got.converged);
        let (vals, vecs) = sorted_eigen(a.clone());
        for i in 0..4 {
            assert!((got.values[i] - vals[i]).abs() < 1e-8 * vals[0]);
            let dot = got.vectors.column(i).dot(&vecs.column(i)).abs();
            assert!((dot - 1.0).abs() < 1e-9, "column {i}: {dot}");
        }
    }

    #[test]
    fn deterministic_and_handles_zero_operator() {
        let a = random_psd(12, 1);
        let r1 = top_eigenpairs(12, 2, |b| &a * b, &PowerOptions::default());
        let r2 = top_eigenpairs(12, 2, |b| &a * b, &PowerOptions::default());
        assert_eq!(r1.vectors, r2.vectors);

        let z = top_eigenpairs(5, 2, |b| DMatrix::zeros(b.nrows(), b.ncols()), &PowerOptions::default());
        assert!(z.values.iter().all(|v| *v == 0.0));
        assert!(z.vectors.iter().all(|v| v.is_finite()));
    }
}
