//! Preconditioned conjugate gradients for the symmetric positive (semi-)definite
//! Step-A systems, plus the operators and preconditioners used with it.

mod banded;
mod kron;
mod sparse;

pub use banded::BandedCholesky;
pub use kron::{FastDiagonalization, KroneckerSum};
pub use sparse::SparseSymMatrix;

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Symmetric linear operator `y = A x`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

/// Symmetric positive definite approximation of `A^{-1}`.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal scaling. Zero diagonal entries are passed through unscaled.
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(op: &dyn LinearOperator) -> Self {
        let inv_diag = op
            .diagonal()
            .into_iter()
            .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Self { inv_diag }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖b − Ax‖ ≤ tol ‖b‖`.
    pub tol: f64,
    /// Iteration cap; `None` means 20 times the dimension.
    pub max_iter: Option<usize>,
    /// Work in the complement of the constant vector.
    pub deflate_constants: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            deflate_constants: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
}

const CHUNK: usize = 4096;

/// Dot product with a fixed summation order, independent of the thread count.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    if x.len() <= CHUNK {
        return x.iter().zip(y).map(|(a, b)| a * b).sum();
    }
    let partial: Vec<f64> = x
        .par_chunks(CHUNK)
        .zip(y.par_chunks(CHUNK))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>())
        .collect();
    partial.iter().sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn sum(x: &[f64]) -> f64 {
    if x.len() <= CHUNK {
        return x.iter().sum();
    }
    let partial: Vec<f64> = x.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    partial.iter().sum()
}

/// Subtracts the mean.
pub fn project_mean_zero(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let m = sum(x) / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Jacobi-preconditioned CG from a zero initial guess.
///
/// Returns `(x, iterations, relative residual)`.
pub fn cg_solve(
    a: &SparseSymMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    deflate_constants: bool,
) -> Result<(Vec<f64>, usize, f64)> {
    let mut x = vec![0.0; a.n()];
    let opts = CgOptions {
        tol,
        max_iter: Some(max_iter),
        deflate_constants,
    };
    let stats = pcg(a, &Jacobi::new(a), b, &mut x, &opts)?;
    Ok((x, stats.iterations, stats.residual))
}

/// Preconditioned CG starting from the contents of `x`.
///
/// On failure `x` holds the iterate with the smallest residual seen, which is
/// also returned inside [`Error::SolverNotConverged`].
pub fn pcg<A, P>(a: &A, precond: &P, b: &[f64], x: &mut [f64], opts: &CgOptions) -> Result<SolveStats>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let n = a.dim();
    if b.len() != n || x.len() != n {
        return Err(Error::InvalidArgument(format!(
            "cg: dimension mismatch (operator {n}, rhs {}, guess {})",
            b.len(),
            x.len()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("cg: tolerance must be positive, got {}", opts.tol)));
    }
    let max_iter = opts.max_iter.unwrap_or(20 * n.max(1));
    let mut rhs = b.to_vec();
    if opts.deflate_constants {
        project_mean_zero(&mut rhs);
        project_mean_zero(x);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = opts.tol * bnorm;

    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    r.iter_mut().zip(&rhs).for_each(|(ri, bi)| *ri = bi - *ri);
    if opts.deflate_constants {
        project_mean_zero(&mut r);
    }
    let mut rnorm = norm(&r);
    let mut best_norm = rnorm;
    let mut best_x = x.to_vec();
    if rnorm <= target {
        return Ok(SolveStats {
            iterations: 0,
            residual: rnorm / bnorm,
        });
    }

    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    if opts.deflate_constants {
        project_mean_zero(&mut z);
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    for it in 1..=max_iter {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        if opts.deflate_constants {
            project_mean_zero(&mut r);
        }
        rnorm = norm(&r);
        if rnorm <= target {
            if opts.deflate_constants {
                project_mean_zero(x);
            }
            return Ok(SolveStats {
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        if rnorm < best_norm {
            best_norm = rnorm;
            best_x.copy_from_slice(x);
        }
        precond.apply(&r, &mut z);
        if opts.deflate_constants {
            project_mean_zero(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }

    if opts.deflate_constants {
        project_mean_zero(&mut best_x);
    }
    x.copy_from_slice(&best_x);
    Err(Error::SolverNotConverged {
        iterations: max_iter,
        residual: best_norm / bnorm,
        best: best_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn neumann_1d(n: usize) -> SparseSymMatrix {
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        SparseSymMatrix::from_triplets(n, t)
    }

    fn pseudo_inverse_solve(a: &SparseSymMatrix, b: &[f64]) -> Vec<f64> {
        let n = a.n();
        let d = a.to_dense();
        let m = DMatrix::from_fn(n, n, |i, j| d[i][j]);
        let eig = m.symmetric_eigen();
        let scale = eig.eigenvalues.amax();
        let mut x = vec![0.0; n];
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            if lam.abs() <= 1e-10 * scale {
                continue;
            }
            let v = eig.eigenvectors.column(k);
            let c: f64 = (0..n).map(|i| v[i] * b[i]).sum::<f64>() / lam;
            for i in 0..n {
                x[i] += c * v[i];
            }
        }
        x
    }

    #[test]
    fn identity_in_one_iteration() {
        let a = SparseSymMatrix::from_triplets(4, (0..4).map(|i| (i, i, 1.0)).collect());
        let b = [1.0, -2.0, 3.5, 0.25];
        let (x, it, res) = cg_solve(&a, &b, 1e-12, 10, false).unwrap();
        assert!(it <= 1);
        assert!(res <= 1e-12);
        assert_eq!(x, b.to_vec());
    }

    #[test]
    fn neumann_three_dofs_matches_pseudo_inverse() {
        let a = neumann_1d(3);
        let b = [1.0, -0.5, -0.5];
        let (x, _, _) = cg_solve(&a, &b, 1e-12, 60, true).unwrap();
        let oracle = pseudo_inverse_solve(&a, &b);
        let mean: f64 = x.iter().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-14);
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn constant_rhs_deflates_to_zero() {
        let a = neumann_1d(6);
        let (x, it, _) = cg_solve(&a, &[2.0; 6], 1e-10, 100, true).unwrap();
        assert_eq!(it, 0);
        assert!(x.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn deflated_solve_is_min_norm_least_squares() {
        // 2D Neumann Laplacian on a 12x12 node grid: 144 DOFs.
        let m = 12;
        let mut t = Vec::new();
        let id = |i: usize, j: usize| j * m + i;
        for j in 0..m {
            for i in 0..m {
                for (a, b) in [(id(i, j), (i + 1 < m).then(|| id(i + 1, j))), (id(i, j), (j + 1 < m).then(|| id(i, j + 1)))] {
                    if let Some(b) = b {
                        t.extend([(a, a, 1.0), (b, b, 1.0), (a, b, -1.0), (b, a, -1.0)]);
                    }
                }
            }
        }
        let a = SparseSymMatrix::from_triplets(m * m, t);
        // Incompatible right-hand side: the projection makes it compatible.
        let b: Vec<f64> = (0..m * m).map(|i| ((i * 37 % 11) as f64).cos()).collect();
        let (x, _, _) = cg_solve(&a, &b, 1e-13, 10_000, true).unwrap();
        let oracle = pseudo_inverse_solve(&a, &b);
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn non_convergence_reports_best_iterate() {
        let a = neumann_1d(50);
        let mut b = vec![0.0; 50];
        b[0] = 1.0;
        b[49] = -1.0;
        match cg_solve(&a, &b, 1e-14, 3, true) {
            Err(Error::SolverNotConverged { iterations, residual, best }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-14);
                assert_eq!(best.len(), 50);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn warm_start_at_solution_needs_no_iterations() {
        let a = neumann_1d(8).linear_combination(1.0, &SparseSymMatrix::from_triplets(8, vec![(7, 7, 1.0)]), 1.0);
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 0.3).collect();
        let b = a.mul_vec(&xs);
        let mut x = xs.clone();
        let stats = pcg(&a, &Jacobi::new(&a), &b, &mut x, &CgOptions::default()).unwrap();
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn dot_is_order_stable() {
        let x: Vec<f64> = (0..20_000).map(|i| ((i as f64) * 0.1).sin()).collect();
        let a = dot(&x, &x);
        let b = dot(&x, &x);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
