use super::{project_mean_zero, BandedCholesky, LinearOperator, Preconditioner, SparseSymMatrix};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// `A = T1 ⊗ S1 + T2 ⊗ S2` acting on vectors laid out as `x[i * ns + a]`,
/// `i` the time index and `a` the space index.
#[derive(Debug, Clone)]
pub struct KroneckerSum {
    pub t1: SparseSymMatrix,
    pub s1: SparseSymMatrix,
    pub t2: SparseSymMatrix,
    pub s2: SparseSymMatrix,
}

impl KroneckerSum {
    pub fn new(t1: SparseSymMatrix, s1: SparseSymMatrix, t2: SparseSymMatrix, s2: SparseSymMatrix) -> Result<Self> {
        if t1.n() != t2.n() || s1.n() != s2.n() {
            return Err(Error::InvalidArgument(format!(
                "Kronecker factors disagree: time {}/{}, space {}/{}",
                t1.n(),
                t2.n(),
                s1.n(),
                s2.n()
            )));
        }
        Ok(Self { t1, s1, t2, s2 })
    }

    pub fn nt(&self) -> usize {
        self.t1.n()
    }

    pub fn ns(&self) -> usize {
        self.s1.n()
    }

    /// Explicit sparse form, for tests and small problems.
    pub fn to_sparse(&self) -> SparseSymMatrix {
        let ns = self.ns();
        let mut t = Vec::new();
        for (tm, sm) in [(&self.t1, &self.s1), (&self.t2, &self.s2)] {
            for i in 0..tm.n() {
                for (j, tv) in tm.row(i) {
                    for a in 0..ns {
                        for (b, sv) in sm.row(a) {
                            t.push((i * ns + a, j * ns + b, tv * sv));
                        }
                    }
                }
            }
        }
        SparseSymMatrix::from_triplets(self.nt() * ns, t)
    }
}

impl LinearOperator for KroneckerSum {
    fn dim(&self) -> usize {
        self.nt() * self.ns()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let ns = self.ns();
        let mut z1 = vec![0.0; x.len()];
        let mut z2 = vec![0.0; x.len()];
        z1.par_chunks_mut(ns)
            .zip(z2.par_chunks_mut(ns))
            .zip(x.par_chunks(ns))
            .for_each(|((a, b), xi)| {
                self.s1.mul_vec_into(xi, a);
                self.s2.mul_vec_into(xi, b);
            });
        y.par_chunks_mut(ns).enumerate().for_each(|(i, yi)| {
            yi.iter_mut().for_each(|v| *v = 0.0);
            for (tm, z) in [(&self.t1, &z1), (&self.t2, &z2)] {
                for (j, tv) in tm.row(i) {
                    let zj = &z[j * ns..(j + 1) * ns];
                    yi.iter_mut().zip(zj).for_each(|(u, w)| *u += tv * w);
                }
            }
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        let (d1, e1, d2, e2) = (self.t1.diagonal(), self.s1.diagonal(), self.t2.diagonal(), self.s2.diagonal());
        let mut d = Vec::with_capacity(self.dim());
        for i in 0..self.nt() {
            for a in 0..self.ns() {
                d.push(d1[i] * e1[a] + d2[i] * e2[a]);
            }
        }
        d
    }
}

struct Block {
    chol: BandedCholesky,
    singular: bool,
}

/// Exact inverse of a [`KroneckerSum`] with `T2` positive definite, by
/// diagonalizing the time pencil `(T1, T2)` and factoring one banded spatial
/// block `λ_i S1 + S2` per eigenvalue.
///
/// A block whose eigenvalue vanishes is treated as having the constant
/// nullspace of `S2`; it is pinned and its solution projected to mean zero.
pub struct FastDiagonalization {
    nt: usize,
    ns: usize,
    /// Columns are `T2`-orthonormal generalized eigenvectors.
    v: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    blocks: Vec<Block>,
}

impl FastDiagonalization {
    /// Bytes needed to hold the factors of `op`.
    pub fn memory_estimate(op: &KroneckerSum) -> usize {
        let bw = op.s1.bandwidth().max(op.s2.bandwidth());
        8 * op.nt() * (op.ns() * (bw + 1) + op.nt())
    }

    pub fn new(op: &KroneckerSum) -> Result<Self> {
        let nt = op.nt();
        let ns = op.ns();
        let t1 = dense(&op.t1);
        let t2 = dense(&op.t2);
        let chol = t2
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("time mass factor is not positive definite".into()))?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("time mass factor is singular".into()))?;
        let c = &linv * t1 * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = c.symmetric_eigen();
        let v = linv.transpose() * &eig.eigenvectors;
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let scale = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);

        let blocks = eigenvalues
            .par_iter()
            .map(|&lam| {
                let singular = lam.abs() <= 1e-11 * scale;
                let lam = if singular { 0.0 } else { lam };
                let m = op.s1.linear_combination(lam, &op.s2, 1.0);
                let chol = BandedCholesky::factor(&m, singular.then_some(0))?;
                Ok(Block { chol, singular })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nt,
            ns,
            v,
            eigenvalues,
            blocks,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn has_singular_block(&self) -> bool {
        self.blocks.iter().any(|b| b.singular)
    }
}

fn dense(m: &SparseSymMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.n(), m.n());
    for i in 0..m.n() {
        for (j, v) in m.row(i) {
            d[(i, j)] = v;
        }
    }
    d
}

impl Preconditioner for FastDiagonalization {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let (nt, ns) = (self.nt, self.ns);
        // w = (Vᵀ ⊗ I) r
        let mut w = vec![0.0; nt * ns];
        w.par_chunks_mut(ns).enumerate().for_each(|(i, wi)| {
            for j in 0..nt {
                let c = self.v[(j, i)];
                if c != 0.0 {
                    let rj = &r[j * ns..(j + 1) * ns];
                    wi.iter_mut().zip(rj).for_each(|(u, x)| *u += c * x);
                }
            }
            let block = &self.blocks[i];
            if block.singular {
                project_mean_zero(wi);
                wi[0] = 0.0;
                block.chol.solve_in_place(wi);
                project_mean_zero(wi);
            } else {
                block.chol.solve_in_place(wi);
            }
        });
        // z = (V ⊗ I) w
        z.par_chunks_mut(ns).enumerate().for_each(|(j, zj)| {
            zj.iter_mut().for_each(|u| *u = 0.0);
            for i in 0..nt {
                let c = self.v[(j, i)];
                if c != 0.0 {
                    let wi = &w[i * ns..(i + 1) * ns];
                    zj.iter_mut().zip(wi).for_each(|(u, x)| *u += c * x);
                }
            }
        });
    }
}
