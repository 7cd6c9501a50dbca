use super::sparse::SparseSymMatrix;
use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive definite band matrix, lower band storage.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i-bw..=i]`.
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors `matrix`; with `pin = Some(p)` row and column `p` are replaced by the
    /// identity, which makes a matrix with a one-dimensional nullspace not orthogonal
    /// to `e_p` invertible.
    pub fn factor(matrix: &SparseSymMatrix, pin: Option<usize>) -> Result<Self> {
        let n = matrix.n();
        let bw = matrix.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in matrix.row(i) {
                if j <= i {
                    band[i * w + (j + bw - i)] = v;
                }
            }
        }
        if let Some(p) = pin {
            for i in p..n.min(p + w) {
                band[i * w + (p + bw - i)] = 0.0;
            }
            for j in p.saturating_sub(bw)..p {
                band[p * w + (j + bw - p)] = 0.0;
            }
            band[p * w + bw] = 1.0;
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mlo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for m in mlo..j {
                    s -= band[ri + m] * band[rj + m];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "banded Cholesky: matrix not positive definite at row {i} (pivot {s:e})"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Solves in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let r = i * w + bw - i;
            let mut s = x[i];
            for m in lo..i {
                s -= self.band[r + m] * x[m];
            }
            x[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            x[i] /= self.band[i * w + bw];
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            let r = i * w + bw - i;
            for m in lo..i {
                x[m] -= self.band[r + m] * xi;
            }
        }
    }
}
