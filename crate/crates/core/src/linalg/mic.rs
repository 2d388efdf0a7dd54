//! Modified incomplete Cholesky, MIC(0): zero fill, with fill that the
//! elimination would create outside the sparsity pattern compensated on
//! the diagonal of the affected row (row-sum preservation).

use super::sparse::CsrMatrix;
use crate::{Error, Result};

/// MIC(0) factorization of a symmetric positive definite CSR matrix,
/// stored as unit lower factor plus diagonal (L D L^T form, pattern of A).
pub struct MicPreconditioner {
    n: usize,
    // lower-triangular multipliers in CSR layout restricted to col < row
    low_offsets: Vec<usize>,
    low_cols: Vec<usize>,
    low_vals: Vec<f64>,
    diag: Vec<f64>,
}

impl MicPreconditioner {
    /// Factors `a`, which must be structurally and numerically symmetric.
    /// Fails on a non-positive pivot.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "MIC(0) needs a square matrix");

        // working copy of the full symmetric matrix; pattern is fixed
        let mut work = a.clone();

        // right-looking elimination with drop-to-diagonal compensation
        for k in 0..n {
            let pivot = work.get(k, k);
            if pivot <= 0.0 {
                return Err(Error::Linalg(format!(
                    "MIC(0): non-positive pivot {pivot:.3e} at row {k}"
                )));
            }
            // row k holds the upper entries (j > k); by symmetry the same
            // set are the rows i > k that eliminate against k
            let (kcols, kvals) = work.row(k);
            let upper: Vec<(usize, f64)> = kcols
                .iter()
                .zip(kvals)
                .filter(|(&c, _)| c > k)
                .map(|(&c, &v)| (c, v))
                .collect();

            for &(i, aik) in &upper {
                let m = aik / pivot;
                for &(j, akj) in &upper {
                    let delta = m * akj;
                    if let Some(slot) = Self::find_slot(&work, i, j) {
                        work.values_mut()[slot] -= delta;
                    } else {
                        // fill outside the pattern: push onto the diagonal
                        let dslot = Self::find_slot(&work, i, i)
                            .expect("diagonal entry missing from pattern");
                        work.values_mut()[dslot] -= delta;
                    }
                }
            }
        }

        // extract D and the strictly-lower multipliers L[i][k] = W[i][k]/D[k]
        let mut diag = vec![0.0; n];
        for i in 0..n {
            diag[i] = work.get(i, i);
        }
        let mut low_offsets = vec![0usize; n + 1];
        let mut low_cols = Vec::new();
        let mut low_vals = Vec::new();
        for i in 0..n {
            let (cols, vals) = work.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if c < i {
                    low_cols.push(c);
                    low_vals.push(v / diag[c]);
                }
            }
            low_offsets[i + 1] = low_cols.len();
        }

        Ok(Self {
            n,
            low_offsets,
            low_cols,
            low_vals,
            diag,
        })
    }

    fn find_slot(m: &CsrMatrix, r: usize, c: usize) -> Option<usize> {
        let lo = m.row_offsets()[r];
        let hi = m.row_offsets()[r + 1];
        m.col_indices()[lo..hi]
            .binary_search(&c)
            .ok()
            .map(|k| lo + k)
    }

    /// All pivots of the factorization (positive when `new` succeeded).
    pub fn pivots(&self) -> &[f64] {
        &self.diag
    }

    /// z = (L D L^T)^{-1} r
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        assert_eq!(r.len(), self.n);
        z.copy_from_slice(r);
        // forward: L y = r (unit lower)
        for i in 0..self.n {
            let lo = self.low_offsets[i];
            let hi = self.low_offsets[i + 1];
            let mut acc = z[i];
            for k in lo..hi {
                acc -= self.low_vals[k] * z[self.low_cols[k]];
            }
            z[i] = acc;
        }
        // diagonal
        for i in 0..self.n {
            z[i] /= self.diag[i];
        }
        // backward: L^T x = y, traversed by columns using the lower storage
        for i in (0..self.n).rev() {
            let lo = self.low_offsets[i];
            let hi = self.low_offsets[i + 1];
            let xi = z[i];
            for k in lo..hi {
                z[self.low_cols[k]] -= self.low_vals[k] * xi;
            }
        }
    }
}
