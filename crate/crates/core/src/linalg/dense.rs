//! Dense factorizations used for the small systems in the pipeline:
//! kernel interpolation matrices, RBF-FD stencil systems, Hermite blocks,
//! and the least-squares transfer of surface data.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// LU factorization retained for repeated solves.
pub struct DenseLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    cond_estimate: f64,
    n: usize,
}

impl DenseLu {
    /// Factors a square matrix. Fails when the matrix is singular to
    /// working precision or the estimated condition number exceeds
    /// `cond_limit` (pass `f64::INFINITY` to disable the guard).
    pub fn new(a: DMatrix<f64>, cond_limit: f64) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Linalg(format!(
                "LU expects a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let lu = a.lu();
        // cheap estimate from the U diagonal range
        let mut dmax = 0.0f64;
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            let d = lu.u()[(i, i)].abs();
            dmax = dmax.max(d);
            dmin = dmin.min(d);
        }
        let cond_estimate = if dmin == 0.0 { f64::INFINITY } else { dmax / dmin };
        if !cond_estimate.is_finite() {
            return Err(Error::Linalg(
                "matrix is singular to working precision".into(),
            ));
        }
        if cond_estimate > cond_limit {
            return Err(Error::Linalg(format!(
                "matrix condition estimate {cond_estimate:.3e} exceeds limit {cond_limit:.1e}"
            )));
        }
        Ok(Self {
            lu,
            cond_estimate,
            n,
        })
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu
            .solve(b)
            .ok_or_else(|| Error::Linalg("LU solve failed".into()))
    }

    pub fn solve_slice(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        Ok(self
            .solve(&DVector::from_column_slice(b))?
            .as_slice()
            .to_vec())
    }
}

/// One-shot dense solve with a singularity diagnostic.
pub fn solve_dense(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    DenseLu::new(a, f64::INFINITY)?.solve(b)
}

/// Thin QR factorization of an m x n matrix (m >= n) retained for
/// repeated least-squares solves: x = argmin ||A x - b||_2.
pub struct DenseQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    ncols: usize,
}

impl DenseQr {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let (m, n) = (a.nrows(), a.ncols());
        if m < n {
            return Err(Error::Linalg(format!(
                "least-squares matrix must have nrows >= ncols, got {m}x{n}"
            )));
        }
        let qr = a.qr();
        let q = qr.q();
        let r = qr.r();
        // rank check on the R diagonal
        let mut dmax = 0.0f64;
        for i in 0..n {
            dmax = dmax.max(r[(i, i)].abs());
        }
        for i in 0..n {
            if r[(i, i)].abs() < 1e-13 * dmax.max(1.0) {
                return Err(Error::Linalg(format!(
                    "rank-deficient least-squares matrix (R[{i},{i}] ~ 0)"
                )));
            }
        }
        Ok(Self { q, r, ncols: n })
    }

    /// Minimizes ||A x - b||_2 and returns x.
    pub fn solve_ls(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let qtb = self.q.transpose() * b;
        let mut x = qtb.rows(0, self.ncols).into_owned();
        // back substitution on R
        if !self.r.solve_upper_triangular_mut(&mut x) {
            return Err(Error::Linalg("singular R in least-squares solve".into()));
        }
        Ok(x)
    }

    pub fn solve_ls_slice(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .solve_ls(&DVector::from_column_slice(b))?
            .as_slice()
            .to_vec())
    }
}
