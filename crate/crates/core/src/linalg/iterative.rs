//! Conjugate gradient and BiCGSTAB iterations.
//!
//! BiCGSTAB is matrix-free so it can run on operators whose application
//! embeds further solves (the Schur complement of the augmented system).

use super::mic::MicPreconditioner;
use super::sparse::CsrMatrix;
use crate::{Error, Result};

/// Anything that can apply a square linear map to a vector.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.nrows(), self.ncols());
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
    }
}

/// Iteration count and final relative residual of a converged solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradient for a symmetric positive definite
/// matrix. `x` carries the initial guess in and the solution out.
/// Convergence is declared at relative residual `tol` (measured against
/// the right-hand side norm).
pub fn cg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: Option<&MicPreconditioner>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    assert_eq!(x.len(), n);
    if n == 0 {
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut r = vec![0.0; n];
    a.mul_vec_into(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rnorm = norm(&r);
    if rnorm <= tol * bnorm {
        return Ok(SolveStats {
            iterations: 0,
            residual: rnorm / bnorm,
        });
    }

    let mut z = vec![0.0; n];
    let apply_m = |r: &[f64], z: &mut [f64]| match precond {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    };
    apply_m(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];

    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::Convergence(format!(
                "CG: non-positive curvature p'Ap = {pq:.3e} at iteration {it}"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rnorm = norm(&r);
        if rnorm <= tol * bnorm {
            return Ok(SolveStats {
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        apply_m(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Convergence(format!(
        "CG did not converge in {max_iter} iterations (relative residual {:.3e})",
        rnorm / bnorm
    )))
}

/// BiCGSTAB on a matrix-free operator. `x` carries the initial guess in
/// and the solution out.
pub fn bicgstab(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    if n == 0 {
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rnorm = norm(&r);
    if rnorm <= tol * bnorm {
        return Ok(SolveStats {
            iterations: 0,
            residual: rnorm / bnorm,
        });
    }

    let rhat = r.clone();
    let mut p = r.clone();
    let mut v = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut rho = dot(&rhat, &r);

    for it in 1..=max_iter {
        if rho.abs() < 1e-300 {
            return Err(Error::Convergence(format!(
                "BiCGSTAB breakdown: rho ~ 0 at iteration {it}"
            )));
        }
        op.apply(&p, &mut v);
        let rhat_v = dot(&rhat, &v);
        if rhat_v.abs() < 1e-300 {
            return Err(Error::Convergence(format!(
                "BiCGSTAB breakdown: (rhat, Ap) ~ 0 at iteration {it}"
            )));
        }
        let alpha = rho / rhat_v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = norm(&s);
        if snorm <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(SolveStats {
                iterations: it,
                residual: snorm / bnorm,
            });
        }
        op.apply(&s, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::Convergence(format!(
                "BiCGSTAB breakdown: ||As|| = 0 at iteration {it}"
            )));
        }
        let omega = dot(&t, &s) / tt;
        if omega.abs() < 1e-300 {
            return Err(Error::Convergence(format!(
                "BiCGSTAB stagnation: omega ~ 0 at iteration {it}"
            )));
        }
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        rnorm = norm(&r);
        if rnorm <= tol * bnorm {
            return Ok(SolveStats {
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        let rho_new = dot(&rhat, &r);
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
    }
    Err(Error::Convergence(format!(
        "BiCGSTAB did not converge in {max_iter} iterations (relative residual {:.3e})",
        rnorm / bnorm
    )))
}
