//! RBF-FD discretization of surface differential operators on closed
//! curves, and semi-implicit (SBDF) time stepping of the surface
//! chemistry models.
//!
//! The surface gradient is expressed in Cartesian form through the
//! tangent-plane projector `P = I - eta eta^T`; per-site differentiation
//! weights are found by requiring exactness on kernel shifts centered at
//! the stencil sites plus exactness for constants. The surface Laplacian
//! is the composition `L = Gx Gx + Gy Gy`, which doubles the stencil
//! bandwidth but avoids differentiating the normal field.

use crate::geometry::PlateletGeometry;
use crate::kernels::RadialKernel;
use crate::linalg::{solve_dense, CooBuilder, CsrMatrix, DenseLu};
use crate::{Error, Result, Vec2};
use nalgebra::{DMatrix, DVector, Matrix2};

/// Tangent-plane projector `P = I - eta eta^T` for a unit normal.
pub fn projector(normal: Vec2) -> Result<Matrix2<f64>> {
    if (normal.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "projector needs a unit normal, |eta| = {}",
            normal.norm()
        )));
    }
    Ok(Matrix2::identity() - normal * normal.transpose())
}

/// Which component of the projected gradient a weight set approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradComponent {
    X,
    Y,
}

/// Solves the stencil system for the RBF-FD weights of one row: exactness
/// on the `n` Gaussian shifts centered at the stencil sites, plus a
/// sum-to-zero constraint so constants differentiate to zero. The Lagrange
/// multiplier entry of the solution is discarded.
pub fn rbf_fd_weights(
    center_index: usize,
    neighbor_indices: &[usize],
    sites: &[Vec2],
    normals: &[Vec2],
    component: GradComponent,
    eps_fd: f64,
) -> Result<Vec<f64>> {
    let kernel = RadialKernel::gaussian(eps_fd)?;
    let n = neighbor_indices.len() + 1;
    let mut stencil = Vec::with_capacity(n);
    stencil.push(center_index);
    stencil.extend_from_slice(neighbor_indices);

    let center = sites[center_index];
    let proj = projector(normals[center_index])?;
    let p_row = match component {
        GradComponent::X => Vec2::new(proj[(0, 0)], proj[(0, 1)]),
        GradComponent::Y => Vec2::new(proj[(1, 0)], proj[(1, 1)]),
    };

    let mut a = DMatrix::zeros(n + 1, n + 1);
    for (i, &si) in stencil.iter().enumerate() {
        for (j, &sj) in stencil.iter().enumerate() {
            a[(i, j)] = kernel.value_at(sites[si], sites[sj]);
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    for (j, &sj) in stencil.iter().enumerate() {
        rhs[j] = p_row.dot(&kernel.grad_x(center, sites[sj]));
    }

    let sol = solve_dense(a, &rhs)
        .map_err(|e| Error::Linalg(format!("RBF-FD stencil system (coincident sites?): {e}")))?;
    Ok(sol.as_slice()[..n].to_vec())
}

/// Sparse surface differentiation matrices for one platelet.
pub struct SurfaceOperators {
    pub gx: CsrMatrix,
    pub gy: CsrMatrix,
    pub laplacian: CsrMatrix,
    pub stencil_size: usize,
    pub eps_fd: f64,
}

impl SurfaceOperators {
    /// Builds the operators from explicit sample sites and unit normals
    /// (callers choose the RBF-model or analytic source).
    pub fn from_points(
        sites: &[Vec2],
        normals: &[Vec2],
        stencil_size: usize,
        eps_fd: f64,
    ) -> Result<Self> {
        let n_s = sites.len();
        if n_s < stencil_size {
            return Err(Error::InvalidArgument(format!(
                "need at least {stencil_size} sample sites, got {n_s}"
            )));
        }
        let mut gx = CooBuilder::with_capacity(n_s, n_s, n_s * stencil_size);
        let mut gy = CooBuilder::with_capacity(n_s, n_s, n_s * stencil_size);
        for i in 0..n_s {
            let neighbors = nearest_neighbors(sites, i, stencil_size - 1);
            let wx = rbf_fd_weights(i, &neighbors, sites, normals, GradComponent::X, eps_fd)?;
            let wy = rbf_fd_weights(i, &neighbors, sites, normals, GradComponent::Y, eps_fd)?;
            gx.push(i, i, wx[0]);
            gy.push(i, i, wy[0]);
            for (k, &j) in neighbors.iter().enumerate() {
                gx.push(i, j, wx[k + 1]);
                gy.push(i, j, wy[k + 1]);
            }
        }
        let gx = gx.build();
        let gy = gy.build();
        let laplacian = gx.matmul(&gx).add(&gy.matmul(&gy));
        Ok(Self {
            gx,
            gy,
            laplacian,
            stencil_size,
            eps_fd,
        })
    }

    /// Builds the operators from a fitted platelet's sample data.
    pub fn from_geometry(
        geom: &PlateletGeometry,
        stencil_size: usize,
        eps_fd: f64,
    ) -> Result<Self> {
        Self::from_points(
            geom.sample_sites(),
            geom.sample_normals(),
            stencil_size,
            eps_fd,
        )
    }

    pub fn n_sites(&self) -> usize {
        self.gx.nrows()
    }
}

/// Indices of the `k` nearest other sites to `center`, brute force with
/// deterministic index tie-breaking.
fn nearest_neighbors(sites: &[Vec2], center: usize, k: usize) -> Vec<usize> {
    let c = sites[center];
    let mut order: Vec<usize> = (0..sites.len()).filter(|&j| j != center).collect();
    order.sort_by(|&a, &b| {
        let da = (sites[a] - c).norm_squared();
        let db = (sites[b] - c).norm_squared();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Surface chemistry variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceChemistry {
    /// Total binding-site density is a prescribed constant; only the bound
    /// density is evolved and the unbound density is `c_tot - c_bound`.
    ConservedSites { c_tot: f64, d_s: f64 },
    /// Bound and unbound site densities both diffuse and react. The
    /// reaction terms are equal and opposite; setting `variant_koff_unbound`
    /// replaces `+k_off C_b` by `+k_off C_u` in the unbound equation (a
    /// non-conservative variant kept for comparison runs).
    MobileSites {
        d_s_b: f64,
        d_s_u: f64,
        variant_koff_unbound: bool,
    },
}

/// First-order (on)/(off) reaction rates for one platelet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactionRates {
    pub k_on: f64,
    pub k_off: f64,
}

/// Chemical densities at the sample sites, with the previous time level
/// retained for the two-step integrator.
#[derive(Debug, Clone)]
pub struct SurfaceState {
    pub c_bound: Vec<f64>,
    /// Meaningful for `MobileSites`; for `ConservedSites` it is derived.
    pub c_unbound: Vec<f64>,
    prev_bound: Option<Vec<f64>>,
    prev_unbound: Option<Vec<f64>>,
    chemistry: SurfaceChemistry,
}

impl SurfaceState {
    pub fn new_conserved(c_bound: Vec<f64>, c_tot: f64, d_s: f64) -> Self {
        let c_unbound = c_bound.iter().map(|&b| c_tot - b).collect();
        Self {
            c_bound,
            c_unbound,
            prev_bound: None,
            prev_unbound: None,
            chemistry: SurfaceChemistry::ConservedSites { c_tot, d_s },
        }
    }

    pub fn new_two_species(
        c_bound: Vec<f64>,
        c_unbound: Vec<f64>,
        d_s_b: f64,
        d_s_u: f64,
        variant_koff_unbound: bool,
    ) -> Self {
        assert_eq!(c_bound.len(), c_unbound.len());
        Self {
            c_bound,
            c_unbound,
            prev_bound: None,
            prev_unbound: None,
            chemistry: SurfaceChemistry::MobileSites {
                d_s_b,
                d_s_u,
                variant_koff_unbound,
            },
        }
    }

    pub fn chemistry(&self) -> SurfaceChemistry {
        self.chemistry
    }

    pub fn n_sites(&self) -> usize {
        self.c_bound.len()
    }

    pub fn bootstrapped(&self) -> bool {
        self.prev_bound.is_some()
    }

    /// Unbound density consistent with the chemistry variant.
    pub fn unbound(&self) -> Vec<f64> {
        match self.chemistry {
            SurfaceChemistry::ConservedSites { c_tot, .. } => {
                self.c_bound.iter().map(|&b| c_tot - b).collect()
            }
            SurfaceChemistry::MobileSites { .. } => self.c_unbound.clone(),
        }
    }
}

/// Time integrator for one platelet's surface chemistry: a two-step
/// semi-implicit BDF treating diffusion implicitly and reactions
/// explicitly, bootstrapped by one semi-implicit Euler step. The implicit
/// matrices are factored once and reused.
pub struct SurfaceStepper {
    rates: ReactionRates,
    dt: f64,
    chemistry: SurfaceChemistry,
    laplacian: CsrMatrix,
    sbdf2_bound: DenseLu,
    sbdf2_unbound: Option<DenseLu>,
    sbdf1_bound: DenseLu,
    sbdf1_unbound: Option<DenseLu>,
}

fn implicit_factor(laplacian: &CsrMatrix, coeff: f64) -> Result<DenseLu> {
    let n = laplacian.nrows();
    let mut m = laplacian.to_dense();
    m *= -coeff;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    DenseLu::new(m, f64::INFINITY)
        .map_err(|e| Error::Linalg(format!("surface implicit matrix: {e}")))
}

impl SurfaceStepper {
    pub fn new(
        ops: &SurfaceOperators,
        chemistry: SurfaceChemistry,
        rates: ReactionRates,
        dt: f64,
    ) -> Result<Self> {
        let lap = &ops.laplacian;
        let (sbdf2_bound, sbdf2_unbound, sbdf1_bound, sbdf1_unbound) = match chemistry {
            SurfaceChemistry::ConservedSites { d_s, .. } => (
                implicit_factor(lap, (2.0 / 3.0) * dt * d_s)?,
                None,
                implicit_factor(lap, dt * d_s)?,
                None,
            ),
            SurfaceChemistry::MobileSites { d_s_b, d_s_u, .. } => (
                implicit_factor(lap, (2.0 / 3.0) * dt * d_s_b)?,
                Some(implicit_factor(lap, (2.0 / 3.0) * dt * d_s_u)?),
                implicit_factor(lap, dt * d_s_b)?,
                Some(implicit_factor(lap, dt * d_s_u)?),
            ),
        };
        Ok(Self {
            rates,
            dt,
            chemistry,
            laplacian: ops.laplacian.clone(),
            sbdf2_bound,
            sbdf2_unbound,
            sbdf1_bound,
            sbdf1_unbound,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Reaction term of the bound-density equation at one site.
    fn reaction_bound(&self, c_b: f64, c_u: f64, cf: f64) -> f64 {
        self.rates.k_on * c_u * cf - self.rates.k_off * c_b
    }

    /// One semi-implicit Euler step (implicit diffusion, explicit
    /// reaction) to create the second time level.
    pub fn bootstrap(&self, state: &mut SurfaceState, cf: &[f64]) -> Result<()> {
        let n = state.n_sites();
        assert_eq!(cf.len(), n);
        match self.chemistry {
            SurfaceChemistry::ConservedSites { c_tot, .. } => {
                let mut rhs = vec![0.0; n];
                for i in 0..n {
                    let f =
                        self.reaction_bound(state.c_bound[i], c_tot - state.c_bound[i], cf[i]);
                    rhs[i] = state.c_bound[i] + self.dt * f;
                }
                let new_bound = self.sbdf1_bound.solve_slice(&rhs)?;
                state.prev_bound = Some(std::mem::replace(&mut state.c_bound, new_bound));
                state.c_unbound = state.c_bound.iter().map(|&b| c_tot - b).collect();
            }
            SurfaceChemistry::MobileSites {
                variant_koff_unbound,
                ..
            } => {
                let mut rhs_b = vec![0.0; n];
                let mut rhs_u = vec![0.0; n];
                for i in 0..n {
                    let f = self.reaction_bound(state.c_bound[i], state.c_unbound[i], cf[i]);
                    let f_u = if variant_koff_unbound {
                        -self.rates.k_on * state.c_unbound[i] * cf[i]
                            + self.rates.k_off * state.c_unbound[i]
                    } else {
                        -f
                    };
                    rhs_b[i] = state.c_bound[i] + self.dt * f;
                    rhs_u[i] = state.c_unbound[i] + self.dt * f_u;
                }
                let new_bound = self.sbdf1_bound.solve_slice(&rhs_b)?;
                let new_unbound = self
                    .sbdf1_unbound
                    .as_ref()
                    .expect("two-species factorization")
                    .solve_slice(&rhs_u)?;
                state.prev_bound = Some(std::mem::replace(&mut state.c_bound, new_bound));
                state.prev_unbound = Some(std::mem::replace(&mut state.c_unbound, new_unbound));
            }
        }
        Ok(())
    }

    /// One two-step semi-implicit BDF step. Requires two existing levels
    /// and the fluid concentrations at both (`cf_now` at the current
    /// level, `cf_prev` at the previous one).
    pub fn step(&self, state: &mut SurfaceState, cf_now: &[f64], cf_prev: &[f64]) -> Result<()> {
        let n = state.n_sites();
        assert_eq!(cf_now.len(), n);
        assert_eq!(cf_prev.len(), n);
        if !state.bootstrapped() {
            return Err(Error::InvalidArgument(
                "surface step requires a bootstrapped state (two time levels)".into(),
            ));
        }

        match self.chemistry {
            SurfaceChemistry::ConservedSites { c_tot, .. } => {
                let prev = state.prev_bound.as_ref().unwrap();
                let mut rhs = vec![0.0; n];
                for i in 0..n {
                    let f_now =
                        self.reaction_bound(state.c_bound[i], c_tot - state.c_bound[i], cf_now[i]);
                    let f_prev = self.reaction_bound(prev[i], c_tot - prev[i], cf_prev[i]);
                    rhs[i] = (4.0 / 3.0) * (state.c_bound[i] + self.dt * f_now)
                        - (1.0 / 3.0) * (prev[i] + 2.0 * self.dt * f_prev);
                }
                let new_bound = self.sbdf2_bound.solve_slice(&rhs)?;
                state.prev_bound = Some(std::mem::replace(&mut state.c_bound, new_bound));
                state.c_unbound = state.c_bound.iter().map(|&b| c_tot - b).collect();
            }
            SurfaceChemistry::MobileSites {
                variant_koff_unbound,
                ..
            } => {
                let prev_b = state.prev_bound.as_ref().unwrap();
                let prev_u = state.prev_unbound.as_ref().unwrap();
                let mut rhs_b = vec![0.0; n];
                let mut rhs_u = vec![0.0; n];
                for i in 0..n {
                    let f_now =
                        self.reaction_bound(state.c_bound[i], state.c_unbound[i], cf_now[i]);
                    let f_prev = self.reaction_bound(prev_b[i], prev_u[i], cf_prev[i]);
                    let (fu_now, fu_prev) = if variant_koff_unbound {
                        (
                            -self.rates.k_on * state.c_unbound[i] * cf_now[i]
                                + self.rates.k_off * state.c_unbound[i],
                            -self.rates.k_on * prev_u[i] * cf_prev[i]
                                + self.rates.k_off * prev_u[i],
                        )
                    } else {
                        (-f_now, -f_prev)
                    };
                    rhs_b[i] = (4.0 / 3.0) * (state.c_bound[i] + self.dt * f_now)
                        - (1.0 / 3.0) * (prev_b[i] + 2.0 * self.dt * f_prev);
                    rhs_u[i] = (4.0 / 3.0) * (state.c_unbound[i] + self.dt * fu_now)
                        - (1.0 / 3.0) * (prev_u[i] + 2.0 * self.dt * fu_prev);
                }
                let new_bound = self.sbdf2_bound.solve_slice(&rhs_b)?;
                let new_unbound = self
                    .sbdf2_unbound
                    .as_ref()
                    .expect("two-species factorization")
                    .solve_slice(&rhs_u)?;
                state.prev_bound = Some(std::mem::replace(&mut state.c_bound, new_bound));
                state.prev_unbound = Some(std::mem::replace(&mut state.c_unbound, new_unbound));
            }
        }
        Ok(())
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }
}
