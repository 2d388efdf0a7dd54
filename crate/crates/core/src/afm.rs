//! Augmented forcing solver for the bulk diffusion equation: a
//! Crank-Nicolson discretization over all grid points, augmented with
//! per-forcing-point unknowns whose rows enforce Robin boundary data
//! through symmetric Hermite RBF interpolants.
//!
//! The block system
//!
//! ```text
//!   [ A  P ] [ c ]   [ r    ]
//!   [ E  0 ] [ F ] = [ r_bc ]
//! ```
//!
//! is solved in two stages: the Schur complement `-E A^{-1} P F =
//! r_bc - E A^{-1} r` for the forcing values, then `A c = r - P F`.
//! The Schur stage either runs matrix-free BiCGSTAB (each operator
//! application performs one inner A-solve) or assembles the small dense
//! Schur matrix from precomputed `A^{-1} P` columns, which costs a batch
//! of inner solves once and then amortizes over the time loop.

use crate::grid::{GridModel, PointClass, SideBc};
use crate::kernels::{
    robin_apply_to_kernel, robin_robin_apply_to_kernel, RadialKernel, RobinOperatorSpec,
};
use crate::linalg::{bicgstab, cg, CooBuilder, CsrMatrix, DenseLu, LinearOperator, MicPreconditioner};
use crate::{Error, Result, Vec2};
use nalgebra::{DMatrix, DVector};

/// Scalar field of space and time.
pub type SpaceTimeFn<'a> = &'a (dyn Fn(Vec2, f64) -> f64 + Sync);
/// Vector field of space and time.
pub type SpaceTimeGrad<'a> = &'a (dyn Fn(Vec2, f64) -> Vec2 + Sync);

/// Data for the outer rectangle sides.
pub enum BoundaryData<'a> {
    /// Zero Dirichlet values / zero Neumann flux.
    Homogeneous,
    /// Values and gradients of a known field supply Dirichlet values and
    /// Neumann fluxes.
    Exact {
        value: SpaceTimeFn<'a>,
        gradient: SpaceTimeGrad<'a>,
    },
}

/// Time discretization of the bulk diffusion equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeScheme {
    /// Trapezoidal rule. Not L-stable: combined with the sharp boundary
    /// closure its undamped stiff modes go unstable once `dt D / h^2`
    /// grows past order one, which the halving refinement protocol
    /// reaches on fine grids.
    CrankNicolson,
    /// Two-step BDF bootstrapped by one backward Euler step. L-stable,
    /// second order; the implicit-only diffusion removes the feedback
    /// channel between the boundary closure and the explicit half.
    #[default]
    Bdf2,
}

/// Implicit bulk operator on the full grid. Neumann boundary rows are
/// mirrored and scaled by 1/2 (1/4 at corners) so the operator stays
/// symmetric; Dirichlet rows are identity rows.
pub struct BulkOperator {
    /// Main implicit matrix (trapezoidal or two-step BDF coefficient).
    pub a: CsrMatrix,
    /// Explicit half of the trapezoidal scheme.
    b: Option<CsrMatrix>,
    /// Backward-Euler startup matrix of the two-step scheme.
    a_startup: Option<CsrMatrix>,
    scheme: TimeScheme,
    diffusion: f64,
    dt: f64,
    symmetric: bool,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    bc_left: SideBc,
    bc_right: SideBc,
    bc_bottom: SideBc,
    bc_top: SideBc,
    row_weight: Vec<f64>,
}

/// Assembles `W (I - gamma D lap)` over the grid, with Dirichlet rows as
/// identity and Neumann rows mirrored; when `explicit_half` is set, also
/// returns `W (I + gamma D lap)` with couplings between fluid and covered
/// points kept implicit (see `TimeScheme::CrankNicolson`).
fn assemble_implicit(
    grid: &GridModel,
    diffusion: f64,
    gamma: f64,
    explicit_half: bool,
) -> (CsrMatrix, Option<CsrMatrix>, Vec<f64>, bool) {
    let bc = grid.outer_bc();
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx, hy) = (grid.hx(), grid.hy());
    let n = nx * ny;
    let ax = gamma * diffusion / (hx * hx);
    let ay = gamma * diffusion / (hy * hy);

    let mut a = CooBuilder::with_capacity(n, n, 5 * n);
    let mut b = CooBuilder::with_capacity(n, n, 5 * n);
    let mut row_weight = vec![1.0; n];
    let mut symmetric = true;

    for j in 0..ny {
        for i in 0..nx {
                let row = grid.index(i, j);

                let x_low = !bc.x_periodic() && i == 0;
                let x_high = !bc.x_periodic() && i + 1 == nx;
                let y_low = !bc.y_periodic() && j == 0;
                let y_high = !bc.y_periodic() && j + 1 == ny;

                let dirichlet = (x_low && bc.left == SideBc::Dirichlet)
                    || (x_high && bc.right == SideBc::Dirichlet)
                    || (y_low && bc.bottom == SideBc::Dirichlet)
                    || (y_high && bc.top == SideBc::Dirichlet);
                if dirichlet {
                    a.push(row, row, 1.0);
                    // B row left empty: the Dirichlet value is written
                    // directly into the right-hand side
                    symmetric = false;
                    continue;
                }

                // mirrored-ghost Neumann stencil with row scaling
                let mut w = 1.0;
                if x_low || x_high {
                    w *= 0.5;
                }
                if y_low || y_high {
                    w *= 0.5;
                }
                row_weight[row] = w;

                let mut diag_a = w;
                let mut diag_b = w;
                let this_class = grid.class(row);
                // In the trapezoidal scheme, couplings between fluid and
                // covered points are kept fully implicit: enforced
                // covered-point values feeding back through the explicit
                // half destabilize fine grids. The doubling stays
                // symmetric. Without an explicit half every coupling is
                // implicit with weight `coef` as assembled.
                let mut push_pair = |col: usize,
                                     coef: f64,
                                     diag_a: &mut f64,
                                     diag_b: &mut f64,
                                     a: &mut CooBuilder,
                                     b: &mut CooBuilder| {
                    let cross = explicit_half
                        && (this_class == PointClass::Fluid)
                            != (grid.class(col) == PointClass::Fluid);
                    if cross {
                        a.push(row, col, -w * 2.0 * coef);
                        *diag_a += w * 2.0 * coef;
                    } else {
                        a.push(row, col, -w * coef);
                        *diag_a += w * coef;
                        if explicit_half {
                            b.push(row, col, w * coef);
                            *diag_b -= w * coef;
                        }
                    }
                };

                // x couplings
                if bc.x_periodic() {
                    let east = grid.neighbor_index(i, j, 1, 0).unwrap();
                    let west = grid.neighbor_index(i, j, -1, 0).unwrap();
                    push_pair(east, ax, &mut diag_a, &mut diag_b, &mut a, &mut b);
                    push_pair(west, ax, &mut diag_a, &mut diag_b, &mut a, &mut b);
                } else if x_low {
                    let east = grid.index(i + 1, j);
                    push_pair(east, 2.0 * ax, &mut diag_a, &mut diag_b, &mut a, &mut b);
                } else if x_high {
                    let west = grid.index(i - 1, j);
                    push_pair(west, 2.0 * ax, &mut diag_a, &mut diag_b, &mut a, &mut b);
                } else {
                    push_pair(grid.index(i + 1, j), ax, &mut diag_a, &mut diag_b, &mut a, &mut b);
                    push_pair(grid.index(i - 1, j), ax, &mut diag_a, &mut diag_b, &mut a, &mut b);
                }

                // y couplings
                if bc.y_periodic() {
                    let north = grid.neighbor_index(i, j, 0, 1).unwrap();
                    let south = grid.neighbor_index(i, j, 0, -1).unwrap();
                    push_pair(north, ay, &mut diag_a, &mut diag_b, &mut a, &mut b);
                    push_pair(south, ay, &mut diag_a, &mut diag_b, &mut a, &mut b);
                } else if y_low {
                    push_pair(grid.index(i, j + 1), 2.0 * ay, &mut diag_a, &mut diag_b, &mut a, &mut b);
                } else if y_high {
                    push_pair(grid.index(i, j - 1), 2.0 * ay, &mut diag_a, &mut diag_b, &mut a, &mut b);
                } else {
                    push_pair(grid.index(i, j + 1), ay, &mut diag_a, &mut diag_b, &mut a, &mut b);
                    push_pair(grid.index(i, j - 1), ay, &mut diag_a, &mut diag_b, &mut a, &mut b);
                }

                a.push(row, row, diag_a);
                if explicit_half {
                    b.push(row, row, diag_b);
                }
        }
    }

    let b = if explicit_half { Some(b.build()) } else { None };
    (a.build(), b, row_weight, symmetric)
}

impl BulkOperator {
    pub fn new(grid: &GridModel, diffusion: f64, dt: f64, scheme: TimeScheme) -> Result<Self> {
        let bc = grid.outer_bc();
        bc.validate()?;
        let (a, b, a_startup, row_weight, symmetric) = match scheme {
            TimeScheme::CrankNicolson => {
                let (a, b, w, sym) = assemble_implicit(grid, diffusion, 0.5 * dt, true);
                (a, b, None, w, sym)
            }
            TimeScheme::Bdf2 => {
                let (a, _, w, sym) = assemble_implicit(grid, diffusion, (2.0 / 3.0) * dt, false);
                let (a_startup, _, _, _) = assemble_implicit(grid, diffusion, dt, false);
                (a, None, Some(a_startup), w, sym)
            }
        };
        Ok(Self {
            a,
            b,
            a_startup,
            scheme,
            diffusion,
            dt,
            symmetric,
            nx: grid.nx(),
            ny: grid.ny(),
            hx: grid.hx(),
            hy: grid.hy(),
            bc_left: bc.left,
            bc_right: bc.right,
            bc_bottom: bc.bottom,
            bc_top: bc.top,
            row_weight,
        })
    }

    pub fn scheme(&self) -> TimeScheme {
        self.scheme
    }

    pub fn startup_matrix(&self) -> Option<&CsrMatrix> {
        self.a_startup.as_ref()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    fn point(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(i as f64 * self.hx, j as f64 * self.hy)
    }

    /// Right-hand side for the step from `t_n` to `t_n + dt`.
    ///
    /// Trapezoidal: `B c^n + dt w s(t_{n+1/2})` plus time-averaged
    /// boundary data. Two-step BDF: `w (4 c^n - c^{n-1}) / 3 +
    /// (2/3) dt w s(t_{n+1})` plus implicit-time boundary data; when no
    /// previous level exists the startup form `w c^n + dt w s(t_{n+1})`
    /// pairs with the startup matrix.
    pub fn rhs(
        &self,
        c_prev: &[f64],
        c_prev2: Option<&[f64]>,
        t_n: f64,
        source: Option<SpaceTimeFn>,
        bdata: &BoundaryData,
    ) -> Vec<f64> {
        let n = self.nx * self.ny;
        assert_eq!(c_prev.len(), n);
        let t_next = t_n + self.dt;

        // time-integrated weights of the source and boundary data
        let (mut r, s_weight, s_time, flux_weight) = match (self.scheme, c_prev2) {
            (TimeScheme::CrankNicolson, _) => {
                let r = self
                    .b
                    .as_ref()
                    .expect("trapezoidal explicit half")
                    .mul_vec(c_prev);
                // the averaged flux datum enters with the full dt D weight
                (r, self.dt, t_n + 0.5 * self.dt, self.dt * self.diffusion)
            }
            (TimeScheme::Bdf2, Some(older)) => {
                assert_eq!(older.len(), n);
                let r: Vec<f64> = (0..n)
                    .map(|k| self.row_weight[k] * (4.0 * c_prev[k] - older[k]) / 3.0)
                    .collect();
                (
                    r,
                    (2.0 / 3.0) * self.dt,
                    t_next,
                    (2.0 / 3.0) * self.dt * self.diffusion,
                )
            }
            (TimeScheme::Bdf2, None) => {
                let r: Vec<f64> = (0..n).map(|k| self.row_weight[k] * c_prev[k]).collect();
                (r, self.dt, t_next, self.dt * self.diffusion)
            }
        };

        if let Some(s) = source {
            for j in 0..self.ny {
                for i in 0..self.nx {
                    let row = i + j * self.nx;
                    r[row] += s_weight * self.row_weight[row] * s(self.point(i, j), s_time);
                }
            }
        }

        // outer boundary rows
        let x_periodic = self.bc_left == SideBc::Periodic;
        let y_periodic = self.bc_bottom == SideBc::Periodic;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let x_low = !x_periodic && i == 0;
                let x_high = !x_periodic && i + 1 == self.nx;
                let y_low = !y_periodic && j == 0;
                let y_high = !y_periodic && j + 1 == self.ny;
                if !(x_low || x_high || y_low || y_high) {
                    continue;
                }
                let row = i + j * self.nx;
                let p = self.point(i, j);

                let dirichlet = (x_low && self.bc_left == SideBc::Dirichlet)
                    || (x_high && self.bc_right == SideBc::Dirichlet)
                    || (y_low && self.bc_bottom == SideBc::Dirichlet)
                    || (y_high && self.bc_top == SideBc::Dirichlet);
                if dirichlet {
                    r[row] = match bdata {
                        BoundaryData::Homogeneous => 0.0,
                        BoundaryData::Exact { value, .. } => value(p, t_next),
                    };
                    continue;
                }

                // inhomogeneous Neumann flux terms (zero for Homogeneous)
                if let BoundaryData::Exact { gradient, .. } = bdata {
                    let w = self.row_weight[row];
                    let mut add_flux = |sign: f64, h: f64, comp: usize| {
                        // trapezoidal data averages the two levels
                        let g = match self.scheme {
                            TimeScheme::CrankNicolson => {
                                0.5 * (gradient(p, t_next)[comp] + gradient(p, t_n)[comp])
                            }
                            TimeScheme::Bdf2 => gradient(p, t_next)[comp],
                        };
                        r[row] += w * flux_weight * sign * 2.0 * g / h;
                    };
                    if x_low && self.bc_left == SideBc::Neumann {
                        add_flux(-1.0, self.hx, 0);
                    }
                    if x_high && self.bc_right == SideBc::Neumann {
                        add_flux(1.0, self.hx, 0);
                    }
                    if y_low && self.bc_bottom == SideBc::Neumann {
                        add_flux(-1.0, self.hy, 1);
                    }
                    if y_high && self.bc_top == SideBc::Neumann {
                        add_flux(1.0, self.hy, 1);
                    }
                }
            }
        }
        r
    }
}

/// Geometry of one Hermite boundary-enforcement stencil: the forcing
/// point, its three nearby fluid points, and three boundary points.
#[derive(Debug, Clone)]
pub struct HermiteStencil {
    pub forcing_index: usize,
    pub forcing_point: Vec2,
    pub platelet_id: usize,
    pub fluid_indices: [usize; 3],
    pub fluid_points: [Vec2; 3],
    /// Indices into the grid's forcing-record list for points a, b, c
    /// (a is the stencil's own record).
    pub boundary_records: [usize; 3],
    pub boundary_points: [Vec2; 3],
    pub boundary_normals: [Vec2; 3],
}

/// Picks the stencil for one forcing record: its own boundary point, the
/// two nearest other boundary points of the same platelet, and three
/// nearby fluid grid points (all within 3h of the boundary point; the
/// triple is chosen to keep the enforcement weights small).
pub fn select_stencil(
    record_index: usize,
    grid: &GridModel,
    kernel: &RadialKernel,
    diffusion: f64,
) -> Result<HermiteStencil> {
    let records = grid.forcing_records();
    let rec = &records[record_index];
    let p_a = rec.boundary_point;

    // two nearest other boundary points of the same platelet, subject to
    // a minimum separation: nearly coincident Robin rows leave the local
    // interpolation problem transversally underdetermined and blow up the
    // enforcement weights
    let mut others: Vec<usize> = (0..records.len())
        .filter(|&k| k != record_index && records[k].platelet_id == rec.platelet_id)
        .collect();
    if others.len() < 2 {
        return Err(Error::Grid(format!(
            "platelet {} has fewer than 3 boundary points; cannot build a Hermite stencil",
            rec.platelet_id
        )));
    }
    others.sort_by(|&a, &b| {
        let da = (records[a].boundary_point - p_a).norm_squared();
        let db = (records[b].boundary_point - p_a).norm_squared();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let min_sep = 1.5 * grid.hx().max(grid.hy());
    let mut picked: Vec<usize> = Vec::with_capacity(2);
    for &k in &others {
        let pk = records[k].boundary_point;
        if (pk - p_a).norm() < min_sep {
            continue;
        }
        if picked
            .iter()
            .any(|&m| (records[m].boundary_point - pk).norm() < min_sep)
        {
            continue;
        }
        picked.push(k);
        if picked.len() == 2 {
            break;
        }
    }
    // fall back to the plain nearest pair when the platelet is too small
    // for separated picks
    while picked.len() < 2 {
        for &k in &others {
            if !picked.contains(&k) {
                picked.push(k);
                break;
            }
        }
    }
    let (rb, rc) = (picked[0], picked[1]);

    // three fluid points adjacent to the forcing point, preferring the
    // ones closest to the boundary point. Points neighboring B keep the
    // interpolation weights at B non-extrapolative, which the stability
    // of the time loop depends on; candidates from the surrounding ring
    // only fill in when the 8-neighborhood has too few fluid points.
    let h = grid.hx().max(grid.hy());
    let radius = 3.0 * h;
    let (bi, bj) = grid.ij(rec.grid_index);
    let (bi, bj) = (bi as i64, bj as i64);
    let mut candidates: Vec<(i64, f64, usize)> = Vec::new(); // (ring, dist to p_a, idx)
    let span = 2i64;
    for dj in -span..=span {
        for di in -span..=span {
            if di == 0 && dj == 0 {
                continue;
            }
            let (i, j) = (bi + di, bj + dj);
            if j < 0 || j >= grid.ny() as i64 {
                continue;
            }
            let i = if grid.outer_bc().x_periodic() {
                i.rem_euclid(grid.nx() as i64)
            } else if i < 0 || i >= grid.nx() as i64 {
                continue;
            } else {
                i
            };
            let idx = grid.index(i as usize, j as usize);
            if grid.class(idx) != PointClass::Fluid {
                continue;
            }
            let d = (grid.point_at(idx) - p_a).norm();
            if d <= radius {
                let ring = di.abs().max(dj.abs());
                candidates.push((ring, d, idx));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.partial_cmp(&b.1).unwrap())
            .then(a.2.cmp(&b.2))
    });
    candidates.dedup_by_key(|c| c.2);
    if candidates.len() < 3 {
        let (i, j) = grid.ij(rec.grid_index);
        return Err(Error::Grid(format!(
            "forcing point ({i}, {j}): fewer than 3 fluid points within 3h of its boundary point"
        )));
    }
    candidates.truncate(8);

    let make = |fluid_indices: [usize; 3]| HermiteStencil {
        forcing_index: rec.grid_index,
        forcing_point: grid.point_at(rec.grid_index),
        platelet_id: rec.platelet_id,
        fluid_indices,
        fluid_points: [
            grid.point_at(fluid_indices[0]),
            grid.point_at(fluid_indices[1]),
            grid.point_at(fluid_indices[2]),
        ],
        boundary_records: [record_index, rb, rc],
        boundary_points: [
            p_a,
            records[rb].boundary_point,
            records[rc].boundary_point,
        ],
        boundary_normals: [rec.normal, records[rb].normal, records[rc].normal],
    };

    // among the candidate triples, keep the one whose enforcement row has
    // the smallest fluid-weight magnitude: those weights feed the solved
    // forcing value back into the explicit half of the next step, so their
    // size governs the stability of the time loop. The score uses the
    // Neumann part of the operator only, keeping the selection a pure
    // geometry property.
    let mut best: Option<(f64, [usize; 3])> = None;
    for a in 0..candidates.len() {
        for b in (a + 1)..candidates.len() {
            for c in (b + 1)..candidates.len() {
                let triple = [candidates[a].2, candidates[b].2, candidates[c].2];
                let stencil = make(triple);
                let Ok(row) = build_hermite_row(&stencil, kernel, diffusion, [0.0; 3]) else {
                    continue;
                };
                let score: f64 = row.entries.iter().skip(1).map(|&(_, w)| w.abs()).sum();
                if best.map_or(true, |(s, _)| score < s) {
                    best = Some((score, triple));
                }
            }
        }
    }
    let Some((_, fluid_indices)) = best else {
        let (i, j) = grid.ij(rec.grid_index);
        return Err(Error::Grid(format!(
            "forcing point ({i}, {j}): no usable fluid-point triple near its boundary point"
        )));
    };
    Ok(make(fluid_indices))
}

/// Output of one Hermite row build: the four enforcement-row entries and
/// the interpolation weights for the boundary data.
#[derive(Debug, Clone)]
pub struct HermiteRow {
    /// (grid column, weight): the forcing point carries -1, the three
    /// fluid points carry -q1..-q3.
    pub entries: [(usize, f64); 4],
    /// Weights q4..q6 applied (negated) to the boundary data d_a..d_c.
    pub data_weights: [f64; 3],
}

impl HermiteRow {
    pub fn rhs_entry(&self, d: [f64; 3]) -> f64 {
        -self.data_weights[0] * d[0] - self.data_weights[1] * d[1] - self.data_weights[2] * d[2]
    }
}

/// Quadratic monomial basis shifted to the forcing point and scaled by
/// the stencil radius, and its gradient. Orders: 1, u, v, u^2, uv, v^2.
fn monomials(p: Vec2, origin: Vec2, scale: f64) -> [f64; 6] {
    let u = (p.x - origin.x) / scale;
    let v = (p.y - origin.y) / scale;
    [1.0, u, v, u * u, u * v, v * v]
}

fn monomial_gradients(p: Vec2, origin: Vec2, scale: f64) -> [Vec2; 6] {
    let u = (p.x - origin.x) / scale;
    let v = (p.y - origin.y) / scale;
    [
        Vec2::zeros(),
        Vec2::new(1.0 / scale, 0.0),
        Vec2::new(0.0, 1.0 / scale),
        Vec2::new(2.0 * u / scale, 0.0),
        Vec2::new(v / scale, u / scale),
        Vec2::new(0.0, 2.0 * v / scale),
    ]
}

/// Largest acceptable sum of fluid-point weights in one enforcement row.
/// The solved forcing value feeds back into the next implicit solve, so
/// rows with large weights destabilize the time loop on fine grids;
/// degenerate stencils fall back to the constant-reproducing form.
const ROW_WEIGHT_CAP: f64 = 6.0;

/// Polynomial space adjoined to the kernel part of one Hermite system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Augmentation {
    /// Constants only: the minimal space for the conditionally positive
    /// definite multiquadric; robust on degenerate stencils.
    Constant,
    /// Full quadratics: reproduces second-degree fields exactly, which
    /// makes the per-row defect third order and the accumulated boundary
    /// flux second order.
    Quadratic,
}

/// Assembles the symmetric Hermite system for one stencil and extracts
/// the enforcement-row weights. `robin_coeffs` are the zeroth-order
/// coefficients of the Robin operator at the three boundary points.
///
/// The collocation system is augmented with the full quadratic polynomial
/// space under matching moment conditions. With six data functionals the
/// generic interpolant reproduces quadratics exactly; configurations
/// where the quadratic problem degenerates (detected through oversized
/// enforcement weights) rebuild with the constant-only augmentation. The
/// monomials are shifted to the forcing point and scaled by the stencil
/// radius, so the system stays well conditioned on fine grids.
pub fn build_hermite_row(
    stencil: &HermiteStencil,
    kernel: &RadialKernel,
    diffusion: f64,
    robin_coeffs: [f64; 3],
) -> Result<HermiteRow> {
    let row = build_hermite_row_augmented(
        stencil,
        kernel,
        diffusion,
        robin_coeffs,
        Augmentation::Quadratic,
    )?;
    let weight_sum: f64 = row.entries.iter().skip(1).map(|&(_, w)| w.abs()).sum();
    if weight_sum <= ROW_WEIGHT_CAP {
        return Ok(row);
    }
    build_hermite_row_augmented(
        stencil,
        kernel,
        diffusion,
        robin_coeffs,
        Augmentation::Constant,
    )
}

fn build_hermite_row_augmented(
    stencil: &HermiteStencil,
    kernel: &RadialKernel,
    diffusion: f64,
    robin_coeffs: [f64; 3],
    augmentation: Augmentation,
) -> Result<HermiteRow> {
    let n_poly = match augmentation {
        Augmentation::Constant => 1,
        Augmentation::Quadratic => 6,
    };
    let ops: [RobinOperatorSpec; 3] = std::array::from_fn(|i| {
        RobinOperatorSpec::new(
            diffusion,
            robin_coeffs[i],
            stencil.boundary_normals[i],
            stencil.boundary_points[i],
        )
        .expect("grid supplies unit normals")
    });

    let origin = stencil.forcing_point;
    let scale = stencil
        .fluid_points
        .iter()
        .chain(stencil.boundary_points.iter())
        .map(|p| (p - origin).norm())
        .fold(0.0f64, f64::max)
        .max(1e-300);

    let mut v = DMatrix::zeros(12, 12);
    for i in 0..3 {
        for j in 0..3 {
            v[(i, j)] = kernel.value_at(stencil.fluid_points[i], stencil.fluid_points[j]);
        }
        for k in 0..3 {
            let r_ik = robin_apply_to_kernel(
                &ops[k],
                kernel,
                stencil.fluid_points[i],
                stencil.boundary_points[k],
            );
            v[(i, 3 + k)] = r_ik;
            v[(3 + k, i)] = r_ik;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            v[(3 + i, 3 + j)] = robin_robin_apply_to_kernel(&ops[i], &ops[j], kernel);
        }
    }
    // polynomial block: value rows see the monomials, Robin rows see the
    // operator applied to them
    for i in 0..3 {
        let m = monomials(stencil.fluid_points[i], origin, scale);
        for k in 0..n_poly {
            v[(i, 6 + k)] = m[k];
            v[(6 + k, i)] = m[k];
        }
        let mb = monomials(stencil.boundary_points[i], origin, scale);
        let gb = monomial_gradients(stencil.boundary_points[i], origin, scale);
        for k in 0..n_poly {
            let dm = -diffusion * gb[k].dot(&stencil.boundary_normals[i]) - robin_coeffs[i] * mb[k];
            v[(3 + i, 6 + k)] = dm;
            v[(6 + k, 3 + i)] = dm;
        }
    }
    let v = v.view((0, 0), (6 + n_poly, 6 + n_poly)).into_owned();

    let mut s = DVector::zeros(6 + n_poly);
    for i in 0..3 {
        s[i] = kernel.value_at(stencil.forcing_point, stencil.fluid_points[i]);
        s[3 + i] = robin_apply_to_kernel(
            &ops[i],
            kernel,
            stencil.forcing_point,
            stencil.boundary_points[i],
        );
    }
    // monomials at the forcing point: the basis is centered there
    s[6] = 1.0;

    // q = S V^{-1}; V is symmetric so solve V q^T = S^T. The trailing
    // entries multiply the zero moments of the data and are discarded.
    let lu = DenseLu::new(v, 1e16).map_err(|e| {
        Error::Linalg(format!(
            "Hermite system for forcing index {} (coincident stencil points?): {e}",
            stencil.forcing_index
        ))
    })?;
    let q = lu.solve(&s)?;

    // enforce c_B = q1 c1 + q2 c2 + q3 c3 + q4 d_a + q5 d_b + q6 d_c as
    // the row (q1 c1 + q2 c2 + q3 c3 - c_B) = -(q4 d_a + q5 d_b + q6 d_c)
    Ok(HermiteRow {
        entries: [
            (stencil.forcing_index, -1.0),
            (stencil.fluid_indices[0], q[0]),
            (stencil.fluid_indices[1], q[1]),
            (stencil.fluid_indices[2], q[2]),
        ],
        data_weights: [q[3], q[4], q[5]],
    })
}

/// How the Schur stage finds the forcing values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchurStrategy {
    /// BiCGSTAB on the Schur operator; every application performs one
    /// inner A-solve.
    MatrixFree,
    /// Assemble the dense Schur matrix from precomputed `A^{-1} P`
    /// columns restricted to the enforcement rows' support, factor, and
    /// solve directly. The column precomputation costs one inner solve
    /// per forcing point, paid once.
    PrecomputedColumns,
}

/// Solver knobs for the augmented system.
#[derive(Debug, Clone, Copy)]
pub struct AfmSolverConfig {
    pub scheme: TimeScheme,
    /// Relative tolerance of the inner A-solves.
    pub inner_tol: f64,
    /// Relative tolerance of the outer Schur iteration.
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub strategy: SchurStrategy,
    /// Solve with a dense factorization of A instead of iterations
    /// (cross-validation path for small grids).
    pub direct_inner: bool,
    /// Verify the block-system residuals after every step.
    pub check_residuals: bool,
}

impl Default for AfmSolverConfig {
    fn default() -> Self {
        Self {
            scheme: TimeScheme::default(),
            inner_tol: 1e-11,
            outer_tol: 1e-9,
            max_inner: 10_000,
            max_outer: 500,
            strategy: SchurStrategy::PrecomputedColumns,
            direct_inner: false,
            check_residuals: false,
        }
    }
}

/// Residual diagnostics of one augmented solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepDiagnostics {
    /// `||A c + P F - r||_2` when residual checking is enabled.
    pub block_residual: f64,
    /// `||E c - r_bc||_2` when residual checking is enabled.
    pub enforcement_residual: f64,
    pub outer_iterations: usize,
}

/// The assembled augmented system and its solver state.
pub struct AfmSystem {
    bulk: BulkOperator,
    stencils: Vec<HermiteStencil>,
    kernel: RadialKernel,
    rows: Vec<HermiteRow>,
    r_bc: Vec<f64>,
    last_coeffs: Vec<[f64; 3]>,
    config: AfmSolverConfig,
    mic: Option<MicPreconditioner>,
    mic_startup: Option<MicPreconditioner>,
    direct: Option<DenseLu>,
    direct_startup: Option<DenseLu>,
    // previous field level for the two-step scheme
    prev_c: Option<Vec<f64>>,
    // warm starts
    y_cache: Vec<f64>,
    f_cache: Vec<f64>,
    // Schur cache for the precomputed-columns strategy
    obs_rows: Vec<usize>,
    k_matrix: Option<DMatrix<f64>>,
    schur_lu: Option<DenseLu>,
    rows_dirty: bool,
}

impl AfmSystem {
    /// Builds the Crank-Nicolson operator and the stencil geometry. Rows
    /// still need boundary coefficients via [`AfmSystem::set_robin_data`].
    pub fn new(
        grid: &GridModel,
        diffusion: f64,
        dt: f64,
        eps_herm: f64,
        config: AfmSolverConfig,
    ) -> Result<Self> {
        let bulk = BulkOperator::new(grid, diffusion, dt, config.scheme)?;
        let kernel = RadialKernel::multiquadric(eps_herm)?;
        let n_f = grid.n_forcing();
        let mut stencils = Vec::with_capacity(n_f);
        for k in 0..n_f {
            stencils.push(select_stencil(k, grid, &kernel, diffusion)?);
        }

        let (mic, mic_startup) = if bulk.symmetric && !config.direct_inner {
            let m = Some(MicPreconditioner::new(&bulk.a)?);
            let ms = match bulk.startup_matrix() {
                Some(a1) => Some(MicPreconditioner::new(a1)?),
                None => None,
            };
            (m, ms)
        } else {
            (None, None)
        };
        let (direct, direct_startup) = if config.direct_inner {
            let d = Some(DenseLu::new(bulk.a.to_dense(), f64::INFINITY)?);
            let ds = match bulk.startup_matrix() {
                Some(a1) => Some(DenseLu::new(a1.to_dense(), f64::INFINITY)?),
                None => None,
            };
            (d, ds)
        } else {
            (None, None)
        };

        let mut obs_rows: Vec<usize> = stencils
            .iter()
            .flat_map(|s| {
                let mut v = vec![s.forcing_index];
                v.extend_from_slice(&s.fluid_indices);
                v
            })
            .collect();
        obs_rows.sort_unstable();
        obs_rows.dedup();

        let n = bulk.a.nrows();
        Ok(Self {
            bulk,
            stencils,
            kernel,
            rows: Vec::new(),
            r_bc: vec![0.0; n_f],
            last_coeffs: Vec::new(),
            config,
            mic,
            mic_startup,
            direct,
            direct_startup,
            prev_c: None,
            y_cache: vec![0.0; n],
            f_cache: vec![0.0; n_f],
            obs_rows,
            k_matrix: None,
            schur_lu: None,
            rows_dirty: true,
        })
    }

    pub fn bulk(&self) -> &BulkOperator {
        &self.bulk
    }

    /// Drops the retained previous level (restart the two-step scheme).
    pub fn reset_history(&mut self) {
        self.prev_c = None;
    }

    pub fn n_forcing(&self) -> usize {
        self.stencils.len()
    }

    pub fn stencils(&self) -> &[HermiteStencil] {
        &self.stencils
    }

    pub fn rows(&self) -> &[HermiteRow] {
        &self.rows
    }

    pub fn r_bc(&self) -> &[f64] {
        &self.r_bc
    }

    /// Sets the Robin operator coefficients and boundary data per forcing
    /// record (indexed like the grid's record list):
    /// `robin_coeffs[k]` is the zeroth-order coefficient at record k's
    /// boundary point and `data[k]` the prescribed right-hand side value.
    /// Enforcement rows are rebuilt only when coefficients change.
    pub fn set_robin_data(&mut self, robin_coeffs: &[f64], data: &[f64]) -> Result<()> {
        let n_f = self.stencils.len();
        assert_eq!(robin_coeffs.len(), n_f);
        assert_eq!(data.len(), n_f);

        let coeffs: Vec<[f64; 3]> = self
            .stencils
            .iter()
            .map(|s| {
                [
                    robin_coeffs[s.boundary_records[0]],
                    robin_coeffs[s.boundary_records[1]],
                    robin_coeffs[s.boundary_records[2]],
                ]
            })
            .collect();

        if coeffs != self.last_coeffs {
            self.rows = self
                .stencils
                .iter()
                .zip(&coeffs)
                .map(|(s, &k3)| build_hermite_row(s, &self.kernel, self.bulk.diffusion, k3))
                .collect::<Result<Vec<_>>>()?;
            self.last_coeffs = coeffs;
            self.rows_dirty = true;
        }

        for (k, (row, stencil)) in self.rows.iter().zip(&self.stencils).enumerate() {
            let d = [
                data[stencil.boundary_records[0]],
                data[stencil.boundary_records[1]],
                data[stencil.boundary_records[2]],
            ];
            self.r_bc[k] = row.rhs_entry(d);
        }
        Ok(())
    }

    /// Applies the enforcement matrix to a grid vector.
    pub fn apply_e(&self, c: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.entries.iter().map(|&(col, w)| w * c[col]).sum())
            .collect()
    }

    fn inner_solve_with(&self, startup: bool, rhs: &[f64], x: &mut [f64]) -> Result<usize> {
        let (matrix, mic, direct) = if startup {
            (
                self.bulk.startup_matrix().expect("startup matrix"),
                self.mic_startup.as_ref(),
                self.direct_startup.as_ref(),
            )
        } else {
            (&self.bulk.a, self.mic.as_ref(), self.direct.as_ref())
        };
        if let Some(direct) = direct {
            let sol = direct.solve_slice(rhs)?;
            x.copy_from_slice(&sol);
            return Ok(1);
        }
        let stats = if self.bulk.symmetric {
            cg(
                matrix,
                rhs,
                x,
                mic,
                self.config.inner_tol,
                self.config.max_inner,
            )?
        } else {
            bicgstab(matrix, rhs, x, self.config.inner_tol, self.config.max_inner)?
        };
        Ok(stats.iterations)
    }

    fn inner_solve(&self, rhs: &[f64], x: &mut [f64]) -> Result<usize> {
        self.inner_solve_with(false, rhs, x)
    }

    fn ensure_schur_columns(&mut self) -> Result<()> {
        if self.k_matrix.is_some() {
            return Ok(());
        }
        let n = self.bulk.a.nrows();
        let n_f = self.stencils.len();
        let mut k_matrix = DMatrix::zeros(self.obs_rows.len(), n_f);
        let mut col = vec![0.0; n];
        let mut unit = vec![0.0; n];
        for (jf, stencil) in self.stencils.iter().enumerate() {
            unit[stencil.forcing_index] = 1.0;
            col.iter_mut().for_each(|v| *v = 0.0);
            self.inner_solve(&unit, &mut col)?;
            unit[stencil.forcing_index] = 0.0;
            for (io, &row) in self.obs_rows.iter().enumerate() {
                k_matrix[(io, jf)] = col[row];
            }
        }
        self.k_matrix = Some(k_matrix);
        Ok(())
    }

    fn schur_matrix(&mut self) -> Result<()> {
        if !self.rows_dirty && self.schur_lu.is_some() {
            return Ok(());
        }
        self.ensure_schur_columns()?;
        let k_matrix = self.k_matrix.as_ref().unwrap();
        let n_f = self.stencils.len();
        let row_of = |grid_idx: usize| self.obs_rows.binary_search(&grid_idx).unwrap();
        let mut s: DMatrix<f64> = DMatrix::zeros(n_f, n_f);
        for (k, row) in self.rows.iter().enumerate() {
            for &(col, w) in &row.entries {
                let io = row_of(col);
                for jf in 0..n_f {
                    s[(k, jf)] -= w * k_matrix[(io, jf)];
                }
            }
        }
        self.schur_lu = Some(DenseLu::new(s, f64::INFINITY).map_err(|e| {
            Error::Linalg(format!("Schur matrix factorization failed: {e}"))
        })?);
        self.rows_dirty = false;
        Ok(())
    }

    /// Advances the field one step: assembles the right-hand side from
    /// `c` at time `t_n`, solves the augmented system, and overwrites `c`
    /// with the new field. Enforcement rows must be current. The first
    /// step of the two-step scheme runs its backward-Euler startup.
    pub fn step(
        &mut self,
        c: &mut [f64],
        t_n: f64,
        source: Option<SpaceTimeFn>,
        bdata: &BoundaryData,
    ) -> Result<StepDiagnostics> {
        let startup = self.bulk.scheme == TimeScheme::Bdf2 && self.prev_c.is_none();
        let r = self
            .bulk
            .rhs(c, self.prev_c.as_deref(), t_n, source, bdata);
        if self.bulk.scheme == TimeScheme::Bdf2 {
            self.prev_c = Some(c.to_vec());
        }
        let n_f = self.stencils.len();

        if n_f == 0 {
            self.inner_solve_with(startup, &r, c)?;
            return Ok(StepDiagnostics::default());
        }
        if self.rows.len() != n_f {
            return Err(Error::InvalidArgument(
                "enforcement rows not set; call set_robin_data first".into(),
            ));
        }

        // stage 1: forcing values from the Schur system
        let mut y = std::mem::take(&mut self.y_cache);
        self.inner_solve_with(startup, &r, &mut y)?;
        let ey = self.apply_e(&y);
        let rhs_schur: Vec<f64> = (0..n_f).map(|k| self.r_bc[k] - ey[k]).collect();

        let mut f = std::mem::take(&mut self.f_cache);
        // the startup matrix is used once; run its Schur stage matrix-free
        let strategy = if startup {
            SchurStrategy::MatrixFree
        } else {
            self.config.strategy
        };
        let outer_iterations = match strategy {
            SchurStrategy::PrecomputedColumns => {
                self.schur_matrix()?;
                let sol = self.schur_lu.as_ref().unwrap().solve_slice(&rhs_schur)?;
                f.copy_from_slice(&sol);
                0
            }
            SchurStrategy::MatrixFree => {
                let op = SchurOperator {
                    system: self,
                    startup,
                    scratch: std::cell::RefCell::new((vec![0.0; c.len()], vec![0.0; c.len()])),
                };
                let stats = bicgstab(
                    &op,
                    &rhs_schur,
                    &mut f,
                    self.config.outer_tol,
                    self.config.max_outer,
                )
                .map_err(|e| Error::Convergence(format!("Schur iteration failed: {e}")))?;
                stats.iterations
            }
        };

        // stage 2: bulk field with the forcing folded into the right side
        let mut r2 = r.clone();
        for (k, stencil) in self.stencils.iter().enumerate() {
            r2[stencil.forcing_index] -= f[k];
        }
        self.inner_solve_with(startup, &r2, c)?;

        let mut diag = StepDiagnostics {
            outer_iterations,
            ..Default::default()
        };
        if self.config.check_residuals {
            let matrix = if startup {
                self.bulk.startup_matrix().unwrap()
            } else {
                &self.bulk.a
            };
            let mut ac = vec![0.0; c.len()];
            matrix.mul_vec_into(c, &mut ac);
            for (k, stencil) in self.stencils.iter().enumerate() {
                ac[stencil.forcing_index] += f[k];
            }
            diag.block_residual = ac
                .iter()
                .zip(&r)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let ec = self.apply_e(c);
            diag.enforcement_residual = ec
                .iter()
                .zip(&self.r_bc)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }

        self.y_cache = y;
        self.f_cache = f;
        Ok(diag)
    }
}

/// Matrix-free Schur operator `v -> -E A^{-1} P v`.
struct SchurOperator<'a> {
    system: &'a AfmSystem,
    startup: bool,
    scratch: std::cell::RefCell<(Vec<f64>, Vec<f64>)>,
}

impl LinearOperator for SchurOperator<'_> {
    fn dim(&self) -> usize {
        self.system.stencils.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (pv, sol) = &mut *self.scratch.borrow_mut();
        pv.iter_mut().for_each(|v| *v = 0.0);
        for (k, stencil) in self.system.stencils.iter().enumerate() {
            pv[stencil.forcing_index] = x[k];
        }
        self.system
            .inner_solve_with(self.startup, pv, sol)
            .expect("inner solve inside the Schur operator");
        let e_sol = self.system.apply_e(sol);
        for (k, v) in e_sol.into_iter().enumerate() {
            y[k] = -v;
        }
    }
}

/// One row of the forcing-distance study output.
#[derive(Debug, Clone)]
pub struct DistanceStudyRow {
    /// Squeeze factor applied to one axis of the superquadric.
    pub p_value: f64,
    /// Minimum forcing-point-to-boundary-point distance.
    pub min_distance: f64,
    pub l2_error: f64,
    pub linf_error: f64,
    /// Whether the forcing-point set differs from the previous sweep row.
    pub forcing_set_changed: bool,
}


impl AfmSystem {
    /// Diagnostic: extreme singular values of the Schur matrix.
    pub fn debug_schur_svals(&mut self) -> Option<(f64, f64)> {
        if self.stencils.is_empty() {
            return None;
        }
        self.ensure_schur_columns().ok()?;
        let k_matrix = self.k_matrix.as_ref().unwrap();
        let n_f = self.stencils.len();
        let row_of = |grid_idx: usize| self.obs_rows.binary_search(&grid_idx).unwrap();
        let mut s: DMatrix<f64> = DMatrix::zeros(n_f, n_f);
        for (k, row) in self.rows.iter().enumerate() {
            for &(col, w) in &row.entries {
                let io = row_of(col);
                for jf in 0..n_f {
                    s[(k, jf)] -= w * k_matrix[(io, jf)];
                }
            }
        }
        let svd = s.svd(false, false);
        let smax = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
        let smin = svd.singular_values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        Some((smax, smin))
    }
}
