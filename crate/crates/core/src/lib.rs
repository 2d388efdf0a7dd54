//! Coupled surface/bulk chemical transport around stationary platelets.
//!
//! The library solves reaction-diffusion equations on closed 2D curves
//! (platelet surfaces) coupled to a bulk diffusion equation on a uniform
//! Cartesian grid. Platelets are represented by parametric RBF interpolants,
//! surface operators are built with RBF-generated finite differences, and
//! boundary conditions on the bulk field are enforced with an augmented
//! forcing formulation closed by symmetric Hermite RBF interpolation.
//!
//! Module map:
//! * [`kernels`] - radial kernels, their derivatives, and Robin-operator
//!   applications to kernels.
//! * [`geometry`] - parametric RBF curve models, normals, inside tests,
//!   and the standard test shapes.
//! * [`grid`] - Cartesian grid, fluid/forcing/solid classification, and
//!   forcing-point to boundary-point pairing.
//! * [`surface`] - RBF-FD surface gradient/Laplacian operators and
//!   SBDF1/SBDF2 time stepping for the surface chemistry models.
//! * [`afm`] - Crank-Nicolson bulk discretization, Hermite boundary rows,
//!   and the two-stage Schur-complement solve.
//! * [`coupling`] - fractional-step orchestration of the coupled problem.
//! * [`linalg`] - dense/sparse linear algebra substrate.

pub mod afm;
pub mod coupling;
pub mod geometry;
pub mod grid;
pub mod kernels;
pub mod linalg;
pub mod surface;

use thiserror::Error;

/// Errors produced anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),

    #[error("grid classification: {0}")]
    Grid(String),

    #[error("linear algebra: {0}")]
    Linalg(String),

    #[error("solver did not converge: {0}")]
    Convergence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// A point or vector in the plane.
pub type Vec2 = nalgebra::Vector2<f64>;
