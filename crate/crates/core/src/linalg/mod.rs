//! Dense and sparse linear-algebra substrate.
//!
//! Dense factorizations (LU, QR least squares) wrap `nalgebra`; the sparse
//! storage, the MIC(0) preconditioner, and the CG/BiCGSTAB iterations are
//! implemented here directly. All solves are deterministic: fixed reduction
//! order, no randomized starting data.

mod dense;
mod iterative;
mod mic;
mod sparse;

pub use dense::{solve_dense, DenseLu, DenseQr};
pub use iterative::{bicgstab, cg, LinearOperator, SolveStats};
pub use mic::MicPreconditioner;
pub use sparse::{CooBuilder, CsrMatrix};
