//! Higher-order conservative finite-volume discretization of Poisson's
//! equation on Cartesian cut-cell grids in two and three dimensions.
//!
//! The pipeline is:
//!
//! 1. [`geometry`]: an implicit function `ψ` defines the fluid region
//!    `Ω = {ψ < 0}`; [`geometry::CutCellMesh::build`] intersects it with a
//!    uniform grid and enumerates volumes and faces.
//! 2. [`moments`]: high-order quadrature of monomial moments over cut
//!    volumes, grid faces and embedded-boundary faces.
//! 3. [`stencil`]: flux stencils from small weighted least-squares systems.
//! 4. [`operator`]: the κ-weighted Laplacian in flux-divergence form.
//! 5. [`solver`]: restarted GMRES and spectrum analysis.
//! 6. [`study`]: manufactured-solution convergence studies.

pub mod error;
pub mod field;
pub mod geometry;
pub mod moments;
pub mod operator;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod stencil;
pub mod study;

pub use error::{Error, Result};

/// A point in physical space. Only the first `dim` components are used.
pub type Point = [f64; 3];
