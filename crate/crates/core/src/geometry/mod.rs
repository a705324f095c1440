//! Implicit geometries, the Cartesian grid, and cut-cell classification.

mod grid;
mod mesh;
mod shape;

pub use grid::{Cell, Grid, Side};
pub use mesh::{
    CellKind, CutCellMesh, Face, FaceId, FaceKind, FaceMoments, MeshOptions, NeighborMetric,
    Neighborhood, Volume, VolumeId,
};
pub use shape::{CircleSpec, GeometryDescriptor, ImplicitGeometry, Sense, Shape};

use crate::Point;

/// A level-set function `ψ` with interval bounds.
///
/// The fluid region is `{ψ < 0}`. `bounds` and `grad_bounds` must enclose
/// the true range of `ψ` and `∂ψ/∂x_axis` over the axis-aligned box
/// `[lo, hi]`; degenerate boxes (`lo[d] == hi[d]`) are allowed.
pub trait LevelSet: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;
    fn bounds(&self, lo: &Point, hi: &Point) -> (f64, f64);
    fn grad_bounds(&self, lo: &Point, hi: &Point, axis: usize) -> (f64, f64);
}
