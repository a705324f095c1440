//! The κ-weighted discrete Laplacian in flux-divergence form.
//!
//! Row `v` is `(1/h^D) Σ_{f(v)} σ(v,f) s_fᵀ Φ`, with `σ = +1` where the
//! stencil normal of `f` points out of `v`. Volume unknowns form the square
//! matrix `L`; boundary data enters through `B`, so that the operator acts
//! as `L φ + B g`.

use std::io::Write;

use serde::Serialize;

use crate::field::SmoothField;
use crate::geometry::{CellKind, CutCellMesh, FaceId, FaceKind, Side, VolumeId};
use crate::moments::{region_rule, Flavor, QuadOptions, Region};
use crate::sparse::CsrMatrix;
use crate::stencil::{BcKind, BoundaryConditions, SchemeConfig, StencilSet, StencilStats};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub dim: usize,
    pub h: f64,
    /// `n_vol × n_vol`.
    pub matrix: CsrMatrix,
    /// `n_vol × n_boundary`, boundary faces in face order.
    pub boundary_map: CsrMatrix,
    pub kappa: Vec<f64>,
    pub bc: BoundaryConditions,
    pub scheme: SchemeConfig,
    pub stencils: StencilSet,
}

/// Builds every face stencil, then gathers rows volume by volume.
pub fn assemble(
    mesh: &CutCellMesh,
    cfg: &SchemeConfig,
    bc: &BoundaryConditions,
) -> Result<DiscreteOperator> {
    let stencils = StencilSet::build(mesh, cfg, bc)?;
    let n = mesh.num_volumes();
    let nb = stencils.boundary_faces().len();
    let scale = mesh.grid.h.powi(mesh.dim() as i32).recip();
    let mut lb = CsrMatrix::builder(n);
    let mut bb = CsrMatrix::builder(nb);
    let mut lrow = Vec::new();
    let mut brow = Vec::new();
    for v in mesh.volumes() {
        lrow.clear();
        brow.clear();
        for &(f, sigma) in &v.faces {
            let (cols, vals) = stencils.raw(f);
            for (&c, &s) in cols.iter().zip(vals) {
                let val = sigma * s * scale;
                if (c as usize) < n {
                    lrow.push((c, val));
                } else {
                    brow.push((c - n as u32, val));
                }
            }
        }
        lb.push_unsorted(lrow.iter().copied());
        bb.push_unsorted(brow.iter().copied());
    }
    Ok(DiscreteOperator {
        dim: mesh.dim(),
        h: mesh.grid.h,
        matrix: lb.finish(),
        boundary_map: bb.finish(),
        kappa: mesh.volumes().iter().map(|v| v.kappa).collect(),
        bc: *bc,
        scheme: *cfg,
        stencils,
    })
}

impl DiscreteOperator {
    pub fn num_volumes(&self) -> usize {
        self.matrix.nrows
    }

    pub fn boundary_faces(&self) -> &[FaceId] {
        self.stencils.boundary_faces()
    }

    pub fn stencil_stats(&self) -> StencilStats {
        self.stencils.stats
    }

    /// `L φ + B g`: the κ-weighted Laplacian of the field.
    pub fn apply(&self, phi: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.num_volumes(), phi.len())?;
        check_len(self.boundary_map.ncols, g.len())?;
        let mut out = self.matrix.mul_vec(phi);
        let bg = self.boundary_map.mul_vec(g);
        out.iter_mut().zip(bg).for_each(|(o, b)| *o += b);
        Ok(out)
    }

    /// Right-hand side `κ⟨ρ⟩ − B g` of the system `L φ = κ⟨ρ⟩ − B g`.
    pub fn rhs(&self, rho: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.num_volumes(), rho.len())?;
        check_len(self.boundary_map.ncols, g.len())?;
        let bg = self.boundary_map.mul_vec(g);
        Ok(rho
            .iter()
            .zip(&self.kappa)
            .zip(bg)
            .map(|((r, k), b)| k * r - b)
            .collect())
    }

    /// Per-volume truncation error `L⟨φ⟩ + B g − κ⟨Δφ⟩`.
    pub fn truncation_error(&self, exact: &ExactData) -> Result<Vec<f64>> {
        let lphi = self.apply(&exact.phi, &exact.g)?;
        Ok(lphi
            .iter()
            .zip(&exact.laplacian)
            .zip(&self.kappa)
            .map(|((l, d), k)| l - k * d)
            .collect())
    }

    /// Flux errors `(s_fᵀΦ − ∫_f ∇φ·n) / |A_f|` on every face.
    pub fn flux_errors(&self, mesh: &CutCellMesh, exact: &ExactData) -> Vec<f64> {
        mesh.face_ids()
            .map(|f| {
                let approx = self.stencils.apply(f, &exact.phi, &exact.g);
                (approx - exact.flux[f.index()]) / mesh.face_measure(f)
            })
            .collect()
    }

    /// The homogeneous operator without κ-weighting, `diag(1/κ) L`, whose
    /// spectrum is the stability diagnostic.
    pub fn unweighted(&self) -> CsrMatrix {
        let mut m = self.matrix.clone();
        let inv: Vec<f64> = self.kappa.iter().map(|k| 1.0 / k).collect();
        m.scale_rows(&inv);
        m
    }

    /// Volumes whose row touches only full volumes and no boundary data.
    pub fn interior_rows(&self, mesh: &CutCellMesh) -> Vec<bool> {
        (0..self.num_volumes())
            .map(|i| {
                let (cols, _) = self.matrix.row(i);
                self.boundary_map.row(i).0.is_empty()
                    && cols
                        .iter()
                        .all(|&c| mesh.volume(VolumeId(c)).kind == CellKind::Full)
            })
            .collect()
    }

    pub fn write_matrix_market(&self, w: impl Write) -> Result<()> {
        self.matrix.write_matrix_market(w)
    }

    pub fn write_boundary_map(&self, w: impl Write) -> Result<()> {
        self.boundary_map.write_matrix_market(w)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::SizeMismatch { expected, got })
    }
}

/// Exact quantities of a smooth field on a mesh.
#[derive(Debug, Clone, Serialize)]
pub struct ExactData {
    /// `⟨φ⟩_v`.
    pub phi: Vec<f64>,
    /// `⟨Δφ⟩_v`.
    pub laplacian: Vec<f64>,
    /// Boundary data per boundary face: `⟨φ⟩_f` (Dirichlet) or `⟨∇φ·n⟩_f` (Neumann).
    pub g: Vec<f64>,
    /// `∫_f ∇φ·n dA` per face, stencil orientation.
    pub flux: Vec<f64>,
}

pub fn face_region(mesh: &CutCellMesh, f: FaceId) -> Region {
    match mesh.face(f).kind {
        FaceKind::Grid { axis, lo, .. } => Region::Face {
            cell: mesh.volume(lo).cell,
            axis,
            side: Side::High,
        },
        FaceKind::Domain { volume, axis, side } => Region::Face {
            cell: mesh.volume(volume).cell,
            axis,
            side,
        },
        FaceKind::Eb { volume } => Region::Eb(mesh.volume(volume).cell),
    }
}

/// Samples averages, boundary data and exact fluxes by quadrature.
pub fn sample_exact(
    mesh: &CutCellMesh,
    bc: &BoundaryConditions,
    field: &dyn SmoothField,
    quad: &QuadOptions,
) -> Result<ExactData> {
    let geom = &mesh.geometry;
    let value = |x: &crate::Point| field.value(x);
    let lap = |x: &crate::Point| field.laplacian(x);
    let grad = |x: &crate::Point| field.gradient(x);
    let mut phi = Vec::with_capacity(mesh.num_volumes());
    let mut laplacian = Vec::with_capacity(mesh.num_volumes());
    for v in mesh.volumes() {
        let rule = region_rule(geom, &mesh.grid, &Region::Volume(v.cell), quad)?;
        let m = rule.measure();
        if !(m > 0.0) {
            return Err(Error::ZeroMeasure);
        }
        phi.push(rule.integrate(&Flavor::Value(&value))? / m);
        laplacian.push(rule.integrate(&Flavor::Value(&lap))? / m);
    }
    let mut flux = Vec::with_capacity(mesh.faces().len());
    let mut g = Vec::new();
    for f in mesh.face_ids() {
        let rule = region_rule(geom, &mesh.grid, &face_region(mesh, f), quad)?;
        let q = rule.integrate(&Flavor::NormalDerivative(&grad))?;
        flux.push(q);
        match bc.kind(mesh, f) {
            None => {}
            Some(BcKind::Dirichlet) => {
                g.push(rule.integrate(&Flavor::Value(&value))? / rule.measure())
            }
            Some(BcKind::Neumann) => g.push(q / mesh.face_measure(f)),
        }
    }
    Ok(ExactData {
        phi,
        laplacian,
        g,
        flux,
    })
}
