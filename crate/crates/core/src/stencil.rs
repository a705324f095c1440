//! Weighted least-squares flux stencils.
//!
//! For a face `f` with expansion point `x₀`, the neighbors of `f` give an
//! overdetermined system `A c = Φ` for the coefficients of a polynomial
//! interpolant. The flux stencil is the solution of `Aᵀ s = F` minimizing
//! `‖W⁻¹ s‖₂`, where `F_p` is the flux of `(x − x₀)^p` through `f`.
//! Columns are expressed in the scaled coordinate `ξ = (x − x₀)/h`; this
//! rescales `A` and `F` by the same diagonal and leaves `s` unchanged.

use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{CellKind, CutCellMesh, FaceId, FaceKind, NeighborMetric, VolumeId};
use crate::moments::{monomial_count, MomentSet, MonomialBasis, MultiIndex};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    #[default]
    Dirichlet,
    Neumann,
}

impl FromStr for BcKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(BcKind::Dirichlet),
            "neumann" => Ok(BcKind::Neumann),
            other => Err(Error::Config(format!(
                "unknown boundary condition `{other}`"
            ))),
        }
    }
}

/// Boundary condition kind per boundary class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BoundaryConditions {
    /// Faces of the unit box.
    pub domain: BcKind,
    /// Embedded-boundary faces.
    pub eb: BcKind,
}

impl BoundaryConditions {
    pub fn new(domain: BcKind, eb: BcKind) -> Self {
        Self { domain, eb }
    }

    /// Kind for a boundary face; `None` for grid faces.
    pub fn kind(&self, mesh: &CutCellMesh, f: FaceId) -> Option<BcKind> {
        match mesh.face(f).kind {
            FaceKind::Grid { .. } => None,
            FaceKind::Domain { .. } => Some(self.domain),
            FaceKind::Eb { .. } => Some(self.eb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `1` inside the core radius, `(r/core)^−exponent` outside.
    #[default]
    Decaying,
    /// Plain least squares, `W = I`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Target order of accuracy of the solution.
    pub order: usize,
    /// Path radius used to collect neighbors.
    pub radius: usize,
    pub weight_exponent: f64,
    pub weight_core: f64,
    pub weighting: Weighting,
    pub metric: NeighborMetric,
}

impl SchemeConfig {
    pub fn new(order: usize) -> Result<Self> {
        let radius = match order {
            2 => 2,
            4 => 3,
            _ => return Err(Error::Config(format!("order must be 2 or 4, got {order}"))),
        };
        Ok(Self {
            order,
            radius,
            weight_exponent: 5.0,
            weight_core: 0.5,
            weighting: Weighting::Decaying,
            metric: NeighborMetric::Box,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.order, 2 | 4) {
            return Err(Error::Config(format!(
                "order must be 2 or 4, got {}",
                self.order
            )));
        }
        if self.radius == 0 {
            return Err(Error::Config("neighbor radius must be at least 1".into()));
        }
        if !(self.weight_core > 0.0) || !self.weight_exponent.is_finite() {
            return Err(Error::Config(
                "weight law needs a positive core radius".into(),
            ));
        }
        Ok(())
    }

    /// Interpolant degree bound `P = Q + 1`: monomials with `|p| < P`.
    pub fn degree_bound(&self) -> usize {
        self.order + 1
    }

    pub fn num_monomials(&self, dim: usize) -> usize {
        monomial_count(dim, self.degree_bound())
    }

    fn basis(&self, dim: usize) -> &'static MonomialBasis {
        MonomialBasis::get(dim, self.degree_bound() - 1)
    }
}

/// An unknown referenced by a stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum StencilRef {
    Volume(VolumeId),
    Boundary(FaceId),
}

/// Where the interpolant of a face is expanded: the uncut face center for
/// grid-aligned faces, the cell center for embedded-boundary faces.
pub fn expansion_point(mesh: &CutCellMesh, f: FaceId) -> Point {
    mesh.face_center(f)
}

pub fn weight(row_point: &Point, x0: &Point, h: f64, cfg: &SchemeConfig) -> f64 {
    if cfg.weighting == Weighting::Uniform {
        return 1.0;
    }
    let r = dist(row_point, x0) / h;
    if r < cfg.weight_core {
        1.0
    } else {
        (r / cfg.weight_core).powf(-cfg.weight_exponent)
    }
}

fn dist(a: &Point, b: &Point) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Point associated with a row: cell center for volumes and EB faces, face
/// center for grid-aligned boundary faces.
pub fn row_point(mesh: &CutCellMesh, r: StencilRef) -> Point {
    match r {
        StencilRef::Volume(v) => mesh.grid.cell_center(&mesh.volume(v).cell),
        StencilRef::Boundary(f) => mesh.face_center(f),
    }
}

fn lower(p: &MultiIndex, d: usize) -> Option<MultiIndex> {
    (p[d] > 0).then(|| {
        let mut q = *p;
        q[d] -= 1;
        q
    })
}

/// Averages of `ξ^p` over an axis-aligned box given in `ξ` units; degenerate
/// axes contribute the point value.
fn box_average_row(lo: &Point, hi: &Point, dim: usize, basis: &MonomialBasis) -> Vec<f64> {
    let top = basis
        .exponents()
        .last()
        .map_or(0, |p| p.iter().copied().max().unwrap_or(0)) as usize;
    let mut avg = [[0.0f64; 12]; 3];
    for d in 0..3 {
        let (a, b) = if d < dim { (lo[d], hi[d]) } else { (0.0, 0.0) };
        for k in 0..=top {
            avg[d][k] = if b > a {
                (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / ((k as f64 + 1.0) * (b - a))
            } else {
                a.powi(k as i32)
            };
        }
    }
    basis
        .exponents()
        .iter()
        .map(|p| avg[0][p[0] as usize] * avg[1][p[1] as usize] * avg[2][p[2] as usize])
        .collect()
}

fn to_xi(x: &Point, x0: &Point, h: f64) -> Point {
    let mut y = [0.0; 3];
    for d in 0..3 {
        y[d] = (x[d] - x0[d]) / h;
    }
    y
}

fn scaled_normalized(m: &MomentSet, basis: &MonomialBasis, h: f64) -> Vec<f64> {
    let m0 = m.measure();
    basis
        .exponents()
        .iter()
        .map(|p| m.get(p) / (m0 * h.powi(crate::moments::degree(p) as i32)))
        .collect()
}

/// `ξ`-space row `m^p_v(x₀) / (m^0_v h^{|p|})` of a volume.
fn volume_row(mesh: &CutCellMesh, v: VolumeId, x0: &Point, basis: &MonomialBasis) -> Vec<f64> {
    let vol = mesh.volume(v);
    let h = mesh.grid.h;
    match (&vol.moments, vol.kind) {
        (Some(m), CellKind::Cut) => scaled_normalized(&m.shifted(x0), basis, h),
        _ => {
            let lo = to_xi(&mesh.grid.cell_lo(&vol.cell), x0, h);
            let hi = to_xi(&mesh.grid.cell_hi(&vol.cell), x0, h);
            box_average_row(&lo, &hi, mesh.dim(), basis)
        }
    }
}

/// `ξ`-space averages of `ξ^p` over a grid-aligned face, or `None` for EB faces.
fn grid_face_average_row(
    mesh: &CutCellMesh,
    f: FaceId,
    x0: &Point,
    basis: &MonomialBasis,
) -> Option<Vec<f64>> {
    let h = mesh.grid.h;
    let (cell, Some((axis, side))) = mesh.face_location(f) else {
        return None;
    };
    Some(match &mesh.face(f).moments {
        crate::geometry::FaceMoments::Cut(m) => scaled_normalized(&m.shifted(x0), basis, h),
        _ => {
            let (lo, hi) = mesh.grid.face_box(&cell, axis, side);
            box_average_row(&to_xi(&lo, x0, h), &to_xi(&hi, x0, h), mesh.dim(), basis)
        }
    })
}

/// `ξ`-space row of a boundary face for the given condition.
fn boundary_row(
    mesh: &CutCellMesh,
    f: FaceId,
    kind: BcKind,
    x0: &Point,
    basis: &MonomialBasis,
) -> Vec<f64> {
    let h = mesh.grid.h;
    match kind {
        BcKind::Dirichlet => match grid_face_average_row(mesh, f, x0, basis) {
            Some(row) => row,
            None => scaled_normalized(&mesh.face_scalar_moments(f).shifted(x0), basis, h),
        },
        BcKind::Neumann => {
            // (1/m⁰) Σ_d p_d m^{p−e_d}_{d,f} / h^{|p|}
            if let Some(avg) = grid_face_average_row(mesh, f, x0, basis) {
                let n = mesh.face_normal(f).expect("grid-aligned face");
                basis
                    .exponents()
                    .iter()
                    .map(|p| {
                        (0..mesh.dim())
                            .filter_map(|d| {
                                lower(p, d)
                                    .map(|q| p[d] as f64 * n[d] * avg[basis.index(&q).unwrap()] / h)
                            })
                            .sum()
                    })
                    .collect()
            } else {
                let m0 = mesh.face_scalar_moments(f).measure();
                let normal: Vec<MomentSet> = mesh
                    .face_normal_moments(f)
                    .iter()
                    .map(|m| m.shifted(x0))
                    .collect();
                basis
                    .exponents()
                    .iter()
                    .map(|p| {
                        let s: f64 = (0..mesh.dim())
                            .filter_map(|d| lower(p, d).map(|q| p[d] as f64 * normal[d].get(&q)))
                            .sum();
                        s / (m0 * h.powi(crate::moments::degree(p) as i32))
                    })
                    .collect()
            }
        }
    }
}

/// `ξ`-space flux functionals `F_p h^{−|p|}`.
fn scaled_flux_functionals(
    mesh: &CutCellMesh,
    f: FaceId,
    x0: &Point,
    basis: &MonomialBasis,
) -> Vec<f64> {
    let h = mesh.grid.h;
    if let Some(avg) = grid_face_average_row(mesh, f, x0, basis) {
        let n = mesh.face_normal(f).expect("grid-aligned face");
        let area = mesh.face_measure(f);
        basis
            .exponents()
            .iter()
            .map(|p| {
                (0..mesh.dim())
                    .filter_map(|d| {
                        lower(p, d)
                            .map(|q| p[d] as f64 * n[d] * area * avg[basis.index(&q).unwrap()] / h)
                    })
                    .sum()
            })
            .collect()
    } else {
        let normal: Vec<MomentSet> = mesh
            .face_normal_moments(f)
            .iter()
            .map(|m| m.shifted(x0))
            .collect();
        basis
            .exponents()
            .iter()
            .map(|p| {
                let s: f64 = (0..mesh.dim())
                    .filter_map(|d| lower(p, d).map(|q| p[d] as f64 * normal[d].get(&q)))
                    .sum();
                s / h.powi(crate::moments::degree(p) as i32)
            })
            .collect()
    }
}

/// `F_p = ∫_f ∇(x − x₀)^p · n dA` for `|p| < P`, in basis order.
pub fn flux_functionals(
    mesh: &CutCellMesh,
    f: FaceId,
    x0: &Point,
    degree_bound: usize,
) -> Vec<f64> {
    let basis = MonomialBasis::get(mesh.dim(), degree_bound - 1);
    let h = mesh.grid.h;
    scaled_flux_functionals(mesh, f, x0, basis)
        .into_iter()
        .zip(basis.exponents())
        .map(|(v, p)| v * h.powi(crate::moments::degree(p) as i32))
        .collect()
}

/// The weighted least-squares system of one face, in `ξ` units.
#[derive(Debug, Clone)]
pub struct InterpolantSystem {
    pub face: FaceId,
    pub rows: Vec<StencilRef>,
    /// One row per neighbor, one column per monomial.
    pub a: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub x0: Point,
    pub f: DVector<f64>,
}

pub fn interpolant_system(
    mesh: &CutCellMesh,
    f: FaceId,
    cfg: &SchemeConfig,
    bc: &BoundaryConditions,
) -> InterpolantSystem {
    let nb = mesh.face_neighbors(f, cfg.radius, cfg.metric);
    let rows: Vec<StencilRef> = nb
        .volumes
        .iter()
        .map(|&v| StencilRef::Volume(v))
        .chain(nb.boundary_faces.iter().map(|&b| StencilRef::Boundary(b)))
        .collect();
    system_for_rows(mesh, f, rows, cfg, bc)
}

fn system_for_rows(
    mesh: &CutCellMesh,
    f: FaceId,
    rows: Vec<StencilRef>,
    cfg: &SchemeConfig,
    bc: &BoundaryConditions,
) -> InterpolantSystem {
    let x0 = expansion_point(mesh, f);
    let basis = cfg.basis(mesh.dim());
    let m = basis.len();
    let mut a = DMatrix::zeros(rows.len(), m);
    let mut weights = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let row = match *r {
            StencilRef::Volume(v) => volume_row(mesh, v, &x0, basis),
            StencilRef::Boundary(b) => boundary_row(
                mesh,
                b,
                bc.kind(mesh, b).expect("boundary face"),
                &x0,
                basis,
            ),
        };
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
        weights.push(weight(&row_point(mesh, *r), &x0, mesh.grid.h, cfg));
    }
    let fv = DVector::from_vec(scaled_flux_functionals(mesh, f, &x0, basis));
    InterpolantSystem {
        face: f,
        rows,
        a,
        weights,
        x0,
        f: fv,
    }
}

/// Minimum-`‖W⁻¹s‖` solution of `Aᵀ s = F`.
#[derive(Debug, Clone)]
pub struct MinNormSolution {
    pub s: Vec<f64>,
    pub condition: f64,
    /// `‖Aᵀs − F‖ / ‖F‖`.
    pub residual: f64,
}

/// Solves through the thin QR factorization `W A = Q R`: `s = W Q R⁻ᵀ F`.
/// Rank and conditioning come from the singular values of the small
/// triangular factor, which are reliable where an SVD of the tall matrix
/// occasionally is not.
pub fn solve_min_norm(
    sys: &InterpolantSystem,
    location: impl FnOnce() -> String,
) -> Result<MinNormSolution> {
    let (n, m) = sys.a.shape();
    let deficient = |rank| Error::RankDeficient {
        location: location(),
        rows: n,
        monomials: m,
        rank,
    };
    if n < m {
        return Err(deficient(n.min(m)));
    }
    let mut b = sys.a.clone();
    for i in 0..n {
        for j in 0..m {
            b[(i, j)] *= sys.weights[i];
        }
    }
    let qr = b.qr();
    let r = qr.r();
    let sv = r
        .clone()
        .try_svd(false, false, 1e-16, 10_000)
        .map(|s| s.singular_values)
        .unwrap_or_else(|| r.singular_values());
    let smax = sv.max();
    let tol = smax * (n.max(m) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < m {
        return Err(deficient(rank));
    }
    let smin = sv.min();
    let z = r
        .tr_solve_upper_triangular(&sys.f)
        .ok_or_else(|| deficient(rank))?;
    let y = qr.q() * z;
    let s: Vec<f64> = y.iter().zip(&sys.weights).map(|(yi, wi)| yi * wi).collect();
    let sv_vec = DVector::from_column_slice(&s);
    let res = sys.a.tr_mul(&sv_vec) - &sys.f;
    let fnorm = sys.f.norm();
    Ok(MinNormSolution {
        s,
        condition: smax / smin,
        residual: if fnorm > 0.0 {
            res.norm() / fnorm
        } else {
            res.norm()
        },
    })
}

pub const ILL_CONDITIONED: f64 = 1e12;

/// A flux stencil: `∫_f ∇φ·n dA ≈ Σ coefficient · unknown`, where unknowns
/// are volume averages `⟨φ⟩_v` and boundary-face data `⟨g⟩_{f_b}`. The normal
/// is `+e_d` for grid faces and outward for boundary faces.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxStencil {
    pub face: FaceId,
    pub entries: Vec<(StencilRef, f64)>,
}

/// Builds the stencil of a single face. Neumann boundary faces carry their
/// flux as data: the stencil is `|A_f| ⟨g⟩_f`.
pub fn build_stencil(
    mesh: &CutCellMesh,
    f: FaceId,
    cfg: &SchemeConfig,
    bc: &BoundaryConditions,
) -> Result<FluxStencil> {
    if bc.kind(mesh, f) == Some(BcKind::Neumann) {
        return Ok(FluxStencil {
            face: f,
            entries: vec![(StencilRef::Boundary(f), mesh.face_measure(f))],
        });
    }
    let sys = interpolant_system(mesh, f, cfg, bc);
    let sol = solve_min_norm(&sys, || describe_face(mesh, f))?;
    if sol.condition > ILL_CONDITIONED {
        log::warn!(
            "{}: weighted system condition {:.2e}",
            describe_face(mesh, f),
            sol.condition
        );
    }
    Ok(FluxStencil {
        face: f,
        entries: sys.rows.into_iter().zip(sol.s).collect(),
    })
}

pub fn describe_face(mesh: &CutCellMesh, f: FaceId) -> String {
    let (cell, loc) = mesh.face_location(f);
    let d = mesh.dim();
    let c = &cell[..d];
    match (mesh.face(f).kind, loc) {
        (FaceKind::Grid { .. }, Some((axis, _))) => {
            format!("grid face axis {axis} above cell {c:?}")
        }
        (FaceKind::Domain { .. }, Some((axis, side))) => {
            format!("domain face axis {axis} {side:?} of cell {c:?}")
        }
        _ => format!("embedded face of cell {c:?}"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StencilStats {
    pub faces: usize,
    /// Faces whose stencil was reused from an identical regular neighborhood.
    pub reused: usize,
    pub max_condition: f64,
    pub ill_conditioned: usize,
    pub max_residual: f64,
    pub max_entries: usize,
}

/// Stencils of every face in a compact column store. Columns index the
/// unknown space `[volumes | boundary faces]`, boundary faces numbered in
/// face order.
#[derive(Debug, Clone)]
pub struct StencilSet {
    n_volumes: usize,
    boundary: Vec<FaceId>,
    boundary_index: Vec<u32>,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    pub stats: StencilStats,
}

const NO_BOUNDARY: u32 = u32::MAX;

impl StencilSet {
    pub fn build(mesh: &CutCellMesh, cfg: &SchemeConfig, bc: &BoundaryConditions) -> Result<Self> {
        cfg.validate()?;
        let n_volumes = mesh.num_volumes();
        let boundary = mesh.boundary_faces();
        let mut boundary_index = vec![NO_BOUNDARY; mesh.faces().len()];
        for (i, f) in boundary.iter().enumerate() {
            boundary_index[f.index()] = i as u32;
        }
        let mut set = Self {
            n_volumes,
            boundary,
            boundary_index,
            offsets: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            stats: StencilStats::default(),
        };
        let mut cache: HashMap<(usize, Vec<[i32; 3]>), Vec<f64>> = HashMap::new();
        for f in mesh.face_ids() {
            set.stats.faces += 1;
            let stencil = set.face_stencil(mesh, f, cfg, bc, &mut cache)?;
            set.stats.max_entries = set.stats.max_entries.max(stencil.len());
            for (r, c) in stencil {
                set.cols.push(set.column(r));
                set.vals.push(c);
            }
            set.offsets.push(set.cols.len());
        }
        if set.stats.ill_conditioned > 0 {
            log::warn!(
                "{} of {} stencils have condition above {:.0e} (max {:.2e})",
                set.stats.ill_conditioned,
                set.stats.faces,
                ILL_CONDITIONED,
                set.stats.max_condition
            );
        }
        Ok(set)
    }

    fn face_stencil(
        &mut self,
        mesh: &CutCellMesh,
        f: FaceId,
        cfg: &SchemeConfig,
        bc: &BoundaryConditions,
        cache: &mut HashMap<(usize, Vec<[i32; 3]>), Vec<f64>>,
    ) -> Result<Vec<(StencilRef, f64)>> {
        if bc.kind(mesh, f) == Some(BcKind::Neumann) {
            return Ok(vec![(StencilRef::Boundary(f), mesh.face_measure(f))]);
        }
        let nb = mesh.face_neighbors(f, cfg.radius, cfg.metric);
        let regular = nb.boundary_faces.is_empty()
            && nb
                .volumes
                .iter()
                .all(|&v| mesh.volume(v).kind == CellKind::Full);
        let rows: Vec<StencilRef> = nb
            .volumes
            .iter()
            .map(|&v| StencilRef::Volume(v))
            .chain(nb.boundary_faces.iter().map(|&b| StencilRef::Boundary(b)))
            .collect();
        let key = match (regular, mesh.face(f).kind) {
            (true, FaceKind::Grid { axis, lo, .. }) => {
                let base = mesh.volume(lo).cell;
                let offs = nb
                    .volumes
                    .iter()
                    .map(|&v| {
                        let c = mesh.volume(v).cell;
                        [0, 1, 2].map(|d| c[d] as i32 - base[d] as i32)
                    })
                    .collect();
                Some((axis, offs))
            }
            _ => None,
        };
        if let Some(k) = &key {
            if let Some(s) = cache.get(k) {
                self.stats.reused += 1;
                return Ok(rows.into_iter().zip(s.iter().copied()).collect());
            }
        }
        let sys = system_for_rows(mesh, f, rows, cfg, bc);
        let sol = solve_min_norm(&sys, || describe_face(mesh, f))?;
        self.stats.max_condition = self.stats.max_condition.max(sol.condition);
        self.stats.max_residual = self.stats.max_residual.max(sol.residual);
        if sol.condition > ILL_CONDITIONED {
            self.stats.ill_conditioned += 1;
            log::debug!(
                "{}: condition {:.2e}",
                describe_face(mesh, f),
                sol.condition
            );
        }
        if let Some(k) = key {
            cache.insert(k, sol.s.clone());
        }
        Ok(sys.rows.into_iter().zip(sol.s).collect())
    }

    fn column(&self, r: StencilRef) -> u32 {
        match r {
            StencilRef::Volume(v) => v.0,
            StencilRef::Boundary(f) => self.n_volumes as u32 + self.boundary_index[f.index()],
        }
    }

    pub fn num_volumes(&self) -> usize {
        self.n_volumes
    }

    /// Boundary faces in boundary numbering.
    pub fn boundary_faces(&self) -> &[FaceId] {
        &self.boundary
    }

    /// Position of a boundary face in the boundary numbering.
    pub fn boundary_index(&self, f: FaceId) -> Option<usize> {
        let i = self.boundary_index[f.index()];
        (i != NO_BOUNDARY).then_some(i as usize)
    }

    /// Columns in `[volumes | boundary]` space and coefficients of a face.
    pub fn raw(&self, f: FaceId) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[f.index()], self.offsets[f.index() + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn stencil(&self, f: FaceId) -> FluxStencil {
        let (cols, vals) = self.raw(f);
        let entries = cols
            .iter()
            .zip(vals)
            .map(|(&c, &v)| {
                let r = if (c as usize) < self.n_volumes {
                    StencilRef::Volume(VolumeId(c))
                } else {
                    StencilRef::Boundary(self.boundary[c as usize - self.n_volumes])
                };
                (r, v)
            })
            .collect();
        FluxStencil { face: f, entries }
    }

    /// `sᵀΦ` for volume averages `phi` and boundary data `g`.
    pub fn apply(&self, f: FaceId, phi: &[f64], g: &[f64]) -> f64 {
        let (cols, vals) = self.raw(f);
        let n = self.n_volumes;
        cols.iter()
            .zip(vals)
            .map(|(&c, v)| {
                let c = c as usize;
                v * if c < n { phi[c] } else { g[c - n] }
            })
            .sum()
    }

    /// CSV dump `face,kind,ref,index,coefficient`.
    pub fn write_csv(&self, mesh: &CutCellMesh, mut w: impl Write) -> Result<()> {
        writeln!(w, "face,kind,ref,index,coefficient")?;
        for f in mesh.face_ids() {
            let kind = match mesh.face(f).kind {
                FaceKind::Grid { .. } => "grid",
                FaceKind::Domain { .. } => "domain",
                FaceKind::Eb { .. } => "eb",
            };
            for (r, c) in self.stencil(f).entries {
                let (rk, i) = match r {
                    StencilRef::Volume(v) => ("volume", v.0),
                    StencilRef::Boundary(b) => ("boundary", b.0),
                };
                writeln!(w, "{},{kind},{rk},{i},{c:e}", f.0)?;
            }
        }
        Ok(())
    }
}
