use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Cell, Grid, ImplicitGeometry, LevelSet, Side};
use crate::moments::{
    eb_moments_from_rule, eb_rule, face_rule, full_cell_moments, full_face_moments, volume_rule,
    MomentKind, MomentSet, QuadOptions,
};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VolumeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FaceId(pub u32);

impl VolumeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl FaceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CellKind {
    Full,
    Cut,
    Covered,
}

#[derive(Debug, Clone)]
pub struct Volume {
    pub cell: Cell,
    pub kind: CellKind,
    pub kappa: f64,
    /// Moments about the cell center; `None` for full cells.
    pub moments: Option<MomentSet>,
    /// Faces bounding the volume with orientation: `+1` when the face's
    /// stencil normal points out of this volume.
    pub faces: Vec<(FaceId, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FaceKind {
    /// Shared face between `lo` and `hi = lo + e_axis`; normal `+e_axis`.
    Grid {
        axis: usize,
        lo: VolumeId,
        hi: VolumeId,
    },
    /// Face on the unit-box boundary; normal points out of the box.
    Domain {
        volume: VolumeId,
        axis: usize,
        side: Side,
    },
    /// Embedded-boundary face; normal `∇ψ/|∇ψ|`.
    Eb { volume: VolumeId },
}

#[derive(Debug, Clone)]
pub enum FaceMoments {
    /// Uncut grid-aligned face.
    Full,
    /// Cut grid-aligned face, moments about the uncut face center.
    Cut(MomentSet),
    /// Embedded-boundary moments about the cell center.
    Eb {
        scalar: MomentSet,
        normal: Vec<MomentSet>,
    },
}

#[derive(Debug, Clone)]
pub struct Face {
    pub kind: FaceKind,
    /// Area fraction `|A_f| / h^{D−1}`.
    pub alpha: f64,
    pub moments: FaceMoments,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        !matches!(self.kind, FaceKind::Grid { .. })
    }
}

/// How "within `R_n` cells" is measured when collecting neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMetric {
    /// Path length through face-adjacent in-domain volumes.
    Path,
    /// Chebyshev distance between cell indices. Path neighborhoods around
    /// slivers next to a tangency are too thin and give operators with
    /// large positive eigenvalues.
    #[default]
    Box,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Neighborhood {
    pub volumes: Vec<VolumeId>,
    pub boundary_faces: Vec<FaceId>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.volumes.len() + self.boundary_faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MeshOptions {
    pub quad: QuadOptions,
    /// Highest moment degree stored per region.
    pub max_order: usize,
    /// Volume and area fractions at or below this are treated as empty.
    pub empty_fraction: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            quad: QuadOptions::default(),
            max_order: 5,
            empty_fraction: 1e-12,
        }
    }
}

/// Cut-cell discretization of `Ω ∩ [0,1]^D`: one volume per non-covered cell.
#[derive(Debug, Clone)]
pub struct CutCellMesh {
    pub geometry: ImplicitGeometry,
    pub grid: Grid,
    pub options: MeshOptions,
    volumes: Vec<Volume>,
    faces: Vec<Face>,
    cell_to_volume: Vec<u32>,
}

const NONE: u32 = u32::MAX;

struct CellInfo {
    kind: CellKind,
    kappa: f64,
    moments: Option<MomentSet>,
    eb: Option<(f64, MomentSet, Vec<MomentSet>)>,
}

impl CutCellMesh {
    pub fn build(geometry: &ImplicitGeometry, grid: Grid, options: MeshOptions) -> Result<Self> {
        if geometry.dim() != grid.dim {
            return Err(Error::InvalidGrid(format!(
                "geometry is {}D but grid is {}D",
                geometry.dim(),
                grid.dim
            )));
        }
        let h = grid.h;
        let hd = h.powi(grid.dim as i32);
        let hf = h.powi(grid.dim as i32 - 1);
        let tol = options.empty_fraction;

        let mut info: Vec<CellInfo> = Vec::with_capacity(grid.num_cells());
        for cell in grid.cells() {
            let (lo, hi) = (grid.cell_lo(&cell), grid.cell_hi(&cell));
            let (a, b) = geometry.bounds(&lo, &hi);
            let ci = if b < 0.0 {
                CellInfo {
                    kind: CellKind::Full,
                    kappa: 1.0,
                    moments: None,
                    eb: None,
                }
            } else if a > 0.0 {
                CellInfo {
                    kind: CellKind::Covered,
                    kappa: 0.0,
                    moments: None,
                    eb: None,
                }
            } else {
                check_single_cut(geometry, &grid, &cell)?;
                let center = grid.cell_center(&cell);
                let vr = volume_rule(geometry, &grid, &cell, &options.quad)?;
                let sr = eb_rule(geometry, &grid, &cell, &options.quad)?;
                let kappa = vr.measure() / hd;
                let area = sr.measure() / hf;
                if area <= tol {
                    // tangency: snap to full or covered
                    if kappa > 0.5 {
                        CellInfo {
                            kind: CellKind::Full,
                            kappa: 1.0,
                            moments: None,
                            eb: None,
                        }
                    } else {
                        CellInfo {
                            kind: CellKind::Covered,
                            kappa: 0.0,
                            moments: None,
                            eb: None,
                        }
                    }
                } else if kappa <= tol {
                    CellInfo {
                        kind: CellKind::Covered,
                        kappa: 0.0,
                        moments: None,
                        eb: None,
                    }
                } else {
                    let m = MomentSet::from_points(
                        MomentKind::Volume,
                        center,
                        grid.dim,
                        options.max_order,
                        &vr.points,
                        vr.weights.iter().copied(),
                    );
                    let (s, n) = eb_moments_from_rule(&sr, &center, grid.dim, options.max_order);
                    CellInfo {
                        kind: CellKind::Cut,
                        kappa,
                        moments: Some(m),
                        eb: Some((area, s, n)),
                    }
                }
            };
            info.push(ci);
        }

        let mut cell_to_volume = vec![NONE; grid.num_cells()];
        let mut volumes = Vec::new();
        let mut ebs = Vec::new();
        for (k, ci) in info.into_iter().enumerate() {
            if ci.kind == CellKind::Covered {
                continue;
            }
            cell_to_volume[k] = volumes.len() as u32;
            volumes.push(Volume {
                cell: grid.unflat(k),
                kind: ci.kind,
                kappa: ci.kappa,
                moments: ci.moments,
                faces: Vec::new(),
            });
            ebs.push(ci.eb);
        }

        let mut mesh = Self {
            geometry: geometry.clone(),
            grid,
            options,
            volumes,
            faces: Vec::new(),
            cell_to_volume,
        };
        mesh.enumerate_faces(ebs)?;
        Ok(mesh)
    }

    fn enumerate_faces(
        &mut self,
        mut ebs: Vec<Option<(f64, MomentSet, Vec<MomentSet>)>>,
    ) -> Result<()> {
        let grid = self.grid;
        let hf = grid.h.powi(grid.dim as i32 - 1);
        let tol = self.options.empty_fraction;
        let mut faces = Vec::new();
        let mut links: Vec<Vec<(FaceId, f64)>> = vec![Vec::new(); self.volumes.len()];
        for vi in 0..self.volumes.len() {
            let v = &self.volumes[vi];
            let cell = v.cell;
            let full = v.kind == CellKind::Full;
            let vid = VolumeId(vi as u32);
            for axis in 0..grid.dim {
                if cell[axis] == 0 {
                    if let Some((alpha, m)) =
                        self.face_data(&cell, axis, Side::Low, full, hf, tol)?
                    {
                        let id = FaceId(faces.len() as u32);
                        faces.push(Face {
                            kind: FaceKind::Domain {
                                volume: vid,
                                axis,
                                side: Side::Low,
                            },
                            alpha,
                            moments: m,
                        });
                        links[vi].push((id, 1.0));
                    }
                }
            }
            for axis in 0..grid.dim {
                match grid.neighbor(&cell, axis, Side::High) {
                    None => {
                        if let Some((alpha, m)) =
                            self.face_data(&cell, axis, Side::High, full, hf, tol)?
                        {
                            let id = FaceId(faces.len() as u32);
                            faces.push(Face {
                                kind: FaceKind::Domain {
                                    volume: vid,
                                    axis,
                                    side: Side::High,
                                },
                                alpha,
                                moments: m,
                            });
                            links[vi].push((id, 1.0));
                        }
                    }
                    Some(nb) => {
                        let wi = self.cell_to_volume[grid.flat(&nb)];
                        if wi == NONE {
                            continue;
                        }
                        let both_full = full || self.volumes[wi as usize].kind == CellKind::Full;
                        if let Some((alpha, m)) =
                            self.face_data(&cell, axis, Side::High, both_full, hf, tol)?
                        {
                            let id = FaceId(faces.len() as u32);
                            faces.push(Face {
                                kind: FaceKind::Grid {
                                    axis,
                                    lo: vid,
                                    hi: VolumeId(wi),
                                },
                                alpha,
                                moments: m,
                            });
                            links[vi].push((id, 1.0));
                            links[wi as usize].push((id, -1.0));
                        }
                    }
                }
            }
            if let Some((alpha, scalar, normal)) = ebs[vi].take() {
                let id = FaceId(faces.len() as u32);
                faces.push(Face {
                    kind: FaceKind::Eb { volume: vid },
                    alpha,
                    moments: FaceMoments::Eb { scalar, normal },
                });
                links[vi].push((id, 1.0));
            }
        }
        for (v, mut l) in self.volumes.iter_mut().zip(links) {
            l.sort_by_key(|(f, _)| *f);
            v.faces = l;
        }
        self.faces = faces;
        Ok(())
    }

    /// Area fraction and moments of a grid-aligned face, or `None` if empty.
    fn face_data(
        &self,
        cell: &Cell,
        axis: usize,
        side: Side,
        adjacent_full: bool,
        hf: f64,
        tol: f64,
    ) -> Result<Option<(f64, FaceMoments)>> {
        if adjacent_full {
            return Ok(Some((1.0, FaceMoments::Full)));
        }
        let (lo, hi) = self.grid.face_box(cell, axis, side);
        let (a, b) = self.geometry.bounds(&lo, &hi);
        if b < 0.0 {
            return Ok(Some((1.0, FaceMoments::Full)));
        }
        if a > 0.0 {
            return Ok(None);
        }
        let rule = face_rule(
            &self.geometry,
            &self.grid,
            cell,
            axis,
            side,
            &self.options.quad,
        )?;
        let alpha = rule.measure() / hf;
        if alpha <= tol {
            return Ok(None);
        }
        let m = MomentSet::from_points(
            MomentKind::GridFace,
            self.grid.face_center(cell, axis, side),
            self.grid.dim,
            self.options.max_order,
            &rule.points,
            rule.weights.iter().copied(),
        );
        Ok(Some((alpha, FaceMoments::Cut(m))))
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.volumes
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn volume(&self, id: VolumeId) -> &Volume {
        &self.volumes[id.index()]
    }

    pub fn face(&self, id: FaceId) -> &Face {
        &self.faces[id.index()]
    }

    pub fn num_volumes(&self) -> usize {
        self.volumes.len()
    }

    pub fn volume_at(&self, cell: &Cell) -> Option<VolumeId> {
        let k = self.cell_to_volume[self.grid.flat(cell)];
        (k != NONE).then_some(VolumeId(k))
    }

    pub fn cell_kind(&self, cell: &Cell) -> CellKind {
        self.volume_at(cell)
            .map_or(CellKind::Covered, |v| self.volume(v).kind)
    }

    pub fn face_ids(&self) -> impl Iterator<Item = FaceId> {
        (0..self.faces.len() as u32).map(FaceId)
    }

    /// Boundary faces (domain and embedded) in face order.
    pub fn boundary_faces(&self) -> Vec<FaceId> {
        self.face_ids()
            .filter(|&f| self.face(f).is_boundary())
            .collect()
    }

    pub fn smallest_kappa(&self) -> f64 {
        self.volumes.iter().map(|v| v.kappa).fold(1.0, f64::min)
    }

    /// `|V_v| = κ_v h^D`.
    pub fn volume_measure(&self, v: VolumeId) -> f64 {
        self.volume(v).kappa * self.grid.h.powi(self.grid.dim as i32)
    }

    /// `|A_f| = α_f h^{D−1}`.
    pub fn face_measure(&self, f: FaceId) -> f64 {
        self.face(f).alpha * self.grid.h.powi(self.grid.dim as i32 - 1)
    }

    pub fn volume_moments(&self, v: VolumeId) -> MomentSet {
        let vol = self.volume(v);
        match &vol.moments {
            Some(m) => m.clone(),
            None => full_cell_moments(&self.grid, &vol.cell, self.options.max_order),
        }
    }

    /// Scalar moments of a face: grid faces about their center, EB faces
    /// about the cell center.
    pub fn face_scalar_moments(&self, f: FaceId) -> MomentSet {
        let face = self.face(f);
        match (&face.moments, face.kind) {
            (FaceMoments::Cut(m), _) => m.clone(),
            (FaceMoments::Eb { scalar, .. }, _) => scalar.clone(),
            (FaceMoments::Full, FaceKind::Grid { axis, lo, .. }) => full_face_moments(
                &self.grid,
                &self.volume(lo).cell,
                axis,
                Side::High,
                self.options.max_order,
            ),
            (FaceMoments::Full, FaceKind::Domain { volume, axis, side }) => full_face_moments(
                &self.grid,
                &self.volume(volume).cell,
                axis,
                side,
                self.options.max_order,
            ),
            (FaceMoments::Full, FaceKind::Eb { .. }) => {
                unreachable!("EB faces always carry moments")
            }
        }
    }

    /// Normal-weighted moments `m^p_{d,f}` for each axis `d`, using the
    /// face's stencil normal.
    pub fn face_normal_moments(&self, f: FaceId) -> Vec<MomentSet> {
        let face = self.face(f);
        if let FaceMoments::Eb { normal, .. } = &face.moments {
            return normal.clone();
        }
        let scalar = self.face_scalar_moments(f);
        let n = self
            .face_normal(f)
            .expect("grid faces have constant normals");
        (0..self.dim())
            .map(|d| {
                let mut m = scalar.clone();
                m.kind = MomentKind::EbNormal(d);
                for v in &mut m.values {
                    *v *= n[d];
                }
                m
            })
            .collect()
    }

    /// Constant unit normal of a grid-aligned face (stencil orientation).
    pub fn face_normal(&self, f: FaceId) -> Option<Point> {
        let mut n = [0.0; 3];
        match self.face(f).kind {
            FaceKind::Grid { axis, .. } => n[axis] = 1.0,
            FaceKind::Domain { axis, side, .. } => n[axis] = side.sign(),
            FaceKind::Eb { .. } => return None,
        }
        Some(n)
    }

    /// The cell and side identifying a grid-aligned face geometrically.
    pub fn face_location(&self, f: FaceId) -> (Cell, Option<(usize, Side)>) {
        match self.face(f).kind {
            FaceKind::Grid { axis, lo, .. } => (self.volume(lo).cell, Some((axis, Side::High))),
            FaceKind::Domain { volume, axis, side } => {
                (self.volume(volume).cell, Some((axis, side)))
            }
            FaceKind::Eb { volume } => (self.volume(volume).cell, None),
        }
    }

    /// Uncut face center for grid-aligned faces; cell center for EB faces.
    pub fn face_center(&self, f: FaceId) -> Point {
        match self.face_location(f) {
            (c, Some((axis, side))) => self.grid.face_center(&c, axis, side),
            (c, None) => self.grid.cell_center(&c),
        }
    }

    pub fn volume_neighbors(
        &self,
        v: VolumeId,
        radius: usize,
        metric: NeighborMetric,
    ) -> Neighborhood {
        let mut vols = self.volume_ball(v, radius, metric);
        vols.sort();
        self.with_boundary(vols)
    }

    /// Neighbors of a face: the union of its adjacent volumes' neighbors.
    pub fn face_neighbors(&self, f: FaceId, radius: usize, metric: NeighborMetric) -> Neighborhood {
        let mut vols = match self.face(f).kind {
            FaceKind::Grid { lo, hi, .. } => {
                let mut a = self.volume_ball(lo, radius, metric);
                a.extend(self.volume_ball(hi, radius, metric));
                a
            }
            FaceKind::Domain { volume, .. } | FaceKind::Eb { volume } => {
                self.volume_ball(volume, radius, metric)
            }
        };
        vols.sort();
        vols.dedup();
        self.with_boundary(vols)
    }

    fn with_boundary(&self, volumes: Vec<VolumeId>) -> Neighborhood {
        let mut boundary_faces: Vec<FaceId> = volumes
            .iter()
            .flat_map(|&v| self.volume(v).faces.iter().map(|(f, _)| *f))
            .filter(|&f| self.face(f).is_boundary())
            .collect();
        boundary_faces.sort();
        boundary_faces.dedup();
        Neighborhood {
            volumes,
            boundary_faces,
        }
    }

    fn volume_ball(&self, v: VolumeId, radius: usize, metric: NeighborMetric) -> Vec<VolumeId> {
        match metric {
            NeighborMetric::Path => {
                let mut seen = vec![v];
                let mut queue = VecDeque::from([(v, 0usize)]);
                while let Some((w, d)) = queue.pop_front() {
                    if d == radius {
                        continue;
                    }
                    for (f, _) in &self.volume(w).faces {
                        if let FaceKind::Grid { lo, hi, .. } = self.face(*f).kind {
                            let u = if lo == w { hi } else { lo };
                            if !seen.contains(&u) {
                                seen.push(u);
                                queue.push_back((u, d + 1));
                            }
                        }
                    }
                }
                seen
            }
            NeighborMetric::Box => {
                let c = self.volume(v).cell;
                let n = self.grid.n as isize;
                let r = radius as isize;
                let mut out = Vec::new();
                let span = |d: usize| -> std::ops::RangeInclusive<isize> {
                    if d < self.grid.dim {
                        (c[d] as isize - r).max(0)..=(c[d] as isize + r).min(n - 1)
                    } else {
                        0..=0
                    }
                };
                for i in span(0) {
                    for j in span(1) {
                        for k in span(2) {
                            if let Some(w) = self.volume_at(&[i as usize, j as usize, k as usize]) {
                                out.push(w);
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// CSV dump of stored moments: `i,j,k,kind,p0,p1,p2,value`.
    pub fn write_moments_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "i,j,k,kind,p0,p1,p2,value")?;
        let mut row = |cell: &Cell, kind: &str, m: &MomentSet| -> std::io::Result<()> {
            for (p, v) in m.basis().exponents().iter().zip(&m.values) {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{:e}",
                    cell[0], cell[1], cell[2], kind, p[0], p[1], p[2], v
                )?;
            }
            Ok(())
        };
        for f in self.face_ids() {
            let face = self.face(f);
            let (cell, loc) = self.face_location(f);
            match (&face.moments, loc) {
                (FaceMoments::Cut(m), Some((axis, side))) => {
                    row(&cell, &format!("face-{axis}-{side:?}").to_lowercase(), m)?
                }
                (FaceMoments::Eb { scalar, normal }, _) => {
                    if let Some(vm) = &self.volume(self.owner(f)).moments {
                        row(&cell, "volume", vm)?;
                    }
                    row(&cell, "eb", scalar)?;
                    for (d, m) in normal.iter().enumerate() {
                        row(&cell, &format!("eb-normal-{d}"), m)?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn owner(&self, f: FaceId) -> VolumeId {
        match self.face(f).kind {
            FaceKind::Grid { lo, .. } => lo,
            FaceKind::Domain { volume, .. } | FaceKind::Eb { volume } => volume,
        }
    }
}

/// Fails if any edge of the cell crosses `ψ = 0` more than once, or any
/// cell face has more than two crossings on its boundary.
fn check_single_cut(geom: &ImplicitGeometry, grid: &Grid, cell: &Cell) -> Result<()> {
    let dim = grid.dim;
    let (lo, hi) = (grid.cell_lo(cell), grid.cell_hi(cell));
    let corner = |bits: usize| -> Point {
        let mut x = lo;
        for d in 0..dim {
            if bits >> d & 1 == 1 {
                x[d] = hi[d];
            }
        }
        x
    };
    let mut edge_roots = std::collections::HashMap::new();
    for bits in 0..(1usize << dim) {
        for axis in 0..dim {
            if bits >> axis & 1 == 1 {
                continue;
            }
            let a = corner(bits);
            let mut b = a;
            b[axis] = hi[axis];
            let n = count_roots(geom, &a, &b, axis, 0);
            if n > 1 {
                return Err(Error::MultiCut { cell: *cell });
            }
            edge_roots.insert((bits, axis), n);
        }
    }
    // Each cell face normal to `fa` at low/high has four edges.
    for fa in 0..dim {
        for top in 0..2usize {
            let mut total = 0;
            for (&(bits, axis), &n) in &edge_roots {
                if axis != fa && (bits >> fa & 1) == top {
                    total += n;
                }
            }
            if total > 2 {
                return Err(Error::MultiCut { cell: *cell });
            }
        }
    }
    Ok(())
}

fn count_roots(geom: &ImplicitGeometry, a: &Point, b: &Point, axis: usize, depth: usize) -> usize {
    let (lo, hi) = geom.bounds(a, b);
    if lo > 0.0 || hi < 0.0 {
        return 0;
    }
    let (g0, g1) = geom.grad_bounds(a, b, axis);
    let (fa, fb) = (geom.value(a), geom.value(b));
    if g0 > 0.0 || g1 < 0.0 || depth >= 24 {
        return usize::from(fa * fb < 0.0 || (fb == 0.0 && fa != 0.0));
    }
    let mut mid = *a;
    mid[axis] = 0.5 * (a[axis] + b[axis]);
    count_roots(geom, a, &mid, axis, depth + 1) + count_roots(geom, &mid, b, axis, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeometryDescriptor, Shape};

    fn circle_mesh(n: usize, center: [f64; 2]) -> CutCellMesh {
        let g = ImplicitGeometry::build(&GeometryDescriptor::circle_with(
            center,
            0.25,
            crate::geometry::Sense::Exterior,
        ))
        .unwrap();
        CutCellMesh::build(&g, Grid::new(2, n).unwrap(), MeshOptions::default()).unwrap()
    }

    #[test]
    fn no_interface_means_all_full() {
        let g = ImplicitGeometry::new(
            "all",
            Shape::HalfSpace {
                dim: 2,
                normal: [1.0, 0.0, 0.0],
                offset: 5.0,
            },
        );
        let m = CutCellMesh::build(&g, Grid::new(2, 8).unwrap(), MeshOptions::default()).unwrap();
        assert_eq!(m.num_volumes(), 64);
        assert!(m.volumes().iter().all(|v| v.kind == CellKind::Full));
        assert!(m
            .faces()
            .iter()
            .all(|f| !matches!(f.kind, FaceKind::Eb { .. })));
        assert_eq!(m.boundary_faces().len(), 32);
    }

    #[test]
    fn grid_faces_are_shared_and_boundary_faces_owned_once() {
        let m = circle_mesh(16, [0.5, 0.5]);
        let mut count = vec![0usize; m.faces().len()];
        for v in m.volumes() {
            for (f, _) in &v.faces {
                count[f.index()] += 1;
            }
        }
        for (f, c) in m.faces().iter().zip(count) {
            assert_eq!(c, if f.is_boundary() { 1 } else { 2 });
        }
    }

    #[test]
    fn area_partition_matches_analytic() {
        let m = circle_mesh(32, [0.5, 0.5]);
        let total: f64 = m.volumes().iter().map(|v| v.kappa).sum::<f64>() * m.grid.h * m.grid.h;
        let exact = 1.0 - std::f64::consts::PI * 0.0625;
        assert!((total - exact).abs() < 1e-12, "{}", total - exact);
    }

    #[test]
    fn smallest_volume_fractions_match_known_values() {
        let k = circle_mesh(32, [0.5, 0.5]).smallest_kappa();
        assert!(k > 4.5e-3 / 1.5 && k < 4.5e-3 * 1.5, "{k}");
        let k = circle_mesh(32, [0.51, 0.5]).smallest_kappa();
        assert!(k > 3.6e-4 / 2.0 && k < 3.6e-4 * 2.0, "{k}");
    }

    #[test]
    fn facing_cut_cells_agree_on_area_fraction() {
        let m = circle_mesh(32, [0.501, 0.501]);
        for f in m.face_ids() {
            if let FaceKind::Grid { axis, lo, hi } = m.face(f).kind {
                let (clo, chi) = (m.volume(lo).cell, m.volume(hi).cell);
                let a = face_rule(
                    &m.geometry,
                    &m.grid,
                    &clo,
                    axis,
                    Side::High,
                    &m.options.quad,
                )
                .unwrap()
                .measure();
                let b = face_rule(&m.geometry, &m.grid, &chi, axis, Side::Low, &m.options.quad)
                    .unwrap()
                    .measure();
                assert!((a - b).abs() < 1e-15, "{a} {b}");
                assert!((m.face(f).alpha - a / m.grid.h).abs() < 1e-12);
            }
        }
    }

    /// Brute-force BFS over a fully open patch, independent of the mesh.
    fn diamond_count(radius: i64) -> usize {
        let mut n = 0;
        for i in -radius..=radius {
            for j in -radius..=radius {
                if i.abs() + j.abs() <= radius {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn interior_neighborhood_is_a_diamond() {
        let m = circle_mesh(32, [0.5, 0.5]);
        let v = m.volume_at(&[3, 16, 0]).unwrap();
        let nb = m.volume_neighbors(v, 2, NeighborMetric::Path);
        assert_eq!(diamond_count(2), 13);
        assert_eq!(nb.volumes.len(), 13);
        assert!(nb.boundary_faces.is_empty());
        let nb3 = m.volume_neighbors(v, 3, NeighborMetric::Path);
        assert_eq!(nb3.volumes.len(), diamond_count(3));
        let boxed = m.volume_neighbors(v, 2, NeighborMetric::Box);
        assert_eq!(boxed.volumes.len(), 25);
    }

    #[test]
    fn neighbors_include_eb_faces_and_union_for_faces() {
        let m = circle_mesh(16, [0.5, 0.5]);
        let cut = m
            .volumes()
            .iter()
            .position(|v| v.kind == CellKind::Cut)
            .map(|i| VolumeId(i as u32))
            .unwrap();
        let eb = m
            .volume(cut)
            .faces
            .iter()
            .map(|(f, _)| *f)
            .find(|&f| matches!(m.face(f).kind, FaceKind::Eb { .. }))
            .unwrap();
        let nb = m.volume_neighbors(cut, 1, NeighborMetric::Path);
        assert!(nb.boundary_faces.contains(&eb));
        for f in m.face_ids() {
            if let FaceKind::Grid { lo, hi, .. } = m.face(f).kind {
                let a = m.volume_neighbors(lo, 2, NeighborMetric::Path);
                let b = m.volume_neighbors(hi, 2, NeighborMetric::Path);
                let mut vols = [a.volumes, b.volumes].concat();
                vols.sort();
                vols.dedup();
                let mut faces = [a.boundary_faces, b.boundary_faces].concat();
                faces.sort();
                faces.dedup();
                let nf = m.face_neighbors(f, 2, NeighborMetric::Path);
                assert_eq!(nf.volumes, vols);
                assert_eq!(nf.boundary_faces, faces);
            }
        }
    }

    #[test]
    fn neighborhood_symmetry() {
        let m = circle_mesh(16, [0.51, 0.5]);
        let n = m.num_volumes();
        let sets: Vec<Vec<VolumeId>> = (0..n)
            .map(|i| {
                m.volume_neighbors(VolumeId(i as u32), 2, NeighborMetric::Path)
                    .volumes
            })
            .collect();
        for i in 0..n {
            for w in &sets[i] {
                assert!(sets[w.index()].contains(&VolumeId(i as u32)));
            }
        }
    }

    #[test]
    fn multi_cut_edges_are_rejected() {
        // A tiny circle straddling one cell edge crosses it twice.
        let g = ImplicitGeometry::new(
            "bubble",
            Shape::Circle {
                center: [0.375, 0.5],
                radius: 0.05,
                sense: crate::geometry::Sense::Exterior,
            },
        );
        let err = CutCellMesh::build(&g, Grid::new(2, 4).unwrap(), MeshOptions::default());
        assert!(matches!(err, Err(Error::MultiCut { .. })));
    }

    #[test]
    fn build_is_deterministic() {
        let a = circle_mesh(16, [0.51, 0.5]);
        let b = circle_mesh(16, [0.51, 0.5]);
        assert_eq!(a.num_volumes(), b.num_volumes());
        for (x, y) in a.volumes().iter().zip(b.volumes()) {
            assert_eq!(x.kappa.to_bits(), y.kappa.to_bits());
            assert_eq!(x.faces, y.faces);
        }
    }
}
