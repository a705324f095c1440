//! Monomial moments of cut volumes, grid faces and embedded-boundary faces.
//!
//! All moments are physical: `m^p(x₀) = ∫ (x − x₀)^p` over the region, in
//! units of `h^{|p|+D}` for volumes and `h^{|p|+D−1}` for faces.

use std::sync::OnceLock;

use serde::Serialize;

use crate::geometry::{Cell, Grid, LevelSet, Side};
use crate::quadrature::{ImplicitQuadrature, QuadRule, SurfaceRule};
use crate::{Error, Point, Result};

/// Exponent tuple `p = (p₁, …, p_D)`; components past the dimension are 0.
pub type MultiIndex = [u8; 3];

pub fn degree(p: &MultiIndex) -> usize {
    p.iter().map(|&v| v as usize).sum()
}

/// All multi-indices with `|p| ≤ max_degree`, graded then lexicographic.
#[derive(Debug)]
pub struct MonomialBasis {
    pub dim: usize,
    pub max_degree: usize,
    exps: Vec<MultiIndex>,
    lookup: Vec<u32>,
}

const MAX_CACHED_DEGREE: usize = 10;

impl MonomialBasis {
    fn build(dim: usize, max_degree: usize) -> Self {
        let mut exps = Vec::new();
        for deg in 0..=max_degree {
            let mut level = Vec::new();
            for a in 0..=deg {
                if dim == 2 {
                    level.push([a as u8, (deg - a) as u8, 0]);
                } else {
                    for b in 0..=(deg - a) {
                        level.push([a as u8, b as u8, (deg - a - b) as u8]);
                    }
                }
            }
            level.sort_by(|x, y| y.cmp(x));
            exps.extend(level);
        }
        let m = max_degree + 1;
        let mut lookup = vec![u32::MAX; m * m * m];
        for (i, p) in exps.iter().enumerate() {
            lookup[(p[0] as usize * m + p[1] as usize) * m + p[2] as usize] = i as u32;
        }
        Self {
            dim,
            max_degree,
            exps,
            lookup,
        }
    }

    /// Shared basis for `dim ∈ {2, 3}`.
    pub fn get(dim: usize, max_degree: usize) -> &'static MonomialBasis {
        static CACHE: OnceLock<Vec<MonomialBasis>> = OnceLock::new();
        assert!((2..=3).contains(&dim) && max_degree <= MAX_CACHED_DEGREE);
        let all = CACHE.get_or_init(|| {
            let mut v = Vec::new();
            for d in 2..=3 {
                for k in 0..=MAX_CACHED_DEGREE {
                    v.push(Self::build(d, k));
                }
            }
            v
        });
        &all[(dim - 2) * (MAX_CACHED_DEGREE + 1) + max_degree]
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self) -> &[MultiIndex] {
        &self.exps
    }

    pub fn index(&self, p: &MultiIndex) -> Option<usize> {
        let m = self.max_degree + 1;
        if p.iter().any(|&v| v as usize >= m) || (self.dim == 2 && p[2] != 0) {
            return None;
        }
        let i = self.lookup[(p[0] as usize * m + p[1] as usize) * m + p[2] as usize];
        (i != u32::MAX).then_some(i as usize)
    }
}

/// Number of monomials with `|p| < order` in `dim` dimensions, `C(order−1+D, D)`.
pub fn monomial_count(dim: usize, order: usize) -> usize {
    if order == 0 {
        return 0;
    }
    binomial(order - 1 + dim, dim) as usize
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MomentKind {
    Volume,
    GridFace,
    EbScalar,
    /// Weighted by the `d`th component of the outward normal.
    EbNormal(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub kind: MomentKind,
    pub x0: Point,
    pub dim: usize,
    pub max_order: usize,
    pub values: Vec<f64>,
}

impl MomentSet {
    pub fn zeros(kind: MomentKind, x0: Point, dim: usize, max_order: usize) -> Self {
        Self {
            kind,
            x0,
            dim,
            max_order,
            values: vec![0.0; MonomialBasis::get(dim, max_order).len()],
        }
    }

    pub fn basis(&self) -> &'static MonomialBasis {
        MonomialBasis::get(self.dim, self.max_order)
    }

    /// `m^p`, or 0 for `|p|` beyond `max_order`.
    pub fn get(&self, p: &MultiIndex) -> f64 {
        self.basis().index(p).map_or(0.0, |i| self.values[i])
    }

    pub fn measure(&self) -> f64 {
        self.values[0]
    }

    /// Accumulates `Σ wᵢ·scaleᵢ·(xᵢ − x₀)^p` with compensated summation.
    pub fn from_points(
        kind: MomentKind,
        x0: Point,
        dim: usize,
        max_order: usize,
        points: &[Point],
        weights: impl Iterator<Item = f64>,
    ) -> Self {
        let basis = MonomialBasis::get(dim, max_order);
        let n = basis.len();
        let mut sum = vec![0.0; n];
        let mut comp = vec![0.0; n];
        let mut pw = [[0.0f64; MAX_CACHED_DEGREE + 1]; 3];
        for (x, w) in points.iter().zip(weights) {
            for d in 0..3 {
                pw[d][0] = 1.0;
                let t = if d < dim { x[d] - x0[d] } else { 0.0 };
                for k in 1..=max_order {
                    pw[d][k] = pw[d][k - 1] * t;
                }
            }
            for (i, p) in basis.exps.iter().enumerate() {
                let v = w * pw[0][p[0] as usize] * pw[1][p[1] as usize] * pw[2][p[2] as usize];
                // Neumaier summation
                let s = sum[i] + v;
                if sum[i].abs() >= v.abs() {
                    comp[i] += (sum[i] - s) + v;
                } else {
                    comp[i] += (v - s) + sum[i];
                }
                sum[i] = s;
            }
        }
        for i in 0..n {
            sum[i] += comp[i];
        }
        Self {
            kind,
            x0,
            dim,
            max_order,
            values: sum,
        }
    }

    /// Moments about `x1` via `(x−x₁)^p = Σ_{q≤p} C(p,q) (x₀−x₁)^{p−q} (x−x₀)^q`.
    pub fn shifted(&self, x1: &Point) -> MomentSet {
        let basis = self.basis();
        let mut delta = [0.0; 3];
        for d in 0..self.dim {
            delta[d] = self.x0[d] - x1[d];
        }
        let mut pw = [[0.0f64; MAX_CACHED_DEGREE + 1]; 3];
        for d in 0..3 {
            pw[d][0] = 1.0;
            for k in 1..=self.max_order {
                pw[d][k] = pw[d][k - 1] * delta[d];
            }
        }
        let mut out = vec![0.0; basis.len()];
        for (i, p) in basis.exps.iter().enumerate() {
            let mut acc = 0.0;
            for q0 in 0..=p[0] {
                let c0 = binomial(p[0] as usize, q0 as usize) * pw[0][(p[0] - q0) as usize];
                for q1 in 0..=p[1] {
                    let c1 =
                        c0 * binomial(p[1] as usize, q1 as usize) * pw[1][(p[1] - q1) as usize];
                    for q2 in 0..=p[2] {
                        let c2 =
                            c1 * binomial(p[2] as usize, q2 as usize) * pw[2][(p[2] - q2) as usize];
                        if c2 != 0.0 {
                            acc += c2 * self.get(&[q0, q1, q2]);
                        }
                    }
                }
            }
            out[i] = acc;
        }
        MomentSet {
            kind: self.kind,
            x0: *x1,
            dim: self.dim,
            max_order: self.max_order,
            values: out,
        }
    }
}

/// `∫_{-a}^{a} t^p dt`.
fn sym_power_integral(a: f64, p: u8) -> f64 {
    if p % 2 == 1 {
        0.0
    } else {
        2.0 * a.powi(p as i32 + 1) / (p as f64 + 1.0)
    }
}

/// Analytic moments of an uncut cell about its center.
pub fn full_cell_moments(grid: &Grid, cell: &Cell, max_order: usize) -> MomentSet {
    let mut m = MomentSet::zeros(
        MomentKind::Volume,
        grid.cell_center(cell),
        grid.dim,
        max_order,
    );
    let a = 0.5 * grid.h;
    for (i, p) in m.basis().exps.iter().enumerate() {
        m.values[i] = (0..grid.dim).map(|d| sym_power_integral(a, p[d])).product();
    }
    m
}

/// Analytic moments of an uncut face about its center.
pub fn full_face_moments(
    grid: &Grid,
    cell: &Cell,
    axis: usize,
    side: Side,
    max_order: usize,
) -> MomentSet {
    let mut m = MomentSet::zeros(
        MomentKind::GridFace,
        grid.face_center(cell, axis, side),
        grid.dim,
        max_order,
    );
    let a = 0.5 * grid.h;
    for (i, p) in m.basis().exps.iter().enumerate() {
        m.values[i] = (0..grid.dim)
            .map(|d| {
                if d == axis {
                    if p[d] == 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    sym_power_integral(a, p[d])
                }
            })
            .product();
    }
    m
}

/// Quadrature settings shared by all moment computations.
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize, PartialEq)]
pub struct QuadOptions {
    /// Gauss–Legendre points per line segment.
    pub points: usize,
    /// Maximum box subdivision depth.
    pub max_depth: usize,
    /// Slivers thinner than `snap·h` along a quadrature line are dropped.
    pub snap: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            points: 12,
            max_depth: 12,
            snap: 1e-12,
        }
    }
}

fn integrator<'g>(
    geom: &'g dyn LevelSet,
    grid: &Grid,
    opts: &QuadOptions,
) -> ImplicitQuadrature<'g> {
    ImplicitQuadrature::new(geom, opts.points, opts.max_depth, opts.snap * grid.h)
}

pub fn volume_rule(
    geom: &dyn LevelSet,
    grid: &Grid,
    cell: &Cell,
    opts: &QuadOptions,
) -> Result<QuadRule> {
    integrator(geom, grid, opts).volume(&grid.cell_lo(cell), &grid.cell_hi(cell))
}

pub fn face_rule(
    geom: &dyn LevelSet,
    grid: &Grid,
    cell: &Cell,
    axis: usize,
    side: Side,
    opts: &QuadOptions,
) -> Result<QuadRule> {
    let (lo, hi) = grid.face_box(cell, axis, side);
    integrator(geom, grid, opts).volume(&lo, &hi)
}

pub fn eb_rule(
    geom: &dyn LevelSet,
    grid: &Grid,
    cell: &Cell,
    opts: &QuadOptions,
) -> Result<SurfaceRule> {
    integrator(geom, grid, opts).surface(&grid.cell_lo(cell), &grid.cell_hi(cell))
}

pub fn volume_moments(
    geom: &dyn LevelSet,
    grid: &Grid,
    cell: &Cell,
    x0: &Point,
    max_order: usize,
    opts: &QuadOptions,
) -> Result<MomentSet> {
    let rule = volume_rule(geom, grid, cell, opts)?;
    Ok(MomentSet::from_points(
        MomentKind::Volume,
        *x0,
        grid.dim,
        max_order,
        &rule.points,
        rule.weights.iter().copied(),
    ))
}

pub fn face_moments(
    geom: &dyn LevelSet,
    grid: &Grid,
    cell: &Cell,
    axis: usize,
    side: Side,
    x0: &Point,
    max_order: usize,
    opts: &QuadOptions,
) -> Result<MomentSet> {
    let rule = face_rule(geom, grid, cell, axis, side, opts)?;
    Ok(MomentSet::from_points(
        MomentKind::GridFace,
        *x0,
        grid.dim,
        max_order,
        &rule.points,
        rule.weights.iter().copied(),
    ))
}

/// Scalar moments and normal-weighted moments `m^p_{d,f}` for each axis `d`.
/// The normal is `∇ψ/|∇ψ|`, outward from the fluid.
pub fn eb_face_moments(
    geom: &dyn LevelSet,
    grid: &Grid,
    cell: &Cell,
    x0: &Point,
    max_order: usize,
    opts: &QuadOptions,
) -> Result<(MomentSet, Vec<MomentSet>)> {
    let rule = eb_rule(geom, grid, cell, opts)?;
    Ok(eb_moments_from_rule(&rule, x0, grid.dim, max_order))
}

pub(crate) fn eb_moments_from_rule(
    rule: &SurfaceRule,
    x0: &Point,
    dim: usize,
    max_order: usize,
) -> (MomentSet, Vec<MomentSet>) {
    let scalar = MomentSet::from_points(
        MomentKind::EbScalar,
        *x0,
        dim,
        max_order,
        &rule.points,
        rule.weights.iter().copied(),
    );
    let normal = (0..dim)
        .map(|d| {
            MomentSet::from_points(
                MomentKind::EbNormal(d),
                *x0,
                dim,
                max_order,
                &rule.points,
                rule.weights
                    .iter()
                    .zip(&rule.normals)
                    .map(|(w, n)| w * n[d]),
            )
        })
        .collect();
    (scalar, normal)
}

/// A region over which averages are taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Volume(Cell),
    /// Face of `cell` on `side` of `axis`; its normal points out of `cell`.
    Face {
        cell: Cell,
        axis: usize,
        side: Side,
    },
    Eb(Cell),
}

pub enum Flavor<'a> {
    Value(&'a dyn Fn(&Point) -> f64),
    /// `∇g · n`, with `n` outward from the cell (faces) or the fluid (EB).
    NormalDerivative(&'a dyn Fn(&Point) -> Point),
}

/// Points, weights and (for faces) unit normals of a region.
#[derive(Debug, Clone, Default)]
pub struct RegionRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub normals: Option<Vec<Point>>,
    pub face_normal: Option<Point>,
}

impl RegionRule {
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn normal(&self, i: usize) -> Option<Point> {
        match (&self.normals, self.face_normal) {
            (Some(ns), _) => Some(ns[i]),
            (None, n) => n,
        }
    }

    pub fn integrate(&self, flavor: &Flavor) -> Result<f64> {
        let mut s = 0.0;
        for (i, (x, w)) in self.points.iter().zip(&self.weights).enumerate() {
            let v = match flavor {
                Flavor::Value(g) => g(x),
                Flavor::NormalDerivative(g) => {
                    let n = self.normal(i).ok_or_else(|| {
                        Error::Config("normal derivative requested on a volume".into())
                    })?;
                    let gr = g(x);
                    gr.iter().zip(&n).map(|(a, b)| a * b).sum()
                }
            };
            s += w * v;
        }
        Ok(s)
    }
}

pub fn region_rule(
    geom: &dyn LevelSet,
    grid: &Grid,
    region: &Region,
    opts: &QuadOptions,
) -> Result<RegionRule> {
    Ok(match region {
        Region::Volume(c) => {
            let r = volume_rule(geom, grid, c, opts)?;
            RegionRule {
                points: r.points,
                weights: r.weights,
                ..Default::default()
            }
        }
        Region::Face { cell, axis, side } => {
            let r = face_rule(geom, grid, cell, *axis, *side, opts)?;
            let mut n = [0.0; 3];
            n[*axis] = side.sign();
            RegionRule {
                points: r.points,
                weights: r.weights,
                normals: None,
                face_normal: Some(n),
            }
        }
        Region::Eb(c) => {
            let r = eb_rule(geom, grid, c, opts)?;
            RegionRule {
                points: r.points,
                weights: r.weights,
                normals: Some(r.normals),
                face_normal: None,
            }
        }
    })
}

/// `⟨g⟩` over a region (or `⟨∇g·n⟩` for the normal-derivative flavor).
pub fn average_function(
    geom: &dyn LevelSet,
    grid: &Grid,
    region: &Region,
    flavor: &Flavor,
    opts: &QuadOptions,
) -> Result<f64> {
    let rule = region_rule(geom, grid, region, opts)?;
    let m = rule.measure();
    if !(m > 0.0) {
        return Err(Error::ZeroMeasure);
    }
    Ok(rule.integrate(flavor)? / m)
}
