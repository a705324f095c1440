//! Quadrature over implicitly defined volumes and surfaces in boxes.
//!
//! Regions `{ψ < 0} ∩ box` are integrated by dimension reduction: pick a
//! height axis along which `ψ` is monotone on the box (subdividing the box
//! until one exists), integrate the base box with respect to `ψ` restricted
//! to the top and bottom faces, and at every base node split the vertical
//! line at the roots of `ψ` before applying Gauss–Legendre on each piece.
//! The integrand seen by each nested rule is smooth, so convergence is
//! spectral in the number of points.

use crate::geometry::LevelSet;
use crate::{Error, Point, Result};

/// Gauss–Legendre nodes and weights on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                }
                dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = 0.5 * (1.0 - z);
            nodes[n - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { nodes, weights }
    }
}

/// Points and weights; integrates `f` as `Σ wᵢ f(xᵢ)`.
#[derive(Debug, Clone, Default)]
pub struct QuadRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }
}

/// Surface rule with the unit normal `∇ψ/|∇ψ|` at every point.
#[derive(Debug, Clone, Default)]
pub struct SurfaceRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub normals: Vec<Point>,
}

impl SurfaceRule {
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Constraint {
    /// Region must satisfy `ψ < 0`.
    Negative,
    /// Only used to partition the domain of integration.
    Any,
}

/// `ψ` with some coordinates frozen to fixed values.
#[derive(Debug, Clone, Copy)]
struct Piece {
    fixed: [Option<f64>; 3],
    constraint: Constraint,
}

impl Piece {
    fn apply(&self, x: &Point) -> Point {
        let mut y = *x;
        for d in 0..3 {
            if let Some(v) = self.fixed[d] {
                y[d] = v;
            }
        }
        y
    }

    fn clamp_box(&self, lo: &Point, hi: &Point) -> (Point, Point) {
        (self.apply(lo), self.apply(hi))
    }
}

/// Builds quadrature rules for a level set.
pub struct ImplicitQuadrature<'g> {
    geom: &'g dyn LevelSet,
    gl: GaussLegendre,
    max_depth: usize,
    /// Absolute length below which a line piece is treated as a sliver and dropped.
    snap: f64,
}

impl<'g> ImplicitQuadrature<'g> {
    pub fn new(geom: &'g dyn LevelSet, points: usize, max_depth: usize, snap: f64) -> Self {
        Self {
            geom,
            gl: GaussLegendre::new(points),
            max_depth,
            snap,
        }
    }

    /// Rule for `{ψ < 0} ∩ [lo, hi]`; axes with `lo[d] == hi[d]` (or `d ≥ dim`)
    /// are held fixed, so faces are handled by passing degenerate boxes.
    pub fn volume(&self, lo: &Point, hi: &Point) -> Result<QuadRule> {
        let free: Vec<usize> = (0..self.geom.dim()).filter(|&d| hi[d] > lo[d]).collect();
        let mut fixed = [None; 3];
        for d in 0..3 {
            if !free.contains(&d) {
                fixed[d] = Some(lo[d]);
            }
        }
        let pieces = [Piece {
            fixed,
            constraint: Constraint::Negative,
        }];
        let mut rule = QuadRule::default();
        self.integrate(lo, hi, &free, &pieces, 0, &mut |x, w| {
            rule.points.push(*x);
            rule.weights.push(w);
        })?;
        Ok(rule)
    }

    /// Rule for the surface `{ψ = 0} ∩ [lo, hi]` of a full-dimensional box.
    pub fn surface(&self, lo: &Point, hi: &Point) -> Result<SurfaceRule> {
        let free: Vec<usize> = (0..self.geom.dim()).collect();
        let mut rule = SurfaceRule::default();
        self.surface_rec(lo, hi, &free, 0, &mut rule)?;
        Ok(rule)
    }

    fn surface_rec(
        &self,
        lo: &Point,
        hi: &Point,
        free: &[usize],
        depth: usize,
        rule: &mut SurfaceRule,
    ) -> Result<()> {
        let (a, b) = self.geom.bounds(lo, hi);
        if a > 0.0 || b < 0.0 {
            return Ok(());
        }
        let whole = Piece {
            fixed: [None; 3],
            constraint: Constraint::Any,
        };
        let Some(k) = self.height_axis(lo, hi, free, &[whole]) else {
            return self.split(lo, hi, free, depth, |l, h, dd| {
                self.surface_rec(l, h, free, dd, rule)
            });
        };
        let base_free: Vec<usize> = free.iter().copied().filter(|&d| d != k).collect();
        let base = [face_piece(&whole, k, lo[k]), face_piece(&whole, k, hi[k])];
        let geom = self.geom;
        let (lk, hk) = (lo[k], hi[k]);
        self.integrate(lo, hi, &base_free, &base, depth, &mut |xb, wb| {
            let mut x = *xb;
            let f = |t: f64| {
                let mut y = x;
                y[k] = t;
                geom.value(&y)
            };
            let (fa, fb) = (f(lk), f(hk));
            if fa * fb > 0.0 || (fa == 0.0 && fb == 0.0) {
                return;
            }
            let t = find_root(geom, &x, k, lk, hk, fa, fb);
            x[k] = t;
            let g = geom.gradient(&x);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut n = [0.0; 3];
            for d in 0..3 {
                n[d] = g[d] / norm;
            }
            rule.points.push(x);
            rule.weights.push(wb * norm / g[k].abs());
            rule.normals.push(n);
        })
    }

    fn integrate(
        &self,
        lo: &Point,
        hi: &Point,
        free: &[usize],
        pieces: &[Piece],
        depth: usize,
        emit: &mut dyn FnMut(&Point, f64),
    ) -> Result<()> {
        let mut active: Vec<Piece> = Vec::with_capacity(pieces.len());
        for p in pieces {
            let (plo, phi) = p.clamp_box(lo, hi);
            let (a, b) = self.geom.bounds(&plo, &phi);
            if a > 0.0 {
                if p.constraint == Constraint::Negative {
                    return Ok(());
                }
            } else if b < 0.0 {
                // uniformly negative: no constraint, no partition
            } else {
                active.push(*p);
            }
        }
        if free.is_empty() {
            for p in &active {
                if p.constraint == Constraint::Negative && self.geom.value(&p.apply(lo)) >= 0.0 {
                    return Ok(());
                }
            }
            emit(lo, 1.0);
            return Ok(());
        }
        if active.is_empty() {
            self.tensor(lo, hi, free, emit);
            return Ok(());
        }
        if let [k] = *free {
            // A single free axis needs no monotonicity: split the line at
            // every root of every piece.
            self.line(lo, 1.0, k, lo[k], hi[k], &active, &mut Vec::new(), emit);
            return Ok(());
        }
        let Some(k) = self.height_axis(lo, hi, free, &active) else {
            return self.split(lo, hi, free, depth, |l, h, dd| {
                self.integrate(l, h, free, &active, dd, &mut *emit)
            });
        };
        let base_free: Vec<usize> = free.iter().copied().filter(|&d| d != k).collect();
        let mut base = Vec::with_capacity(2 * active.len());
        for p in &active {
            base.push(face_piece(p, k, lo[k]));
            base.push(face_piece(p, k, hi[k]));
        }
        let (lk, hk) = (lo[k], hi[k]);
        let mut breaks: Vec<f64> = Vec::with_capacity(active.len() + 2);
        self.integrate(lo, hi, &base_free, &base, depth, &mut |xb, wb| {
            self.line(xb, wb, k, lk, hk, &active, &mut breaks, &mut *emit)
        })
    }

    /// Gauss–Legendre on the pieces of the line `xb + t e_k`, `t ∈ [lk, hk]`,
    /// that satisfy every constraint.
    #[allow(clippy::too_many_arguments)]
    fn line(
        &self,
        xb: &Point,
        wb: f64,
        k: usize,
        lk: f64,
        hk: f64,
        active: &[Piece],
        breaks: &mut Vec<f64>,
        emit: &mut dyn FnMut(&Point, f64),
    ) {
        let geom = self.geom;
        breaks.clear();
        breaks.push(lk);
        for p in active {
            let mut y = p.apply(xb);
            y[k] = lk;
            line_roots(geom, &y, k, lk, hk, 0, breaks);
        }
        breaks.push(hk);
        breaks.sort_by(f64::total_cmp);
        for i in 0..breaks.len() - 1 {
            let (t0, t1) = (breaks[i], breaks[i + 1]);
            if t1 - t0 <= self.snap {
                continue;
            }
            let mut mid = *xb;
            mid[k] = 0.5 * (t0 + t1);
            let ok = active
                .iter()
                .all(|p| p.constraint == Constraint::Any || geom.value(&p.apply(&mid)) < 0.0);
            if !ok {
                continue;
            }
            let len = t1 - t0;
            for (node, wt) in self.gl.nodes.iter().zip(&self.gl.weights) {
                let mut x = *xb;
                x[k] = t0 + len * node;
                emit(&x, wb * len * wt);
            }
        }
    }

    /// Tensor-product Gauss–Legendre over the free axes of a box.
    fn tensor(&self, lo: &Point, hi: &Point, free: &[usize], emit: &mut dyn FnMut(&Point, f64)) {
        let q = self.gl.nodes.len();
        let total = q.pow(free.len() as u32);
        for idx in 0..total {
            let mut x = *lo;
            let mut w = 1.0;
            let mut r = idx;
            for &d in free {
                let i = r % q;
                r /= q;
                let len = hi[d] - lo[d];
                x[d] = lo[d] + len * self.gl.nodes[i];
                w *= len * self.gl.weights[i];
            }
            emit(&x, w);
        }
    }

    /// Free axis along which every piece is strictly monotone, preferring the
    /// axis with the largest gradient component at the box center.
    fn height_axis(
        &self,
        lo: &Point,
        hi: &Point,
        free: &[usize],
        pieces: &[Piece],
    ) -> Option<usize> {
        let mut center = [0.0; 3];
        for d in 0..3 {
            center[d] = 0.5 * (lo[d] + hi[d]);
        }
        let g = self.geom.gradient(&pieces[0].apply(&center));
        let mut order: Vec<usize> = free.to_vec();
        order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        order.into_iter().find(|&k| {
            pieces.iter().all(|p| {
                let (plo, phi) = p.clamp_box(lo, hi);
                let (a, b) = self.geom.grad_bounds(&plo, &phi, k);
                a > 0.0 || b < 0.0
            })
        })
    }

    fn split(
        &self,
        lo: &Point,
        hi: &Point,
        free: &[usize],
        depth: usize,
        mut f: impl FnMut(&Point, &Point, usize) -> Result<()>,
    ) -> Result<()> {
        if depth >= self.max_depth {
            let mut near = [0.0; 3];
            for d in 0..3 {
                near[d] = 0.5 * (lo[d] + hi[d]);
            }
            return Err(Error::Quadrature {
                near,
                depth: self.max_depth,
            });
        }
        let &axis = free
            .iter()
            .max_by(|&&a, &&b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .expect("split needs a free axis");
        let mid = 0.5 * (lo[axis] + hi[axis]);
        let (mut hi1, mut lo2) = (*hi, *lo);
        hi1[axis] = mid;
        lo2[axis] = mid;
        f(lo, &hi1, depth + 1)?;
        f(&lo2, hi, depth + 1)
    }
}

/// Appends every root of `ψ(x + (t − x_k) e_k)` in `(a, b)`. Ranges where
/// the derivative may vanish are bisected; an unresolved tangency is
/// recorded at its midpoint, which is harmless as a breakpoint.
fn line_roots(
    geom: &dyn LevelSet,
    x: &Point,
    axis: usize,
    a: f64,
    b: f64,
    depth: usize,
    out: &mut Vec<f64>,
) {
    let (mut lo, mut hi) = (*x, *x);
    lo[axis] = a;
    hi[axis] = b;
    let (fmin, fmax) = geom.bounds(&lo, &hi);
    if fmin > 0.0 || fmax < 0.0 {
        return;
    }
    let (fa, fb) = (geom.value(&lo), geom.value(&hi));
    let (g0, g1) = geom.grad_bounds(&lo, &hi, axis);
    if g0 > 0.0 || g1 < 0.0 {
        if fa * fb < 0.0 {
            out.push(find_root(geom, &lo, axis, a, b, fa, fb));
        }
        return;
    }
    let mid = 0.5 * (a + b);
    if depth >= 60 || mid <= a || mid >= b || b - a < 1e-15 * (1.0 + a.abs()) {
        if fa * fb <= 0.0 || fmin < 0.0 && fmax > 0.0 {
            out.push(mid);
        }
        return;
    }
    line_roots(geom, x, axis, a, mid, depth + 1, out);
    line_roots(geom, x, axis, mid, b, depth + 1, out);
}

fn face_piece(p: &Piece, axis: usize, at: f64) -> Piece {
    let mut fixed = p.fixed;
    fixed[axis] = Some(at);
    Piece {
        fixed,
        constraint: Constraint::Any,
    }
}

/// Root of `ψ` along `axis` through `x`, bracketed by `[a, b]` with
/// `ψ(a) = fa`, `ψ(b) = fb` of opposite sign. Bisection guarded Newton.
pub(crate) fn find_root(
    geom: &dyn LevelSet,
    x: &Point,
    axis: usize,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
) -> f64 {
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let mut y = *x;
    let (mut lo, mut hi) = if fa < 0.0 { (a, b) } else { (b, a) };
    let mut t = 0.5 * (a + b);
    let tol = 1e-15 * (b - a).abs().max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        y[axis] = t;
        let f = geom.value(&y);
        if f == 0.0 {
            return t;
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let df = geom.gradient(&y)[axis];
        let newton = t - f / df;
        let (l, h) = (lo.min(hi), lo.max(hi));
        let next = if df != 0.0 && newton > l && newton < h {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= tol || (h - l) <= tol {
            return next;
        }
        t = next;
    }
    t
}
