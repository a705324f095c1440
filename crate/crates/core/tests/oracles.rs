//! Cut-cell moments and averages against independent integrators for the
//! circle exterior `|x − (0.5, 0.5)| > 0.25`. Volume integrals are exact in
//! `y` between the circle and the cell edges, then composite Gauss in `x` on
//! pieces split at every crossing. Arc integrals use the angle.

use std::f64::consts::PI;

use cutpoisson::field::SmoothField;
use cutpoisson::geometry::*;
use cutpoisson::moments::{MonomialBasis, QuadOptions};
use cutpoisson::operator::sample_exact;
use cutpoisson::stencil::BoundaryConditions;
use cutpoisson::study::manufactured_solution;

const C: [f64; 2] = [0.5, 0.5];
const R: f64 = 0.25;
const N: usize = 32;

/// Gauss–Legendre nodes and weights on `[−1, 1]` by Newton iteration.
fn gauss(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// `∫_a^b f` through `x = a + (b − a)(3u² − 2u³)`, which smooths square-root
/// behavior at either end, then composite Gauss in `u`.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let rule = gauss(20);
    let panels = 8;
    let mut s = 0.0;
    for k in 0..panels {
        let (u0, u1) = (k as f64 / panels as f64, (k + 1) as f64 / panels as f64);
        for &(t, w) in &rule {
            let u = 0.5 * (u0 + u1) + 0.5 * (u1 - u0) * t;
            let x = a + (b - a) * (3.0 * u * u - 2.0 * u * u * u);
            let dx = (b - a) * 6.0 * u * (1.0 - u);
            s += 0.5 * (u1 - u0) * w * f(x) * dx;
        }
    }
    s
}

/// Fluid `y` intervals of the column at `x` within `[y0, y1]`.
fn fluid_intervals(x: f64, y0: f64, y1: f64) -> Vec<(f64, f64)> {
    let d = R * R - (x - C[0]).powi(2);
    if d <= 0.0 {
        return vec![(y0, y1)];
    }
    let s = d.sqrt();
    let mut out = Vec::new();
    if C[1] - s > y0 {
        out.push((y0, y1.min(C[1] - s)));
    }
    if C[1] + s < y1 {
        out.push((y0.max(C[1] + s), y1));
    }
    out
}

/// `∫∫_{cell ∩ Ω} f`, with `inner(x, ya, yb)` giving `∫_ya^yb f(x, y) dy`.
fn cell_integral(lo: [f64; 2], hi: [f64; 2], inner: &dyn Fn(f64, f64, f64) -> f64) -> f64 {
    let mut breaks = vec![lo[0], hi[0], C[0] - R, C[0] + R];
    for y in [lo[1], hi[1]] {
        let d = R * R - (y - C[1]).powi(2);
        if d > 0.0 {
            breaks.push(C[0] - d.sqrt());
            breaks.push(C[0] + d.sqrt());
        }
    }
    breaks.retain(|&b| b >= lo[0] && b <= hi[0]);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks
        .windows(2)
        .map(|w| {
            let col = |x: f64| -> f64 {
                fluid_intervals(x, lo[1], hi[1])
                    .into_iter()
                    .map(|(a, b)| inner(x, a, b))
                    .sum()
            };
            integrate(&col, w[0], w[1])
        })
        .sum()
}

fn mesh() -> CutCellMesh {
    let g = ImplicitGeometry::build(&GeometryDescriptor::circle()).unwrap();
    CutCellMesh::build(&g, Grid::new(2, N).unwrap(), MeshOptions::default()).unwrap()
}

fn cut_cells(mesh: &CutCellMesh) -> Vec<VolumeId> {
    (0..mesh.num_volumes() as u32)
        .map(VolumeId)
        .filter(|&v| mesh.volume(v).kind == CellKind::Cut)
        .collect()
}

#[test]
fn cut_volume_moments_match_oracle() {
    let mesh = mesh();
    let h = mesh.grid.h;
    let tol = 1e-12 * h * h;
    let cells = cut_cells(&mesh);
    assert!(cells.len() > 50);
    for v in cells {
        let cell = mesh.volume(v).cell;
        let (lo, hi) = (mesh.grid.cell_lo(&cell), mesh.grid.cell_hi(&cell));
        let xc = mesh.grid.cell_center(&cell);
        let m = mesh.volume_moments(v);
        for p in MonomialBasis::get(2, 4).exponents() {
            let (a, b) = (p[0] as i32, p[1] as i32);
            let inner = |x: f64, ya: f64, yb: f64| {
                (x - xc[0]).powi(a) * ((yb - xc[1]).powi(b + 1) - (ya - xc[1]).powi(b + 1))
                    / (b + 1) as f64
            };
            let exact = cell_integral([lo[0], lo[1]], [hi[0], hi[1]], &inner);
            let got = m.get(p);
            assert!(
                (got - exact).abs() <= tol,
                "cell {cell:?} p {p:?}: {got:e} vs {exact:e}"
            );
        }
    }
}

/// Angles where the circle crosses the boundary of `[lo, hi]`, with the
/// arcs between them that lie inside.
fn arcs_in_cell(lo: [f64; 2], hi: [f64; 2]) -> Vec<(f64, f64)> {
    let mut t = vec![0.0, 2.0 * PI];
    for d in 0..2 {
        for edge in [lo[d], hi[d]] {
            let c = (edge - C[d]) / R;
            if c.abs() <= 1.0 {
                let base = if d == 0 { c.acos() } else { c.asin() };
                let (t1, t2) = if d == 0 {
                    (base, -base)
                } else {
                    (base, PI - base)
                };
                t.push(t1.rem_euclid(2.0 * PI));
                t.push(t2.rem_euclid(2.0 * PI));
            }
        }
    }
    t.sort_by(f64::total_cmp);
    t.windows(2)
        .filter(|w| w[1] - w[0] > 1e-14)
        .filter(|w| {
            let m = 0.5 * (w[0] + w[1]);
            let (x, y) = (C[0] + R * m.cos(), C[1] + R * m.sin());
            x > lo[0] && x < hi[0] && y > lo[1] && y < hi[1]
        })
        .map(|w| (w[0], w[1]))
        .collect()
}

fn arc_integral(arcs: &[(f64, f64)], f: &dyn Fn(f64) -> f64) -> f64 {
    arcs.iter()
        .map(|&(a, b)| integrate(&|t| R * f(t), a, b))
        .sum()
}

#[test]
fn eb_arc_moments_match_parametric_integrals() {
    let mesh = mesh();
    let h = mesh.grid.h;
    let tol = 1e-12 * h;
    let mut checked = 0;
    for f in mesh.face_ids() {
        let FaceKind::Eb { volume } = mesh.face(f).kind else {
            continue;
        };
        let cell = mesh.volume(volume).cell;
        let (lo, hi) = (mesh.grid.cell_lo(&cell), mesh.grid.cell_hi(&cell));
        let arcs = arcs_in_cell([lo[0], lo[1]], [hi[0], hi[1]]);
        let xc = mesh.grid.cell_center(&cell);
        let scalar = mesh.face_scalar_moments(f).shifted(&xc);
        let normal = mesh.face_normal_moments(f);
        let length: f64 = arcs.iter().map(|(a, b)| R * (b - a)).sum();
        assert!(
            (scalar.get(&[0, 0, 0]) - length).abs() <= tol,
            "cell {cell:?} arc length"
        );
        for p in MonomialBasis::get(2, 4).exponents() {
            let mono = |t: f64| {
                (C[0] + R * t.cos() - xc[0]).powi(p[0] as i32)
                    * (C[1] + R * t.sin() - xc[1]).powi(p[1] as i32)
            };
            let exact = arc_integral(&arcs, &mono);
            assert!(
                (scalar.get(p) - exact).abs() <= tol,
                "cell {cell:?} p {p:?} scalar"
            );
            // outward from the fluid, toward the circle center
            let nx = arc_integral(&arcs, &|t| -t.cos() * mono(t));
            let ny = arc_integral(&arcs, &|t| -t.sin() * mono(t));
            let (gx, gy) = (normal[0].shifted(&xc).get(p), normal[1].shifted(&xc).get(p));
            assert!(
                (gx - nx).abs() <= tol && (gy - ny).abs() <= tol,
                "cell {cell:?} p {p:?} normal"
            );
        }
        checked += 1;
    }
    assert!(checked > 50);
}

#[test]
fn cut_cell_averages_of_the_2d_solution_match_oracle() {
    let mesh = mesh();
    let field = manufactured_solution("paper-2d", 2).unwrap();
    let exact = sample_exact(
        &mesh,
        &BoundaryConditions::default(),
        &field,
        &QuadOptions::default(),
    )
    .unwrap();
    let rule = gauss(24);
    for v in cut_cells(&mesh) {
        let cell = mesh.volume(v).cell;
        let (lo, hi) = (mesh.grid.cell_lo(&cell), mesh.grid.cell_hi(&cell));
        let inner = |x: f64, ya: f64, yb: f64| -> f64 {
            rule.iter()
                .map(|&(t, w)| {
                    let y = 0.5 * (ya + yb) + 0.5 * (yb - ya) * t;
                    0.5 * (yb - ya) * w * field.value(&[x, y, 0.0])
                })
                .sum()
        };
        let area = cell_integral([lo[0], lo[1]], [hi[0], hi[1]], &|_, a, b| b - a);
        let avg = cell_integral([lo[0], lo[1]], [hi[0], hi[1]], &inner) / area;
        let got = exact.phi[v.index()];
        assert!((got - avg).abs() <= 1e-9, "cell {cell:?}: {got} vs {avg}");
    }
}
