use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::LevelSet;
use crate::{Error, Point, Result};

/// Which side of a closed curve or surface is fluid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Interior,
    Exterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Built-in analytic level sets.
///
/// Circles and spheres use quadratic level sets (`±(|x−c|² − r²)`), so
/// interval bounds over boxes are exact.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Circle {
        center: [f64; 2],
        radius: f64,
        sense: Sense,
    },
    /// Fluid outside the union of the circles.
    CirclesExterior(Vec<CircleSpec>),
    /// Fluid below `y = base + amplitude·(1 − cos(2π·wavenumber·x))`.
    TrigCurve {
        base: f64,
        amplitude: f64,
        wavenumber: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        sense: Sense,
    },
    /// Fluid where `normal · x < offset`.
    HalfSpace {
        dim: usize,
        normal: [f64; 3],
        offset: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ImplicitGeometry {
    pub name: String,
    pub shape: Shape,
}

impl ImplicitGeometry {
    /// Wraps a shape without checking that its interface meets the unit box.
    pub fn new(name: impl Into<String>, shape: Shape) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    /// Builds a geometry from a descriptor and validates it against `[0,1]^D`.
    pub fn build(desc: &GeometryDescriptor) -> Result<Self> {
        let shape = desc.to_shape()?;
        let geom = Self::new(desc.label(), shape);
        geom.validate()?;
        Ok(geom)
    }

    fn validate(&self) -> Result<()> {
        let radii: Vec<f64> = match &self.shape {
            Shape::Circle { radius, .. } | Shape::Sphere { radius, .. } => vec![*radius],
            Shape::CirclesExterior(cs) => {
                if cs.is_empty() {
                    return Err(Error::InvalidGeometry("empty circle list".into()));
                }
                cs.iter().map(|c| c.radius).collect()
            }
            Shape::TrigCurve { amplitude, .. } => vec![amplitude.abs() + 1.0],
            Shape::HalfSpace { normal, dim, .. } => {
                let n2: f64 = normal[..*dim].iter().map(|v| v * v).sum();
                vec![n2.sqrt()]
            }
        };
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "{}: radius/normal must be positive and finite",
                self.name
            )));
        }
        let lo = [0.0; 3];
        let mut hi = [0.0; 3];
        hi[..self.dim()].fill(1.0);
        let (a, b) = self.bounds(&lo, &hi);
        if !(a < 0.0 && b > 0.0) || !self.interface_in_unit_box() {
            return Err(Error::InvalidGeometry(format!(
                "{}: interface does not intersect the unit box",
                self.name
            )));
        }
        Ok(())
    }

    /// Coarse sampling check that ψ changes sign somewhere in the box.
    fn interface_in_unit_box(&self) -> bool {
        let dim = self.dim();
        let m = 64usize;
        let total = m.pow(dim as u32);
        let (mut neg, mut pos) = (false, false);
        for k in 0..total {
            let mut x = [0.0; 3];
            let mut r = k;
            for xd in x.iter_mut().take(dim) {
                *xd = (r % m) as f64 / (m - 1) as f64;
                r /= m;
            }
            let v = self.value(&x);
            neg |= v < 0.0;
            pos |= v > 0.0;
            if neg && pos {
                return true;
            }
        }
        false
    }
}

impl LevelSet for ImplicitGeometry {
    fn dim(&self) -> usize {
        match &self.shape {
            Shape::Circle { .. } | Shape::CirclesExterior(_) | Shape::TrigCurve { .. } => 2,
            Shape::Sphere { .. } => 3,
            Shape::HalfSpace { dim, .. } => *dim,
        }
    }

    fn value(&self, x: &Point) -> f64 {
        match &self.shape {
            Shape::Circle {
                center,
                radius,
                sense,
            } => sense_sign(*sense) * (dist2(x, center) - radius * radius),
            Shape::CirclesExterior(cs) => cs
                .iter()
                .map(|c| c.radius * c.radius - dist2(x, &c.center))
                .fold(f64::NEG_INFINITY, f64::max),
            Shape::TrigCurve {
                base,
                amplitude,
                wavenumber,
            } => x[1] - (base + amplitude * (1.0 - (2.0 * PI * wavenumber * x[0]).cos())),
            Shape::Sphere {
                center,
                radius,
                sense,
            } => sense_sign(*sense) * (dist2(x, center) - radius * radius),
            Shape::HalfSpace {
                dim,
                normal,
                offset,
            } => (0..*dim).map(|d| normal[d] * x[d]).sum::<f64>() - offset,
        }
    }

    fn gradient(&self, x: &Point) -> Point {
        let mut g = [0.0; 3];
        match &self.shape {
            Shape::Circle { center, sense, .. } => {
                let s = sense_sign(*sense);
                for d in 0..2 {
                    g[d] = 2.0 * s * (x[d] - center[d]);
                }
            }
            Shape::CirclesExterior(cs) => {
                let c = cs
                    .iter()
                    .max_by(|a, b| {
                        let va = a.radius * a.radius - dist2(x, &a.center);
                        let vb = b.radius * b.radius - dist2(x, &b.center);
                        va.total_cmp(&vb)
                    })
                    .expect("non-empty circle list");
                for d in 0..2 {
                    g[d] = -2.0 * (x[d] - c.center[d]);
                }
            }
            Shape::TrigCurve {
                amplitude,
                wavenumber,
                ..
            } => {
                let w = 2.0 * PI * wavenumber;
                g[0] = -amplitude * w * (w * x[0]).sin();
                g[1] = 1.0;
            }
            Shape::Sphere { center, sense, .. } => {
                let s = sense_sign(*sense);
                for d in 0..3 {
                    g[d] = 2.0 * s * (x[d] - center[d]);
                }
            }
            Shape::HalfSpace { dim, normal, .. } => g[..*dim].copy_from_slice(&normal[..*dim]),
        }
        g
    }

    fn bounds(&self, lo: &Point, hi: &Point) -> (f64, f64) {
        match &self.shape {
            Shape::Circle {
                center,
                radius,
                sense,
            } => {
                let (a, b) = dist2_range(lo, hi, center);
                signed_range(*sense, a - radius * radius, b - radius * radius)
            }
            Shape::CirclesExterior(cs) => cs
                .iter()
                .map(|c| {
                    let (a, b) = dist2_range(lo, hi, &c.center);
                    let r2 = c.radius * c.radius;
                    (r2 - b, r2 - a)
                })
                .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |acc, r| {
                    (acc.0.max(r.0), acc.1.max(r.1))
                }),
            Shape::TrigCurve {
                base,
                amplitude,
                wavenumber,
            } => {
                let w = 2.0 * PI * wavenumber;
                let (cmin, cmax) = cos_range(w * lo[0], w * hi[0]);
                // f = base + A (1 - cos)
                let (f1, f2) = (
                    base + amplitude * (1.0 - cmax),
                    base + amplitude * (1.0 - cmin),
                );
                let (fmin, fmax) = (f1.min(f2), f1.max(f2));
                (lo[1] - fmax, hi[1] - fmin)
            }
            Shape::Sphere {
                center,
                radius,
                sense,
            } => {
                let (a, b) = dist2_range(lo, hi, center);
                signed_range(*sense, a - radius * radius, b - radius * radius)
            }
            Shape::HalfSpace {
                dim,
                normal,
                offset,
            } => {
                let (mut a, mut b) = (-offset, -offset);
                for d in 0..*dim {
                    let (u, v) = (normal[d] * lo[d], normal[d] * hi[d]);
                    a += u.min(v);
                    b += u.max(v);
                }
                (a, b)
            }
        }
    }

    fn grad_bounds(&self, lo: &Point, hi: &Point, axis: usize) -> (f64, f64) {
        match &self.shape {
            Shape::Circle { center, sense, .. } => {
                let s = 2.0 * sense_sign(*sense);
                let c = center[axis];
                ordered(s * (lo[axis] - c), s * (hi[axis] - c))
            }
            Shape::CirclesExterior(cs) => {
                // Only circles that can attain the max on the box contribute.
                let ranges: Vec<(f64, f64)> = cs
                    .iter()
                    .map(|c| {
                        let (a, b) = dist2_range(lo, hi, &c.center);
                        let r2 = c.radius * c.radius;
                        (r2 - b, r2 - a)
                    })
                    .collect();
                let floor = ranges.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
                let mut out = (f64::INFINITY, f64::NEG_INFINITY);
                for (c, r) in cs.iter().zip(&ranges) {
                    if r.1 >= floor {
                        let cc = c.center[axis];
                        let g = ordered(-2.0 * (lo[axis] - cc), -2.0 * (hi[axis] - cc));
                        out = (out.0.min(g.0), out.1.max(g.1));
                    }
                }
                out
            }
            Shape::TrigCurve {
                amplitude,
                wavenumber,
                ..
            } => match axis {
                0 => {
                    let w = 2.0 * PI * wavenumber;
                    let (smin, smax) = sin_range(w * lo[0], w * hi[0]);
                    ordered(-amplitude * w * smin, -amplitude * w * smax)
                }
                1 => (1.0, 1.0),
                _ => (0.0, 0.0),
            },
            Shape::Sphere { center, sense, .. } => {
                let s = 2.0 * sense_sign(*sense);
                let c = center[axis];
                ordered(s * (lo[axis] - c), s * (hi[axis] - c))
            }
            Shape::HalfSpace { normal, .. } => (normal[axis], normal[axis]),
        }
    }
}

fn sense_sign(s: Sense) -> f64 {
    match s {
        Sense::Interior => 1.0,
        Sense::Exterior => -1.0,
    }
}

fn signed_range(s: Sense, a: f64, b: f64) -> (f64, f64) {
    match s {
        Sense::Interior => (a, b),
        Sense::Exterior => (-b, -a),
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn dist2(x: &Point, c: &[f64]) -> f64 {
    c.iter()
        .enumerate()
        .map(|(d, cd)| (x[d] - cd).powi(2))
        .sum()
}

/// Exact range of `|x − c|²` over the box.
fn dist2_range(lo: &Point, hi: &Point, c: &[f64]) -> (f64, f64) {
    let (mut a, mut b) = (0.0, 0.0);
    for (d, &cd) in c.iter().enumerate() {
        let (u, v) = (lo[d] - cd, hi[d] - cd);
        let (su, sv) = (u * u, v * v);
        b += su.max(sv);
        if !(u <= 0.0 && v >= 0.0) {
            a += su.min(sv);
        }
    }
    (a, b)
}

/// Range of `cos θ` for `θ ∈ [t0, t1]`.
fn cos_range(t0: f64, t1: f64) -> (f64, f64) {
    let (c0, c1) = (t0.cos(), t1.cos());
    let (mut lo, mut hi) = (c0.min(c1), c0.max(c1));
    // Extrema of cos sit at multiples of π.
    let mut k = (t0 / PI).ceil();
    while k * PI <= t1 {
        if (k as i64).rem_euclid(2) == 0 {
            hi = 1.0;
        } else {
            lo = -1.0;
        }
        k += 1.0;
    }
    (lo, hi)
}

fn sin_range(t0: f64, t1: f64) -> (f64, f64) {
    cos_range(t0 - PI / 2.0, t1 - PI / 2.0)
}

/// Geometry descriptor as it appears in study configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDescriptor {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sense: Option<Sense>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circles: Option<Vec<CircleSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

impl GeometryDescriptor {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            center: None,
            radius: None,
            sense: None,
            circles: None,
            normal: None,
            offset: None,
        }
    }

    /// Exterior of the circle centered at `(0.5, 0.5)` with radius 0.25.
    pub fn circle() -> Self {
        Self::named("circle")
    }

    pub fn circle_with(center: [f64; 2], radius: f64, sense: Sense) -> Self {
        Self {
            center: Some(center.to_vec()),
            radius: Some(radius),
            sense: Some(sense),
            ..Self::named("circle")
        }
    }

    pub fn four_circles() -> Self {
        Self::named("four-circles")
    }

    pub fn sine_curve() -> Self {
        Self::named("trig-curve")
    }

    /// Interior of the sphere centered at `(0.5, 0.5, 0.5)` with radius 0.45.
    pub fn sphere() -> Self {
        Self::named("sphere")
    }

    pub fn label(&self) -> String {
        let mut s = self.name.clone();
        if let Some(c) = &self.center {
            let parts: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
            s.push_str(&format!(" c=({})", parts.join(",")));
        }
        if let Some(r) = self.radius {
            s.push_str(&format!(" r={r}"));
        }
        if let Some(sense) = self.sense {
            s.push_str(&format!(" {sense:?}").to_lowercase());
        }
        s
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(match self.to_shape()? {
            Shape::Sphere { .. } => 3,
            Shape::HalfSpace { dim, .. } => dim,
            _ => 2,
        })
    }

    fn to_shape(&self) -> Result<Shape> {
        let center2 = |default: [f64; 2]| -> Result<[f64; 2]> {
            match &self.center {
                None => Ok(default),
                Some(c) if c.len() == 2 => Ok([c[0], c[1]]),
                Some(c) => Err(Error::InvalidGeometry(format!(
                    "{}: expected a 2D center, got {} components",
                    self.name,
                    c.len()
                ))),
            }
        };
        match self.name.as_str() {
            "circle" => Ok(Shape::Circle {
                center: center2([0.5, 0.5])?,
                radius: self.radius.unwrap_or(0.25),
                sense: self.sense.unwrap_or(Sense::Exterior),
            }),
            "circles" | "union-of-circles" => {
                let cs = self.circles.clone().ok_or_else(|| {
                    Error::InvalidGeometry(format!("{}: missing `circles` list", self.name))
                })?;
                Ok(Shape::CirclesExterior(cs))
            }
            "four-circles" => {
                let r = self.radius.unwrap_or(0.215);
                let cs = [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]
                    .into_iter()
                    .map(|center| CircleSpec { center, radius: r })
                    .collect();
                Ok(Shape::CirclesExterior(cs))
            }
            "trig-curve" | "sine-curve" => Ok(Shape::TrigCurve {
                base: 0.25,
                amplitude: std::f64::consts::SQRT_2 / 2.0,
                wavenumber: 1.0,
            }),
            "sphere" => {
                let center = match &self.center {
                    None => [0.5, 0.5, 0.5],
                    Some(c) if c.len() == 3 => [c[0], c[1], c[2]],
                    Some(c) => {
                        return Err(Error::InvalidGeometry(format!(
                            "sphere: expected a 3D center, got {} components",
                            c.len()
                        )))
                    }
                };
                Ok(Shape::Sphere {
                    center,
                    radius: self.radius.unwrap_or(0.45),
                    sense: self.sense.unwrap_or(Sense::Interior),
                })
            }
            "half-space" | "plane" => {
                let n = self
                    .normal
                    .clone()
                    .ok_or_else(|| Error::InvalidGeometry("half-space: missing `normal`".into()))?;
                if !(n.len() == 2 || n.len() == 3) {
                    return Err(Error::InvalidGeometry(
                        "half-space: normal must have 2 or 3 components".into(),
                    ));
                }
                let mut normal = [0.0; 3];
                normal[..n.len()].copy_from_slice(&n);
                Ok(Shape::HalfSpace {
                    dim: n.len(),
                    normal,
                    offset: self.offset.unwrap_or(0.5),
                })
            }
            other => Err(Error::UnknownGeometry(other.to_string())),
        }
    }
}
