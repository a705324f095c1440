//! Manufactured-solution convergence studies, perturbation sweeps and
//! spectrum reports.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::field::{Polynomial, SmoothField};
use crate::geometry::{
    CellKind, CutCellMesh, GeometryDescriptor, Grid, ImplicitGeometry, LevelSet, MeshOptions,
    NeighborMetric, VolumeId,
};
use crate::operator::{assemble, sample_exact, DiscreteOperator, ExactData};
use crate::solver::{
    arnoldi_eigenvalues, dense_eigenvalues, solve, sort_eigenvalues, ArnoldiOptions,
    LinearSolveReport, SolverOptions, SpectrumSummary, Which, DENSE_LIMIT,
};
use crate::stencil::{BcKind, BoundaryConditions, SchemeConfig, StencilStats, Weighting};
use crate::{Error, Point, Result};

const Y0: f64 = 0.866_025_403_784_438_6; // √3/2
const Z0: f64 = 0.54321;

/// Analytic test solutions.
#[derive(Debug, Clone, PartialEq)]
pub enum Manufactured {
    /// `sin(2π(x−√2/2)) sin(2π(y−√3/2))`.
    Sine2d,
    /// `sin(2π(x−√2/2)) sin(2π(x−√3/2))`, one-dimensional.
    SineX2d,
    /// `sin(2π(x−√2/2)) sin(2π(y−√3/2)) sin(2π(z−0.54321))`.
    Sine3d,
    Polynomial(Polynomial),
}

/// Resolves a solution id: `paper-2d`, `paper-2d-verbatim`, `paper-3d` or
/// `polynomial(k)` (`Σ_d x_d^k`).
pub fn manufactured_solution(id: &str, dim: usize) -> Result<Manufactured> {
    let unknown = || Error::UnknownSolution(id.to_string());
    let m = match id {
        "paper-2d" => Manufactured::Sine2d,
        "paper-2d-verbatim" => Manufactured::SineX2d,
        "paper-3d" => Manufactured::Sine3d,
        _ => {
            let k = id
                .strip_prefix("polynomial(")
                .and_then(|s| s.strip_suffix(')'))
                .or_else(|| id.strip_prefix("polynomial-"))
                .ok_or_else(unknown)?
                .parse::<usize>()
                .map_err(|_| unknown())?;
            Manufactured::Polynomial(Polynomial::sum_of_powers(dim, k))
        }
    };
    let needed = match m {
        Manufactured::Sine2d | Manufactured::SineX2d => Some(2),
        Manufactured::Sine3d => Some(3),
        Manufactured::Polynomial(_) => None,
    };
    match needed {
        Some(d) if d != dim => Err(Error::Config(format!(
            "solution `{id}` is {d}D but the geometry is {dim}D"
        ))),
        _ => Ok(m),
    }
}

fn w(t: f64, c: f64) -> (f64, f64) {
    let a = 2.0 * PI * (t - c);
    (a.sin(), 2.0 * PI * a.cos())
}

impl SmoothField for Manufactured {
    fn value(&self, x: &Point) -> f64 {
        match self {
            Self::Sine2d => w(x[0], SQRT_2 / 2.0).0 * w(x[1], Y0).0,
            Self::SineX2d => w(x[0], SQRT_2 / 2.0).0 * w(x[0], Y0).0,
            Self::Sine3d => w(x[0], SQRT_2 / 2.0).0 * w(x[1], Y0).0 * w(x[2], Z0).0,
            Self::Polynomial(p) => p.value(x),
        }
    }

    fn gradient(&self, x: &Point) -> Point {
        match self {
            Self::Sine2d => {
                let (sx, dx) = w(x[0], SQRT_2 / 2.0);
                let (sy, dy) = w(x[1], Y0);
                [dx * sy, sx * dy, 0.0]
            }
            Self::SineX2d => {
                let (sa, da) = w(x[0], SQRT_2 / 2.0);
                let (sb, db) = w(x[0], Y0);
                [da * sb + sa * db, 0.0, 0.0]
            }
            Self::Sine3d => {
                let (sx, dx) = w(x[0], SQRT_2 / 2.0);
                let (sy, dy) = w(x[1], Y0);
                let (sz, dz) = w(x[2], Z0);
                [dx * sy * sz, sx * dy * sz, sx * sy * dz]
            }
            Self::Polynomial(p) => p.gradient(x),
        }
    }

    fn laplacian(&self, x: &Point) -> f64 {
        let k2 = 4.0 * PI * PI;
        match self {
            Self::Sine2d => -2.0 * k2 * self.value(x),
            Self::SineX2d => {
                let a = 2.0 * PI * (x[0] - SQRT_2 / 2.0);
                let b = 2.0 * PI * (x[0] - Y0);
                2.0 * k2 * (a + b).cos()
            }
            Self::Sine3d => -3.0 * k2 * self.value(x),
            Self::Polynomial(p) => p.laplacian(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub linf: f64,
    pub l1: f64,
    pub l2: f64,
}

/// Which weighting an error norm uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Area-fraction weighted and normalized by `Σ α`.
    Flux,
    /// Weighted by the volume measure, not normalized.
    Volume,
}

pub fn error_norms(errors: &[f64], measures: &[f64], kind: NormKind) -> Result<Norms> {
    if errors.is_empty() {
        return Err(Error::Config("error norm of an empty set".into()));
    }
    if errors.len() != measures.len() {
        return Err(Error::SizeMismatch {
            expected: errors.len(),
            got: measures.len(),
        });
    }
    let linf = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let mut l1 = errors
        .iter()
        .zip(measures)
        .map(|(e, m)| e.abs() * m)
        .sum::<f64>();
    let mut l2 = errors
        .iter()
        .zip(measures)
        .map(|(e, m)| e * e * m)
        .sum::<f64>();
    if kind == NormKind::Flux {
        let total: f64 = measures.iter().sum();
        l1 /= total;
        l2 /= total;
    }
    Ok(Norms {
        linf,
        l1,
        l2: l2.sqrt(),
    })
}

/// Observed order between two resolutions, `log(e_c/e_f) / log(N_f/N_c)`;
/// `log2(e_N/e_2N)` for doubling.
pub fn rate(e_coarse: f64, e_fine: f64, n_coarse: usize, n_fine: usize) -> f64 {
    (e_coarse / e_fine).ln() / (n_fine as f64 / n_coarse as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    FluxError,
    Truncation,
    Solve,
    Spectrum,
    ExportMatrix,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::FluxError,
        Task::Truncation,
        Task::Solve,
        Task::Spectrum,
        Task::ExportMatrix,
    ];
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown task `{s}`")))
    }
}

/// Dense QR eigenvalues or `k` Arnoldi eigenvalues from each end of the
/// spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumMode {
    #[default]
    Dense,
    Arnoldi(usize),
}

impl FromStr for SpectrumMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            _ => s
                .strip_prefix("arnoldi:")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(Self::Arnoldi)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "spectrum mode `{s}`: expected `dense` or `arnoldi:k`"
                    ))
                }),
        }
    }
}

impl fmt::Display for SpectrumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dense => write!(f, "dense"),
            Self::Arnoldi(k) => write!(f, "arnoldi:{k}"),
        }
    }
}

impl Serialize for SpectrumMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpectrumMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Optional overrides of the stencil defaults for the chosen order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<Weighting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_core: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<NeighborMetric>,
}

/// Studies solve tighter than the solver default: at the finest 2D grids the
/// discretization error approaches what a `1e−11` residual resolves.
pub const STUDY_TOLERANCE: f64 = 1e-13;

fn default_solver() -> SolverOptions {
    SolverOptions {
        tolerance: STUDY_TOLERANCE,
        ..SolverOptions::default()
    }
}

fn default_tasks() -> Vec<Task> {
    vec![Task::FluxError, Task::Truncation, Task::Solve]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub geometry: GeometryDescriptor,
    pub order: usize,
    pub grids: Vec<usize>,
    #[serde(default)]
    pub bc_box: BcKind,
    #[serde(default)]
    pub bc_eb: BcKind,
    /// Solution id; defaults to the 2D or 3D sine product.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufactured: Option<String>,
    /// Use the 2D solution whose factors both depend on `x`.
    #[serde(default)]
    pub verbatim: bool,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub spectrum: SpectrumMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub scheme: SchemeOverrides,
    #[serde(default = "default_solver")]
    pub solver: SolverOptions,
    #[serde(default)]
    pub mesh: MeshOptions,
    /// Geometries compared against `geometry` by a sweep.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbations: Vec<GeometryDescriptor>,
}

impl StudyConfig {
    pub fn new(geometry: GeometryDescriptor, order: usize, grids: Vec<usize>) -> Self {
        Self {
            geometry,
            order,
            grids,
            bc_box: BcKind::Dirichlet,
            bc_eb: BcKind::Dirichlet,
            manufactured: None,
            verbatim: false,
            tasks: default_tasks(),
            spectrum: SpectrumMode::Dense,
            output: None,
            scheme: SchemeOverrides::default(),
            solver: default_solver(),
            mesh: MeshOptions::default(),
            perturbations: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::Config("no grids given".into()));
        }
        if self.grids.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config(format!(
                "grids must be strictly increasing, got {:?}",
                self.grids
            )));
        }
        if self.bc_box == BcKind::Neumann && self.bc_eb == BcKind::Neumann {
            return Err(Error::Config(
                "all-Neumann boundary conditions leave the problem singular".into(),
            ));
        }
        self.scheme()?;
        let dim = self.geometry.dim()?;
        manufactured_solution(&self.solution_id(dim), dim)?;
        for p in &self.perturbations {
            if p.dim()? != dim {
                return Err(Error::Config(format!(
                    "perturbation `{}` has a different dimension",
                    p.label()
                )));
            }
        }
        Ok(())
    }

    pub fn scheme(&self) -> Result<SchemeConfig> {
        let mut s = SchemeConfig::new(self.order)?;
        let o = &self.scheme;
        if let Some(r) = o.radius {
            s.radius = r;
        }
        if let Some(wt) = o.weighting {
            s.weighting = wt;
        }
        if let Some(e) = o.weight_exponent {
            s.weight_exponent = e;
        }
        if let Some(c) = o.weight_core {
            s.weight_core = c;
        }
        if let Some(m) = o.metric {
            s.metric = m;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn bc(&self) -> BoundaryConditions {
        BoundaryConditions::new(self.bc_box, self.bc_eb)
    }

    pub fn solution_id(&self, dim: usize) -> String {
        match (&self.manufactured, dim) {
            (Some(id), _) if id == "paper-2d" && self.verbatim => "paper-2d-verbatim".into(),
            (Some(id), _) => id.clone(),
            (None, 3) => "paper-3d".into(),
            (None, _) if self.verbatim => "paper-2d-verbatim".into(),
            (None, _) => "paper-2d".into(),
        }
    }

    pub fn has(&self, t: Task) -> bool {
        self.tasks.contains(&t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelResult {
    pub n: usize,
    pub h: f64,
    pub volumes: usize,
    pub cut_cells: usize,
    pub faces: usize,
    pub boundary_faces: usize,
    pub smallest_kappa: f64,
    pub nnz: usize,
    pub stencils: StencilStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flux: Option<Norms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<Norms>,
    /// Truncation error restricted to rows touching only full cells.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_interior: Option<Norms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_boundary: Option<Norms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<Norms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<LinearSolveReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSummary>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormRates {
    pub linf: f64,
    pub l1: f64,
    pub l2: f64,
}

fn norm_rates(a: Option<Norms>, b: Option<Norms>, na: usize, nb: usize) -> Option<NormRates> {
    let (a, b) = (a?, b?);
    Some(NormRates {
        linf: rate(a.linf, b.linf, na, nb),
        l1: rate(a.l1, b.l1, na, nb),
        l2: rate(a.l2, b.l2, na, nb),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub coarse: usize,
    pub fine: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flux: Option<NormRates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<NormRates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<NormRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub geometry: String,
    pub descriptor: GeometryDescriptor,
    pub dim: usize,
    pub order: usize,
    pub bc_box: BcKind,
    pub bc_eb: BcKind,
    pub manufactured: String,
    pub scheme: SchemeConfig,
    pub levels: Vec<LevelResult>,
    pub rates: Vec<RateRow>,
}

impl ConvergenceReport {
    pub fn level(&self, n: usize) -> Option<&LevelResult> {
        self.levels.iter().find(|l| l.n == n)
    }

    /// Writes the rate table: one row per quantity and norm, columns
    /// alternating errors and orders.
    pub fn write_rates_csv(&self, mut w: impl Write) -> Result<()> {
        let mut header = vec!["quantity".to_string(), "norm".to_string()];
        for (i, l) in self.levels.iter().enumerate() {
            if i > 0 {
                header.push("order".into());
            }
            header.push(format!("e_{}", l.n));
        }
        writeln!(w, "{}", header.join(","))?;
        type Pick = fn(&LevelResult) -> Option<Norms>;
        let quantities: [(&str, Pick); 3] = [
            ("flux", |l| l.flux),
            ("truncation", |l| l.truncation),
            ("solution", |l| l.solution),
        ];
        let norms: [(&str, fn(&Norms) -> f64); 3] =
            [("linf", |n| n.linf), ("l1", |n| n.l1), ("l2", |n| n.l2)];
        for (q, pick) in quantities {
            if self.levels.iter().any(|l| pick(l).is_none()) {
                continue;
            }
            for (name, f) in norms {
                let mut row = vec![q.to_string(), name.to_string()];
                for (i, l) in self.levels.iter().enumerate() {
                    let e = f(&pick(l).unwrap());
                    if i > 0 {
                        let prev = &self.levels[i - 1];
                        row.push(format!(
                            "{:.2}",
                            rate(f(&pick(prev).unwrap()), e, prev.n, l.n)
                        ));
                    }
                    row.push(format!("{e:.3e}"));
                }
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// A report plus the eigenvalues computed per level.
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub report: ConvergenceReport,
    pub spectra: Vec<(usize, Vec<Complex<f64>>)>,
}

impl StudyOutput {
    pub fn write_spectrum_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "n,re,im")?;
        for (n, ev) in &self.spectra {
            for e in ev {
                writeln!(w, "{n},{:.12e},{:.12e}", e.re, e.im)?;
            }
        }
        Ok(())
    }

    /// Writes `report.json`, `rates.csv` and, if present, `spectrum.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("report.json"))?;
        serde_json::to_writer_pretty(&mut f, &self.report)?;
        writeln!(f)?;
        self.report
            .write_rates_csv(std::fs::File::create(dir.join("rates.csv"))?)?;
        if !self.spectra.is_empty() {
            self.write_spectrum_csv(std::fs::File::create(dir.join("spectrum.csv"))?)?;
        }
        Ok(())
    }
}

/// Everything computed for one resolution.
pub struct Level {
    pub mesh: CutCellMesh,
    pub operator: DiscreteOperator,
    pub exact: ExactData,
    pub result: LevelResult,
    pub eigenvalues: Option<Vec<Complex<f64>>>,
    pub solution: Option<Vec<f64>>,
}

pub fn spectrum(op: &DiscreteOperator, mode: SpectrumMode) -> Result<Vec<Complex<f64>>> {
    let a = op.unweighted();
    match mode {
        SpectrumMode::Dense => {
            if a.nrows > DENSE_LIMIT {
                return Err(Error::Config(format!(
                    "{} unknowns exceed the dense eigenvalue limit {DENSE_LIMIT}; use arnoldi:k",
                    a.nrows
                )));
            }
            dense_eigenvalues(&a.to_dense())
        }
        SpectrumMode::Arnoldi(k) => {
            let opts = ArnoldiOptions::default();
            let mut ev = arnoldi_eigenvalues(&a, k, Which::LargestMagnitude, &opts)?;
            ev.extend(arnoldi_eigenvalues(&a, k, Which::NearestZero, &opts)?);
            sort_eigenvalues(&mut ev);
            Ok(ev)
        }
    }
}

/// Runs one resolution against an arbitrary exact solution.
pub fn run_level(cfg: &StudyConfig, n: usize, field: &dyn SmoothField) -> Result<Level> {
    let label = cfg.geometry.label();
    let ctx = || format!("{label}, N={n}");
    let start = Instant::now();
    let geom = ImplicitGeometry::build(&cfg.geometry).map_err(|e| e.at_stage("geometry", ctx()))?;
    let grid = Grid::new(geom.dim(), n).map_err(|e| e.at_stage("grid", ctx()))?;
    let mesh =
        CutCellMesh::build(&geom, grid, cfg.mesh).map_err(|e| e.at_stage("moments", ctx()))?;
    let bc = cfg.bc();
    let scheme = cfg.scheme()?;
    let op = assemble(&mesh, &scheme, &bc).map_err(|e| e.at_stage("stencil", ctx()))?;
    let exact = sample_exact(&mesh, &bc, field, &cfg.mesh.quad)
        .map_err(|e| e.at_stage("exact data", ctx()))?;

    let measures: Vec<f64> = (0..mesh.num_volumes())
        .map(|i| mesh.volume_measure(VolumeId(i as u32)))
        .collect();
    let alpha: Vec<f64> = mesh.faces().iter().map(|f| f.alpha).collect();
    let mut result = LevelResult {
        n,
        h: mesh.grid.h,
        volumes: mesh.num_volumes(),
        cut_cells: mesh
            .volumes()
            .iter()
            .filter(|v| v.kind == CellKind::Cut)
            .count(),
        faces: mesh.faces().len(),
        boundary_faces: op.boundary_faces().len(),
        smallest_kappa: mesh.smallest_kappa(),
        nnz: op.matrix.nnz(),
        stencils: op.stencil_stats(),
        flux: None,
        truncation: None,
        truncation_interior: None,
        truncation_boundary: None,
        solution: None,
        solve: None,
        spectrum: None,
        seconds: 0.0,
    };
    if cfg.has(Task::FluxError) {
        let e = op.flux_errors(&mesh, &exact);
        result.flux = Some(error_norms(&e, &alpha, NormKind::Flux)?);
    }
    if cfg.has(Task::Truncation) {
        let tau = op.truncation_error(&exact)?;
        result.truncation = Some(error_norms(&tau, &measures, NormKind::Volume)?);
        let interior = op.interior_rows(&mesh);
        let split = |want: bool| -> Result<Option<Norms>> {
            let (e, m): (Vec<f64>, Vec<f64>) = tau
                .iter()
                .zip(&measures)
                .zip(&interior)
                .filter(|(_, &i)| i == want)
                .map(|((&t, &m), _)| (t, m))
                .unzip();
            if e.is_empty() {
                Ok(None)
            } else {
                error_norms(&e, &m, NormKind::Volume).map(Some)
            }
        };
        result.truncation_interior = split(true)?;
        result.truncation_boundary = split(false)?;
    }
    let mut solution = None;
    if cfg.has(Task::Solve) {
        let b = op.rhs(&exact.laplacian, &exact.g)?;
        let (phi, report) = match solve(&op.matrix, &b, &cfg.solver) {
            Ok(r) => r,
            Err(Error::NoConvergence {
                iterations,
                residual,
                best,
            }) => {
                log::warn!(
                    "{}: solver stopped after {iterations} iterations at residual {residual:.3e}",
                    ctx()
                );
                let report = LinearSolveReport {
                    iterations,
                    residual_norm: residual,
                    converged: false,
                    tolerance: cfg.solver.tolerance,
                };
                (best, report)
            }
            Err(e) => return Err(e.at_stage("solve", ctx())),
        };
        let e: Vec<f64> = phi.iter().zip(&exact.phi).map(|(a, b)| a - b).collect();
        result.solution = Some(error_norms(&e, &measures, NormKind::Volume)?);
        result.solve = Some(report);
        solution = Some(phi);
    }
    let mut eigenvalues = None;
    if cfg.has(Task::Spectrum) {
        let ev = spectrum(&op, cfg.spectrum).map_err(|e| e.at_stage("spectrum", ctx()))?;
        result.spectrum = Some(SpectrumSummary::from_eigenvalues(&ev)?);
        eigenvalues = Some(ev);
    }
    result.seconds = start.elapsed().as_secs_f64();
    log::info!(
        "{}: {} volumes, κ_min {:.3e}, {:.1}s",
        ctx(),
        result.volumes,
        result.smallest_kappa,
        result.seconds
    );
    Ok(Level {
        mesh,
        operator: op,
        exact,
        result,
        eigenvalues,
        solution,
    })
}

fn export_matrices(dir: &Path, level: &Level, finest: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let n = level.result.n;
    let write = |name: &str, m: &crate::sparse::CsrMatrix| -> Result<()> {
        m.write_matrix_market(std::io::BufWriter::new(std::fs::File::create(
            dir.join(name),
        )?))
    };
    let op = &level.operator;
    let unweighted = op.unweighted();
    write(&format!("operator_n{n}.mtx"), &op.matrix)?;
    write(&format!("boundary_n{n}.mtx"), &op.boundary_map)?;
    write(&format!("unweighted_n{n}.mtx"), &unweighted)?;
    if finest {
        write("operator.mtx", &op.matrix)?;
        write("boundary.mtx", &op.boundary_map)?;
        write("unweighted.mtx", &unweighted)?;
    }
    Ok(())
}

/// Runs every resolution of `cfg` with its configured solution.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let dim = cfg.geometry.dim()?;
    let id = cfg.solution_id(dim);
    let field = manufactured_solution(&id, dim)?;
    run_study_with(cfg, &field, &id)
}

/// Runs every resolution of `cfg` against `field`.
pub fn run_study_with(
    cfg: &StudyConfig,
    field: &dyn SmoothField,
    solution_name: &str,
) -> Result<StudyOutput> {
    cfg.validate()?;
    let mut levels = Vec::new();
    let mut spectra = Vec::new();
    let mut scheme = None;
    for (i, &n) in cfg.grids.iter().enumerate() {
        let level = run_level(cfg, n, field)?;
        if cfg.has(Task::ExportMatrix) {
            let dir = cfg
                .output
                .as_deref()
                .ok_or_else(|| Error::Config("export-matrix needs an output directory".into()))?;
            export_matrices(Path::new(dir), &level, i + 1 == cfg.grids.len())?;
        }
        scheme = Some(level.operator.scheme);
        if let Some(ev) = level.eigenvalues {
            spectra.push((n, ev));
        }
        levels.push(level.result);
    }
    let rates = levels
        .windows(2)
        .map(|p| RateRow {
            coarse: p[0].n,
            fine: p[1].n,
            flux: norm_rates(p[0].flux, p[1].flux, p[0].n, p[1].n),
            truncation: norm_rates(p[0].truncation, p[1].truncation, p[0].n, p[1].n),
            solution: norm_rates(p[0].solution, p[1].solution, p[0].n, p[1].n),
        })
        .collect();
    let report = ConvergenceReport {
        geometry: cfg.geometry.label(),
        descriptor: cfg.geometry.clone(),
        dim: cfg.geometry.dim()?,
        order: cfg.order,
        bc_box: cfg.bc_box,
        bc_eb: cfg.bc_eb,
        manufactured: solution_name.to_string(),
        scheme: scheme.expect("at least one grid"),
        levels,
        rates,
    };
    let out = StudyOutput { report, spectra };
    if let Some(dir) = &cfg.output {
        out.write(Path::new(dir))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaRow {
    pub geometry: String,
    /// `(N, smallest κ)`.
    pub smallest_kappa: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadRow {
    pub n: usize,
    /// `max_p |e_p − e_0| / e_0` of the solution L1 error.
    pub max_relative_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    /// The base geometry first, then each perturbation.
    pub reports: Vec<ConvergenceReport>,
    pub smallest_kappa: Vec<KappaRow>,
    pub spread: Vec<SpreadRow>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Largest allowed solution-error spread before a sweep reports failure.
pub const SWEEP_TOLERANCE: f64 = 0.5;

/// Repeats the study of `base` for each perturbed geometry and compares the
/// solution L1 errors with the base at each resolution.
pub fn run_perturbation_sweep(
    base: &StudyConfig,
    perturbations: &[GeometryDescriptor],
) -> Result<SweepReport> {
    let mut cfg = base.clone();
    cfg.output = None;
    cfg.perturbations.clear();
    if !cfg.has(Task::Solve) {
        cfg.tasks.push(Task::Solve);
    }
    cfg.tasks.retain(|t| *t != Task::ExportMatrix);
    let mut reports = vec![run_study(&cfg)?.report];
    for p in perturbations {
        let mut c = cfg.clone();
        c.geometry = p.clone();
        reports.push(run_study(&c)?.report);
    }
    let smallest_kappa = reports
        .iter()
        .map(|r| KappaRow {
            geometry: r.geometry.clone(),
            smallest_kappa: r.levels.iter().map(|l| (l.n, l.smallest_kappa)).collect(),
        })
        .collect();
    let spread: Vec<SpreadRow> = reports[0]
        .levels
        .iter()
        .enumerate()
        .map(|(i, l0)| {
            let e0 = l0.solution.expect("solve task").l1;
            let max_relative_spread = reports[1..]
                .iter()
                .map(|r| (r.levels[i].solution.expect("solve task").l1 - e0).abs() / e0)
                .fold(0.0, f64::max);
            SpreadRow {
                n: l0.n,
                max_relative_spread,
            }
        })
        .collect();
    let passed = spread
        .iter()
        .all(|s| s.max_relative_spread <= SWEEP_TOLERANCE);
    let report = SweepReport {
        reports,
        smallest_kappa,
        spread,
        tolerance: SWEEP_TOLERANCE,
        passed,
    };
    if let Some(dir) = &base.output {
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("sweep.json"))?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        writeln!(f)?;
        let mut k = std::fs::File::create(dir.join("smallest_kappa.csv"))?;
        writeln!(k, "geometry,n,smallest_kappa")?;
        for row in &report.smallest_kappa {
            for (n, kappa) in &row.smallest_kappa {
                writeln!(k, "\"{}\",{n},{kappa:.6e}", row.geometry)?;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_laplacian(f: &dyn SmoothField, x: Point, dim: usize) -> f64 {
        let h = 1e-4;
        (0..dim)
            .map(|d| {
                let mut a = x;
                let mut b = x;
                a[d] += h;
                b[d] -= h;
                (f.value(&a) - 2.0 * f.value(&x) + f.value(&b)) / (h * h)
            })
            .sum()
    }

    #[test]
    fn manufactured_identities() {
        let p3 = manufactured_solution("paper-3d", 3).unwrap();
        assert!(p3.value(&[SQRT_2 / 2.0, Y0, Z0]).abs() < 1e-15);
        let q = manufactured_solution("polynomial(2)", 2).unwrap();
        assert_eq!(q.laplacian(&[0.3, 0.9, 0.0]), 4.0);
        let p2 = manufactured_solution("paper-2d", 2).unwrap();
        let x = [0.31, 0.77, 0.0];
        assert!((p2.laplacian(&x) + 8.0 * PI * PI * p2.value(&x)).abs() < 1e-12);
        for (m, dim, x) in [
            (p2, 2, x),
            (manufactured_solution("paper-2d-verbatim", 2).unwrap(), 2, x),
            (p3, 3, [0.2, 0.4, 0.9]),
        ] {
            assert!(
                (m.laplacian(&x) - fd_laplacian(&m, x, dim)).abs()
                    < 1e-4 * m.laplacian(&x).abs().max(1.0)
            );
            let g = m.gradient(&x);
            for d in 0..dim {
                let mut a = x;
                let mut b = x;
                a[d] += 1e-6;
                b[d] -= 1e-6;
                assert!((g[d] - (m.value(&a) - m.value(&b)) / 2e-6).abs() < 1e-6);
            }
        }
        assert!(matches!(
            manufactured_solution("bessel", 2),
            Err(Error::UnknownSolution(_))
        ));
        assert!(manufactured_solution("paper-3d", 2).is_err());
    }

    #[test]
    fn norm_definitions() {
        let n = error_norms(&[2.0, -2.0], &[1.0, 1.0], NormKind::Flux).unwrap();
        assert_eq!((n.l1, n.linf, n.l2), (2.0, 2.0, 2.0));
        let v = error_norms(&[-3.0], &[0.25], NormKind::Volume).unwrap();
        assert_eq!((v.l1, v.linf, v.l2), (0.75, 3.0, 1.5));
        assert!(error_norms(&[], &[], NormKind::Volume).is_err());
    }

    #[test]
    fn rate_of_tabulated_errors() {
        assert!((rate(5.70e-06, 3.78e-07, 64, 128) - 3.91).abs() < 0.005);
        assert!((rate(1.0, 1.0 / 27.0, 32, 96) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = StudyConfig::from_json(
            r#"{"geometry": {"name": "circle"}, "order": 4, "grids": [16, 32],
                "bc_eb": "neumann", "tasks": ["solve", "spectrum"], "spectrum": "arnoldi:6"}"#,
        )
        .unwrap();
        assert_eq!(cfg.bc_eb, BcKind::Neumann);
        assert_eq!(cfg.bc_box, BcKind::Dirichlet);
        assert_eq!(cfg.spectrum, SpectrumMode::Arnoldi(6));
        assert_eq!(cfg.solution_id(2), "paper-2d");
        let back: StudyConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        for bad in [
            r#"{"geometry": {"name": "circle"}, "order": 4, "grids": [32, 16]}"#,
            r#"{"geometry": {"name": "circle"}, "order": 3, "grids": [16]}"#,
            r#"{"geometry": {"name": "circle"}, "order": 4, "grids": [16], "typo": 1}"#,
            r#"{"geometry": {"name": "circle"}, "order": 4, "grids": [16], "bc_box": "neumann", "bc_eb": "neumann"}"#,
            r#"{"geometry": {"name": "blob"}, "order": 4, "grids": [16]}"#,
            r#"{"geometry": {"name": "circle"}, "order": 2, "grids": [16], "spectrum": "arnoldi:0"}"#,
        ] {
            assert!(StudyConfig::from_json(bad).is_err(), "{bad}");
        }
        assert_eq!("flux-error".parse::<Task>().unwrap(), Task::FluxError);
    }

    #[test]
    fn fourth_order_circle_magnitudes() {
        let mut cfg = StudyConfig::new(GeometryDescriptor::circle(), 4, vec![64]);
        cfg.tasks = vec![Task::Truncation, Task::Solve];
        let out = run_study(&cfg).unwrap();
        let l = &out.report.levels[0];
        let area = 1.0 - std::f64::consts::PI / 16.0;
        let solution = l.solution.unwrap();
        let truncation = l.truncation.unwrap();
        // reference values are normalized by the fluid area
        let ratio = solution.l1 / area / 3.78e-7;
        assert!((0.5..2.0).contains(&ratio), "solution L1 {:e}", solution.l1);
        assert!(
            (solution.linf / 1.43e-6 - 1.0).abs() < 0.05,
            "{:e}",
            solution.linf
        );
        assert!(
            (truncation.l1 / area / 3.11e-4 - 1.0).abs() < 0.05,
            "{:e}",
            truncation.l1
        );
    }

    #[test]
    fn small_study_reports_rates_for_each_pair() {
        let mut cfg = StudyConfig::new(GeometryDescriptor::circle(), 2, vec![16, 32]);
        cfg.tasks = Task::ALL[..3].to_vec();
        let out = run_study(&cfg).unwrap();
        let r = &out.report;
        assert_eq!(r.levels.len(), 2);
        assert_eq!(r.rates.len(), 1);
        let s = r.rates[0].solution.unwrap();
        assert!(s.l1 > 1.5, "{s:?}");
        let mut csv = Vec::new();
        r.write_rates_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("quantity,norm,e_16,order,e_32\n"));
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn single_perturbation_matches_study() {
        let mut cfg = StudyConfig::new(GeometryDescriptor::circle(), 2, vec![8, 16]);
        cfg.tasks = vec![Task::Solve];
        let sweep = run_perturbation_sweep(&cfg, &[GeometryDescriptor::circle()]).unwrap();
        let mut a = run_study(&cfg).unwrap().report;
        let mut b = sweep.reports[1].clone();
        for l in a.levels.iter_mut().chain(b.levels.iter_mut()) {
            l.seconds = 0.0;
        }
        assert_eq!(a, b);
        assert!(sweep.passed);
        assert_eq!(sweep.spread[0].max_relative_spread, 0.0);
    }
}
