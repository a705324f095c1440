//! Krylov linear solves and eigenvalue computations.

use std::str::FromStr;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sparse::CsrMatrix;
use crate::{Error, Result};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    Jacobi,
    #[default]
    Ilu0,
}

impl FromStr for Preconditioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "jacobi" => Ok(Self::Jacobi),
            "ilu0" | "ilu" => Ok(Self::Ilu0),
            _ => Err(Error::Config(format!("unknown preconditioner `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual target `‖b − Ax‖ / ‖b‖`.
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-11,
            restart: 60,
            max_iterations: 20_000,
            preconditioner: Preconditioner::Ilu0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearSolveReport {
    pub iterations: usize,
    /// Relative residual of the returned iterate, recomputed from scratch.
    pub residual_norm: f64,
    pub converged: bool,
    pub tolerance: f64,
}

/// Incomplete LU with the sparsity pattern of `A`; `L` has unit diagonal.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        let mut lu = a.clone();
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.indptr[i]..lu.indptr[i + 1] {
                if lu.indices[k] as usize == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::Config(format!(
                    "ILU(0): row {i} has no diagonal entry"
                )));
            }
        }
        let mut pos = vec![usize::MAX; a.ncols];
        for i in 0..n {
            let (start, end) = (lu.indptr[i], lu.indptr[i + 1]);
            for k in start..end {
                pos[lu.indices[k] as usize] = k;
            }
            for k in start..end {
                let col = lu.indices[k] as usize;
                if col >= i {
                    break;
                }
                let pivot = lu.values[diag[col]];
                let lik = lu.values[k] / pivot;
                lu.values[k] = lik;
                for m in diag[col] + 1..lu.indptr[col + 1] {
                    let j = lu.indices[m] as usize;
                    let p = pos[j];
                    if p != usize::MAX {
                        lu.values[p] -= lik * lu.values[m];
                    }
                }
            }
            for k in start..end {
                pos[lu.indices[k] as usize] = usize::MAX;
            }
            if lu.values[diag[i]] == 0.0 || !lu.values[diag[i]].is_finite() {
                return Err(Error::Config(format!("ILU(0): zero pivot in row {i}")));
            }
        }
        Ok(Self { lu, diag })
    }

    /// `x ← (LU)⁻¹ x`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.lu.nrows;
        for i in 0..n {
            let mut s = x[i];
            for k in self.lu.indptr[i]..self.diag[i] {
                s -= self.lu.values[k] * x[self.lu.indices[k] as usize];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in self.diag[i] + 1..self.lu.indptr[i + 1] {
                s -= self.lu.values[k] * x[self.lu.indices[k] as usize];
            }
            x[i] = s / self.lu.values[self.diag[i]];
        }
    }
}

enum Precond {
    Identity,
    Jacobi(Vec<f64>),
    Ilu(Ilu0),
}

impl Precond {
    fn build(a: &CsrMatrix, kind: Preconditioner) -> Result<Self> {
        Ok(match kind {
            Preconditioner::None => Precond::Identity,
            Preconditioner::Jacobi => Precond::Jacobi(
                a.diagonal()
                    .into_iter()
                    .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
                    .collect(),
            ),
            Preconditioner::Ilu0 => Precond::Ilu(Ilu0::new(a)?),
        })
    }

    fn apply(&self, x: &mut [f64]) {
        match self {
            Precond::Identity => {}
            Precond::Jacobi(d) => x.iter_mut().zip(d).for_each(|(v, s)| *v *= s),
            Precond::Ilu(f) => f.solve_in_place(x),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Solves `A x = b` by restarted GMRES with right preconditioning, starting
/// from zero. On failure the error carries the best iterate found.
pub fn solve(
    a: &CsrMatrix,
    b: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let n = a.nrows;
    if a.ncols != n {
        return Err(Error::SizeMismatch {
            expected: n,
            got: a.ncols,
        });
    }
    if b.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            LinearSolveReport {
                iterations: 0,
                residual_norm: 0.0,
                converged: true,
                tolerance: opts.tolerance,
            },
        ));
    }
    let pc = Precond::build(a, opts.preconditioner)?;
    let m = opts.restart.max(1).min(n.max(1));
    let target = opts.tolerance * bnorm;
    let mut iterations = 0;
    let mut best = (f64::INFINITY, x.clone());
    let mut stagnant = 0;
    loop {
        let r = residual(a, &x, b);
        let beta = norm(&r);
        if beta < best.0 {
            best = (beta, x.clone());
        }
        if beta <= target || iterations >= opts.max_iterations || stagnant >= 3 {
            break;
        }
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut hcol: Vec<Vec<f64>> = Vec::with_capacity(m);
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::with_capacity(m), Vec::with_capacity(m));
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        while k < m && iterations < opts.max_iterations {
            z.copy_from_slice(&v[k]);
            pc.apply(&mut z);
            a.matvec(&z, &mut w);
            let mut h = vec![0.0; k + 2];
            // modified Gram–Schmidt, twice for stability
            for _ in 0..2 {
                for (j, vj) in v.iter().enumerate() {
                    let c = dot(&w, vj);
                    h[j] += c;
                    w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= c * vi);
                }
            }
            h[k + 1] = norm(&w);
            for j in 0..k {
                let t = cs[j] * h[j] + sn[j] * h[j + 1];
                h[j + 1] = -sn[j] * h[j] + cs[j] * h[j + 1];
                h[j] = t;
            }
            let d = h[k].hypot(h[k + 1]);
            let (c, s) = if d == 0.0 {
                (1.0, 0.0)
            } else {
                (h[k] / d, h[k + 1] / d)
            };
            let hk1 = h[k + 1];
            h[k] = d;
            h[k + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g[k + 1] = -s * g[k];
            g[k] *= c;
            hcol.push(h);
            iterations += 1;
            k += 1;
            if g[k].abs() <= target || hk1 == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hk1).collect());
        }
        // back substitution on the triangular least-squares system
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hcol[j][i] * y[j];
            }
            y[i] = s / hcol[i][i];
        }
        let mut dx = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            dx.iter_mut().zip(&v[j]).for_each(|(d, vj)| *d += yj * vj);
        }
        pc.apply(&mut dx);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        let new = norm(&residual(a, &x, b));
        stagnant = if new > 0.999 * beta { stagnant + 1 } else { 0 };
    }
    let (rnorm, xbest) = best;
    let rel = rnorm / bnorm;
    let report = LinearSolveReport {
        iterations,
        residual_norm: rel,
        converged: rnorm <= target,
        tolerance: opts.tolerance,
    };
    if report.converged {
        Ok((xbest, report))
    } else {
        Err(Error::NoConvergence {
            iterations,
            residual: rel,
            best: xbest,
        })
    }
}

/// Eigenvalue extremes of a real matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumSummary {
    /// Largest imaginary component, reported with positive imaginary part.
    pub lambda_star: [f64; 2],
    /// Largest real part.
    pub lambda_max: [f64; 2],
    /// Smallest real part.
    pub lambda_min: [f64; 2],
    pub n_positive_real: usize,
    pub count: usize,
}

impl SpectrumSummary {
    pub fn from_eigenvalues(ev: &[Complex<f64>]) -> Result<Self> {
        if ev.is_empty() {
            return Err(Error::Eigen("empty spectrum".into()));
        }
        let pick = |better: &dyn Fn(&Complex<f64>, &Complex<f64>) -> bool| {
            let mut b = ev[0];
            for e in &ev[1..] {
                if better(e, &b) {
                    b = *e;
                }
            }
            b
        };
        let star = pick(&|a, b| a.im.abs() > b.im.abs());
        let max = pick(&|a, b| a.re > b.re);
        let min = pick(&|a, b| a.re < b.re);
        Ok(Self {
            lambda_star: [star.re, star.im.abs()],
            lambda_max: [max.re, max.im.abs()],
            lambda_min: [min.re, min.im.abs()],
            n_positive_real: ev.iter().filter(|e| e.re > 0.0).count(),
            count: ev.len(),
        })
    }
}

/// Diagonal similarity `D⁻¹ A D` with power-of-two entries that roughly
/// equalizes off-diagonal row and column norms. Eigenvalues are unchanged.
pub fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / 2.0;
            while c < g {
                f *= 2.0;
                c *= 4.0;
            }
            g = r * 2.0;
            while c > g {
                f /= 2.0;
                c /= 4.0;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// All eigenvalues, sorted by real part. The matrix is balanced first, then
/// handed to faer's Hessenberg QR. Small-cell operators mix entries of very
/// different size, and without balancing the QR iteration can stall.
pub fn dense_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !a.is_square() {
        return Err(Error::Eigen("matrix is not square".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let mut b = a.clone();
    balance(&mut b);
    let m = faer::Mat::<f64>::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
    let raw = m
        .eigenvalues()
        .map_err(|e| Error::Eigen(format!("dense eigensolver failed: {e:?}")))?;
    let mut ev: Vec<Complex<f64>> = raw.iter().map(|z| Complex::new(z.re, z.im)).collect();
    sort_eigenvalues(&mut ev);
    Ok(ev)
}

pub const DENSE_LIMIT: usize = 20_000;

pub fn sort_eigenvalues(ev: &mut [Complex<f64>]) {
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    LargestMagnitude,
    /// Nearest the origin, found with shift-invert at zero; for spectra in
    /// the left half-plane these include the largest real parts.
    NearestZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArnoldiOptions {
    pub subspace: usize,
    pub max_restarts: usize,
    pub tolerance: f64,
}

impl Default for ArnoldiOptions {
    fn default() -> Self {
        Self {
            subspace: 80,
            max_restarts: 200,
            tolerance: 1e-10,
        }
    }
}

/// `(A)⁻¹` applied through GMRES.
struct ShiftInvert<'a> {
    a: &'a CsrMatrix,
    opts: SolverOptions,
}

impl LinearOperator for ShiftInvert<'_> {
    fn dim(&self) -> usize {
        self.a.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let sol = match solve(self.a, x, &self.opts) {
            Ok((s, _)) => s,
            Err(Error::NoConvergence { best, .. }) => best,
            Err(e) => panic!("shift-invert solve failed: {e}"),
        };
        y.copy_from_slice(&sol);
    }
}

/// `k` eigenvalues of a sparse matrix by explicitly restarted Arnoldi.
pub fn arnoldi_eigenvalues(
    a: &CsrMatrix,
    k: usize,
    which: Which,
    opts: &ArnoldiOptions,
) -> Result<Vec<Complex<f64>>> {
    match which {
        Which::LargestMagnitude => arnoldi(a, k, opts),
        Which::NearestZero => {
            let inv = ShiftInvert {
                a,
                opts: SolverOptions {
                    tolerance: 1e-13,
                    ..Default::default()
                },
            };
            let mut mu = arnoldi(&inv, k, opts)?;
            for m in mu.iter_mut() {
                *m = Complex::new(1.0, 0.0) / *m;
            }
            sort_eigenvalues(&mut mu);
            Ok(mu)
        }
    }
}

/// Largest-magnitude eigenvalues of a linear operator.
pub fn arnoldi(
    op: &dyn LinearOperator,
    k: usize,
    opts: &ArnoldiOptions,
) -> Result<Vec<Complex<f64>>> {
    let n = op.dim();
    if k == 0 || k >= n {
        return Err(Error::Eigen(format!(
            "need 0 < k < n, got k = {k}, n = {n}"
        )));
    }
    let m = opts.subspace.max(2 * k + 2).min(n);
    // deterministic start vector
    let mut start: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0)
        .collect();
    let mut last = Vec::new();
    for _ in 0..opts.max_restarts {
        let s = norm(&start);
        let mut v: Vec<Vec<f64>> = vec![start.iter().map(|x| x / s).collect()];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let mut w = vec![0.0; n];
        let mut size = m;
        for j in 0..m {
            op.apply(&v[j], &mut w);
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(&w, vi);
                    h[(i, j)] += c;
                    w.iter_mut().zip(vi).for_each(|(wi, x)| *wi -= c * x);
                }
            }
            let hn = norm(&w);
            h[(j + 1, j)] = hn;
            if hn <= 1e-14 * h.column(j).norm() {
                size = j + 1;
                break;
            }
            v.push(w.iter().map(|x| x / hn).collect());
        }
        let hm = h.view((0, 0), (size, size)).into_owned();
        let mut theta: Vec<Complex<f64>> = dense_eigenvalues(&hm)?;
        theta.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        let wanted: Vec<Complex<f64>> = theta.iter().take(k).copied().collect();
        let hnext = if size < m || size == n {
            0.0
        } else {
            h[(size, size - 1)]
        };
        let mut converged = true;
        let mut combo = vec![0.0; n];
        for (idx, t) in wanted.iter().enumerate() {
            let y = ritz_vector(&hm, *t);
            let res = hnext * y[size - 1].norm();
            if res > opts.tolerance * t.norm().max(f64::MIN_POSITIVE) {
                converged = false;
            }
            // restart from the combined real parts of the wanted Ritz vectors
            let scale = 1.0 / (1.0 + idx as f64);
            for (j, vj) in v.iter().take(size).enumerate() {
                let c = y[j].re * scale;
                combo.iter_mut().zip(vj).for_each(|(x, vv)| *x += c * vv);
            }
        }
        last = wanted;
        if converged {
            sort_eigenvalues(&mut last);
            return Ok(last);
        }
        if norm(&combo) == 0.0 {
            break;
        }
        start = combo;
    }
    Err(Error::Eigen(format!(
        "Arnoldi did not converge {} eigenvalues in {} restarts (last estimates {:?})",
        k,
        opts.max_restarts,
        last.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>()
    )))
}

/// Unit eigenvector of a small dense matrix for the eigenvalue `t`, by
/// inverse iteration with a slightly perturbed shift.
fn ritz_vector(h: &DMatrix<f64>, t: Complex<f64>) -> DVector<Complex<f64>> {
    let n = h.nrows();
    let scale = h.norm().max(1.0);
    let shift = t + Complex::new(1e-10 * scale, 1e-10 * scale);
    let mut c: DMatrix<Complex<f64>> = h.map(|x| Complex::new(x, 0.0));
    for i in 0..n {
        c[(i, i)] -= shift;
    }
    let lu = c.lu();
    let mut y = DVector::from_element(n, Complex::new(1.0, 0.0));
    for _ in 0..3 {
        if let Some(z) = lu.solve(&y) {
            let nz = z.norm();
            if nz == 0.0 || !nz.is_finite() {
                break;
            }
            y = z.unscale(nz);
        }
    }
    y
}
