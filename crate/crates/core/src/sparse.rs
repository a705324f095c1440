//! Compressed sparse row matrices and Matrix Market I/O.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Row-major sparse matrix; column indices within a row are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            nrows: d.len(),
            ncols: d.len(),
            indptr: (0..=d.len()).collect(),
            indices: (0..d.len() as u32).collect(),
            values: d.to_vec(),
        }
    }

    /// Builds a matrix by pushing one row at a time. Entries of a row may
    /// arrive in any order; duplicates are summed.
    pub fn builder(ncols: usize) -> CsrBuilder {
        CsrBuilder {
            m: Self::zeros(0, ncols),
            scratch: Vec::new(),
        }
    }

    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::SizeMismatch {
                    expected: nrows.max(ncols),
                    got: i.max(j) + 1,
                });
            }
            rows[i].push((j as u32, v));
        }
        let mut b = Self::builder(ncols);
        for r in rows {
            b.push_row(r);
        }
        Ok(b.finish())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&(j as u32)).map_or(0.0, |k| v[k])
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, a)| a * x[j as usize]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// Multiplies row `i` by `s[i]`.
    pub fn scale_rows(&mut self, s: &[f64]) {
        assert_eq!(s.len(), self.nrows);
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                self.values[k] *= s[i];
            }
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                d[(i, j as usize)] = a;
            }
        }
        d
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j as usize + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                let k = next[j as usize];
                indices[k] = i as u32;
                values[k] = a;
                next[j as usize] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    /// Coordinate format, 1-based, general real.
    pub fn write_matrix_market(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, a)?;
            }
        }
        Ok(())
    }

    /// Reads coordinate `real`/`integer` matrices, `general` or `symmetric`.
    pub fn read_matrix_market(r: impl BufRead) -> Result<CsrMatrix> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MatrixMarket("empty input".into()))??;
        let h: Vec<String> = header
            .split_whitespace()
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" {
            return Err(Error::MatrixMarket(format!(
                "unsupported header `{header}`"
            )));
        }
        if !matches!(h[3].as_str(), "real" | "integer" | "double") {
            return Err(Error::MatrixMarket(format!("unsupported field `{}`", h[3])));
        }
        let symmetric = match h[4].as_str() {
            "general" => false,
            "symmetric" => true,
            s => return Err(Error::MatrixMarket(format!("unsupported symmetry `{s}`"))),
        };
        let mut size: Option<(usize, usize, usize)> = None;
        let mut trip = Vec::new();
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            let bad = || Error::MatrixMarket(format!("malformed line `{t}`"));
            match size {
                None => {
                    if parts.len() != 3 {
                        return Err(bad());
                    }
                    let p = |s: &str| s.parse::<usize>().map_err(|_| bad());
                    size = Some((p(parts[0])?, p(parts[1])?, p(parts[2])?));
                    trip.reserve(p(parts[2])?);
                }
                Some((m, n, _)) => {
                    if parts.len() != 3 {
                        return Err(bad());
                    }
                    let i: usize = parts[0].parse().map_err(|_| bad())?;
                    let j: usize = parts[1].parse().map_err(|_| bad())?;
                    let v: f64 = parts[2].parse().map_err(|_| bad())?;
                    if i == 0 || j == 0 || i > m || j > n {
                        return Err(Error::MatrixMarket(format!("index out of range in `{t}`")));
                    }
                    trip.push((i - 1, j - 1, v));
                    if symmetric && i != j {
                        trip.push((j - 1, i - 1, v));
                    }
                }
            }
        }
        let (m, n, nnz) = size.ok_or_else(|| Error::MatrixMarket("missing size line".into()))?;
        let stored = if symmetric {
            trip.iter().filter(|(i, j, _)| i >= j).count()
        } else {
            trip.len()
        };
        if stored != nnz {
            return Err(Error::MatrixMarket(format!(
                "expected {nnz} entries, found {stored}"
            )));
        }
        CsrMatrix::from_triplets(m, n, &trip)
    }
}

pub struct CsrBuilder {
    m: CsrMatrix,
    scratch: Vec<(u32, f64)>,
}

impl CsrBuilder {
    pub fn push_row(&mut self, mut entries: Vec<(u32, f64)>) {
        entries.sort_by_key(|e| e.0);
        self.push_sorted(&entries);
    }

    /// Appends a row from entries that may contain duplicates, reusing an
    /// internal buffer.
    pub fn push_unsorted(&mut self, entries: impl IntoIterator<Item = (u32, f64)>) {
        let mut s = std::mem::take(&mut self.scratch);
        s.clear();
        s.extend(entries);
        s.sort_by_key(|e| e.0);
        self.push_sorted(&s);
        self.scratch = s;
    }

    fn push_sorted(&mut self, entries: &[(u32, f64)]) {
        let m = &mut self.m;
        let mut last: Option<u32> = None;
        for &(j, v) in entries {
            assert!((j as usize) < m.ncols, "column {j} out of range");
            if last == Some(j) {
                *m.values.last_mut().unwrap() += v;
            } else {
                m.indices.push(j);
                m.values.push(v);
                last = Some(j);
            }
        }
        m.nrows += 1;
        m.indptr.push(m.indices.len());
    }

    pub fn finish(self) -> CsrMatrix {
        self.m
    }
}
