use crate::{Error, Point, Result};

/// Cell multi-index; components past `dim` are zero.
pub type Cell = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }
}

/// Uniform grid of `n^dim` cells of width `h = 1/n` covering the unit box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidGrid(format!(
                "dimension {dim} not in {{2, 3}}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidGrid("need at least one cell per side".into()));
        }
        Ok(Self {
            dim,
            n,
            h: 1.0 / n as f64,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Lexicographic flat index; flat order equals tuple order of the cell index.
    pub fn flat(&self, c: &Cell) -> usize {
        (0..self.dim).fold(0, |acc, d| acc * self.n + c[d])
    }

    pub fn unflat(&self, mut k: usize) -> Cell {
        let mut c = [0; 3];
        for d in (0..self.dim).rev() {
            c[d] = k % self.n;
            k /= self.n;
        }
        c
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells()).map(|k| self.unflat(k))
    }

    pub fn cell_lo(&self, c: &Cell) -> Point {
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = c[d] as f64 * self.h;
        }
        x
    }

    pub fn cell_hi(&self, c: &Cell) -> Point {
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = (c[d] + 1) as f64 * self.h;
        }
        x
    }

    pub fn cell_center(&self, c: &Cell) -> Point {
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = (c[d] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Box of the face of cell `c` on `side` of `axis`; degenerate along `axis`.
    pub fn face_box(&self, c: &Cell, axis: usize, side: Side) -> (Point, Point) {
        let (mut lo, mut hi) = (self.cell_lo(c), self.cell_hi(c));
        let x = match side {
            Side::Low => lo[axis],
            Side::High => hi[axis],
        };
        lo[axis] = x;
        hi[axis] = x;
        (lo, hi)
    }

    pub fn face_center(&self, c: &Cell, axis: usize, side: Side) -> Point {
        let (lo, hi) = self.face_box(c, axis, side);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = 0.5 * (lo[d] + hi[d]);
        }
        x
    }

    /// Neighbor across the face on `side` of `axis`, if inside the grid.
    pub fn neighbor(&self, c: &Cell, axis: usize, side: Side) -> Option<Cell> {
        let mut o = *c;
        match side {
            Side::Low if c[axis] == 0 => None,
            Side::Low => {
                o[axis] -= 1;
                Some(o)
            }
            Side::High if c[axis] + 1 == self.n => None,
            Side::High => {
                o[axis] += 1;
                Some(o)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_cells() {
        let g = Grid::new(2, 4).unwrap();
        assert_eq!(g.h * 4.0, 1.0);
        assert_eq!(g.cell_lo(&[1, 2, 0]), [0.25, 0.5, 0.0]);
        assert_eq!(g.cell_center(&[1, 2, 0]), [0.375, 0.625, 0.0]);
        assert_eq!(g.face_center(&[0, 0, 0], 0, Side::High), [0.25, 0.125, 0.0]);
        assert_eq!(g.face_center(&[0, 3, 0], 0, Side::Low), [0.0, 0.875, 0.0]);
    }

    #[test]
    fn flat_is_lexicographic() {
        let g = Grid::new(3, 5).unwrap();
        let cells: Vec<Cell> = g.cells().collect();
        assert!(cells.windows(2).all(|w| w[0] < w[1]));
        for c in &cells {
            assert_eq!(g.unflat(g.flat(c)), *c);
        }
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(Grid::new(1, 4).is_err());
        assert!(Grid::new(2, 0).is_err());
    }
}
