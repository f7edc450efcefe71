//! Regular grids centered at the origin.
//!
//! Cell `i` along an axis covers `[(i - n/2) h, (i - n/2 + 1) h]`, so the
//! origin is the corner shared by cells `n/2 - 1` and `n/2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub side: f64,
    pub spacing: f64,
    #[serde(default)]
    pub buffer: f64,
}

impl GridSpec {
    pub fn new(dim: usize, side: f64, spacing: f64, buffer: f64) -> Result<Self> {
        let g = GridSpec { dim, side, spacing, buffer };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::InvalidInput(format!("dimension {} not in 1..=3", self.dim)));
        }
        if !(self.side > 0.0 && self.spacing > 0.0 && self.buffer >= 0.0)
            || !(self.side + self.buffer).is_finite()
        {
            return Err(Error::InvalidInput("grid needs R > 0, h > 0, b >= 0".into()));
        }
        let n = ((self.side + 2.0 * self.buffer) / self.spacing).round() as usize;
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidInput(format!("cells per side {n} must be even and >= 2")));
        }
        Ok(())
    }

    pub fn cells_per_side(&self) -> usize {
        ((self.side + 2.0 * self.buffer) / self.spacing).round() as usize
    }

    pub fn shape(&self) -> Shape {
        Shape::cube(self.dim, self.cells_per_side())
    }

    pub fn len(&self) -> usize {
        self.shape().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center coordinate of cell `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.cells_per_side() / 2) as f64 + 0.5) * self.spacing
    }

    /// Number of cells spanned by `length`; errors unless it is a whole number.
    pub fn cells_for_length(&self, length: f64) -> Result<usize> {
        let c = length / self.spacing;
        if (c - c.round()).abs() > SNAP_TOL * c.max(1.0) || c.round() < 1.0 {
            return Err(Error::BadScale(format!(
                "length {length} is not a multiple of spacing {}",
                self.spacing
            )));
        }
        Ok(c.round() as usize)
    }

    /// Cells of `c + Λ_side`, `c` given in cell units relative to the grid center corner.
    pub fn box_at(&self, center_cells: [i64; 3], side: f64) -> Result<CellBox> {
        let m = self.cells_for_length(side)?;
        if m % 2 != 0 {
            return Err(Error::BadScale(format!("box side {side} spans an odd number of cells")));
        }
        let n = self.cells_per_side() as i64;
        let mut lo = [0usize; 3];
        let mut hi = [1usize; 3];
        for k in 0..self.dim {
            let l = n / 2 + center_cells[k] - (m / 2) as i64;
            let h = l + m as i64;
            if l < 0 || h > n {
                return Err(Error::DomainOutsideGrid);
            }
            lo[k] = l as usize;
            hi[k] = h as usize;
        }
        Ok(CellBox { dim: self.dim, lo, hi })
    }

    /// `Λ_side` centered at the origin.
    pub fn centered_box(&self, side: f64) -> Result<CellBox> {
        self.box_at([0; 3], side)
    }

    /// Cell whose center is nearest to `x`.
    pub fn cell_at(&self, x: &[f64]) -> Result<[usize; 3]> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput("point dimension mismatch".into()));
        }
        let n = self.cells_per_side() as i64;
        let mut idx = [0usize; 3];
        for k in 0..self.dim {
            let i = (x[k] / self.spacing - 0.5).round() as i64 + n / 2;
            if i < 0 || i >= n {
                return Err(Error::DomainOutsideGrid);
            }
            idx[k] = i as usize;
        }
        Ok(idx)
    }

    pub fn cell_center(&self, idx: [usize; 3]) -> Vec<f64> {
        (0..self.dim).map(|k| self.coord(idx[k])).collect()
    }
}

/// Row-major shape, last axis fastest; unused axes have extent 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub dim: usize,
    pub dims: [usize; 3],
}

impl Shape {
    pub fn new(dim: usize, extents: &[usize]) -> Self {
        let mut dims = [1; 3];
        dims[..dim].copy_from_slice(&extents[..dim]);
        Shape { dim, dims }
    }

    pub fn cube(dim: usize, n: usize) -> Self {
        Shape::new(dim, &[n, n, n])
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> [usize; 3] {
        [self.dims[1] * self.dims[2], self.dims[2], 1]
    }

    pub fn index(&self, p: [usize; 3]) -> usize {
        (p[0] * self.dims[1] + p[1]) * self.dims[2] + p[2]
    }

    pub fn coords(&self, mut i: usize) -> [usize; 3] {
        let c2 = i % self.dims[2];
        i /= self.dims[2];
        let c1 = i % self.dims[1];
        [i / self.dims[1], c1, c2]
    }

    /// Neighbor of `p` by `off`, if inside.
    pub fn offset(&self, p: [usize; 3], off: [i64; 3]) -> Option<[usize; 3]> {
        let mut q = [0usize; 3];
        for k in 0..3 {
            let v = p[k] as i64 + off[k];
            if v < 0 || v >= self.dims[k] as i64 {
                return None;
            }
            q[k] = v as usize;
        }
        Some(q)
    }

    pub fn full_box(&self) -> CellBox {
        CellBox { dim: self.dim, lo: [0; 3], hi: self.dims }
    }

    pub fn on_border(&self, p: [usize; 3]) -> bool {
        (0..self.dim).any(|k| p[k] == 0 || p[k] + 1 == self.dims[k])
    }
}

/// Half-open box of cells `lo..hi` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBox {
    pub dim: usize,
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl CellBox {
    pub fn new(dim: usize, lo: [usize; 3], hi: [usize; 3]) -> Self {
        let mut b = CellBox { dim, lo, hi };
        for k in dim..3 {
            b.lo[k] = 0;
            b.hi[k] = 1;
        }
        b
    }

    pub fn extent(&self, k: usize) -> usize {
        self.hi[k] - self.lo[k]
    }

    pub fn len(&self) -> usize {
        (0..3).map(|k| self.extent(k)).product()
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim).any(|k| self.hi[k] <= self.lo[k])
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] < self.hi[k])
    }

    /// Cell on the one-cell-thick boundary layer.
    pub fn on_shell(&self, p: [usize; 3]) -> bool {
        (0..self.dim).any(|k| p[k] == self.lo[k] || p[k] + 1 == self.hi[k])
    }

    pub fn fits_in(&self, shape: &Shape) -> bool {
        self.dim == shape.dim && (0..3).all(|k| self.lo[k] < self.hi[k] && self.hi[k] <= shape.dims[k])
    }

    pub fn check_in(&self, shape: &Shape) -> Result<()> {
        if self.fits_in(shape) {
            Ok(())
        } else {
            Err(Error::DomainOutsideGrid)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let (lo, hi) = (self.lo, self.hi);
        (lo[0]..hi[0]).flat_map(move |i| {
            (lo[1]..hi[1]).flat_map(move |j| (lo[2]..hi[2]).map(move |k| [i, j, k]))
        })
    }

    pub fn intersect(&self, other: &CellBox) -> CellBox {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for k in 0..3 {
            lo[k] = self.lo[k].max(other.lo[k]);
            hi[k] = self.hi[k].min(other.hi[k]).max(lo[k]);
        }
        CellBox { dim: self.dim, lo, hi }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.dim, &[self.extent(0), self.extent(1), self.extent(2)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_and_boxes() {
        let g = GridSpec::new(2, 16.0, 0.25, 0.0).unwrap();
        assert_eq!(g.cells_per_side(), 64);
        assert!((g.coord(32) - 0.125).abs() < 1e-15);
        let b = g.centered_box(4.0).unwrap();
        assert_eq!((b.lo[0], b.hi[0]), (24, 40));
        assert!(g.centered_box(17.0).is_err());
        assert_eq!(g.cell_at(&[0.1, -0.1]).unwrap(), [32, 31, 0]);
    }

    #[test]
    fn odd_cells_rejected() {
        assert!(GridSpec::new(1, 1.25, 0.25, 0.0).is_err());
    }

    #[test]
    fn shape_index_roundtrip() {
        let s = Shape::new(3, &[3, 4, 5]);
        for i in 0..s.len() {
            assert_eq!(s.index(s.coords(i)), i);
        }
    }
}
