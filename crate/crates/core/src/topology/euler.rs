use super::binary::BinaryGrid;
use crate::error::Result;
use crate::grid::CellBox;

/// Euler characteristic of the closed cubical complex spanned by foreground
/// cells of `d`, split into the total and the part lying on the box boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EulerSplit {
    pub total: i64,
    pub boundary: i64,
}

impl EulerSplit {
    /// `χ(X ∩ D) - χ(X ∩ ∂D) / 2`, which removes the boundary term of the mean.
    pub fn interior_corrected(&self) -> f64 {
        self.total as f64 - 0.5 * self.boundary as f64
    }
}

pub fn euler_split(grid: &BinaryGrid, d: &CellBox) -> Result<EulerSplit> {
    d.check_in(&grid.shape)?;
    let dim = grid.shape.dim;
    let mut m = [1usize; 3];
    for k in 0..dim {
        m[k] = d.extent(k);
    }
    let refined = |k: usize| if k < dim { 2 * m[k] + 1 } else { 1 };
    let mut total = 0i64;
    let mut boundary = 0i64;
    // Candidate incident cells per axis for each refined coordinate.
    let ranges: Vec<Vec<(usize, usize, bool)>> = (0..3)
        .map(|k| {
            (0..refined(k))
                .map(|c| {
                    if k >= dim {
                        (0, 1, false)
                    } else if c % 2 == 1 {
                        ((c - 1) / 2, (c - 1) / 2 + 1, true)
                    } else {
                        let lo = (c / 2).saturating_sub(1);
                        let hi = (c / 2 + 1).min(m[k]);
                        (lo, hi, false)
                    }
                })
                .collect()
        })
        .collect();
    for c0 in 0..refined(0) {
        let r0 = ranges[0][c0];
        for c1 in 0..refined(1) {
            let r1 = ranges[1][c1];
            for c2 in 0..refined(2) {
                let r2 = ranges[2][c2];
                let mut present = false;
                'scan: for i in r0.0..r0.1 {
                    for j in r1.0..r1.1 {
                        for l in r2.0..r2.1 {
                            if grid.get([d.lo[0] + i, d.lo[1] + j, d.lo[2] + l]) {
                                present = true;
                                break 'scan;
                            }
                        }
                    }
                }
                if !present {
                    continue;
                }
                let odd = r0.2 as usize + r1.2 as usize + r2.2 as usize;
                let sign = if odd % 2 == 0 { 1 } else { -1 };
                total += sign;
                let c = [c0, c1, c2];
                if (0..dim).any(|k| c[k] == 0 || c[k] == 2 * m[k]) {
                    boundary += sign;
                }
            }
        }
    }
    Ok(EulerSplit { total, boundary })
}

pub fn euler_characteristic_cubical(grid: &BinaryGrid, d: &CellBox) -> Result<i64> {
    Ok(euler_split(grid, d)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(g: &BinaryGrid) -> i64 {
        euler_characteristic_cubical(g, &g.shape.full_box()).unwrap()
    }

    #[test]
    fn basic_shapes() {
        assert_eq!(full(&BinaryGrid::from_rows(&[&[0, 0, 0], &[0, 1, 0], &[0, 0, 0]])), 1);
        let ring = BinaryGrid::from_rows(&[&[1, 1, 1], &[1, 0, 1], &[1, 1, 1]]);
        assert_eq!(full(&ring), 0);
        let two = BinaryGrid::from_rows(&[&[1, 1, 0, 0], &[0, 0, 0, 1], &[0, 0, 0, 1]]);
        assert_eq!(full(&two), 2);
        // Diagonal touch shares a vertex.
        assert_eq!(full(&BinaryGrid::from_rows(&[&[1, 0], &[0, 1]])), 1);
    }

    #[test]
    fn boundary_part() {
        let g = BinaryGrid::from_rows(&[&[1, 1, 1], &[1, 1, 1], &[1, 1, 1]]);
        let s = euler_split(&g, &g.shape.full_box()).unwrap();
        assert_eq!(s.total, 1);
        assert_eq!(s.boundary, 0);
        let g = BinaryGrid::from_rows(&[&[1, 0, 0], &[0, 0, 0], &[0, 0, 0]]);
        let s = euler_split(&g, &g.shape.full_box()).unwrap();
        assert_eq!((s.total, s.boundary), (1, 1));
    }
}
