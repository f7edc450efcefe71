use serde::{Deserialize, Serialize};

use super::binary::{extract_excursion, FunctionalSpec};
use super::label::{label_components, ConnectivityPolicy, ExcursionGeometry};
use crate::error::{Error, Result};
use crate::field::FieldSample;
use crate::grid::{CellBox, GridSpec};

/// Planes `a·ℤ` normal to each axis, in cell-boundary units.
#[derive(Debug, Clone, Copy)]
struct PlaneLattice {
    spacing: i64,
    origin: i64,
}

impl PlaneLattice {
    /// Number of planes met by cells `lo..=hi` along one axis.
    fn planes_touched(&self, lo: usize, hi: usize) -> i64 {
        let a = lo as i64 - self.origin;
        let b = hi as i64 + 1 - self.origin;
        b.div_euclid(self.spacing) - (a + self.spacing - 1).div_euclid(self.spacing) + 1
    }
}

fn plane_lattice(grid: &GridSpec, a: f64) -> Result<PlaneLattice> {
    if a < 2.0 * grid.spacing - 1e-12 {
        return Err(Error::BadScale(format!("a = {a} is below 2h = {}", 2.0 * grid.spacing)));
    }
    let cells = grid.cells_for_length(a)?;
    Ok(PlaneLattice { spacing: cells as i64, origin: (grid.cells_per_side() / 2) as i64 })
}

fn is_large(geom: &ExcursionGeometry, lattice: &PlaneLattice, id: u32) -> bool {
    let c = geom.component(id);
    (0..geom.shape.dim).any(|k| lattice.planes_touched(c.bbox_lo[k], c.bbox_hi[k]) >= 2)
}

/// Counted components of `d` split into those meeting two parallel a-planes and the rest.
pub fn split_by_a_planes(
    geom: &ExcursionGeometry,
    grid: &GridSpec,
    a: f64,
    d: &CellBox,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let lattice = plane_lattice(grid, a)?;
    for k in 0..grid.dim {
        if d.extent(k) % lattice.spacing as usize != 0 {
            return Err(Error::BadScale(format!("a = {a} does not divide the box side")));
        }
    }
    let ids = geom.counted_components(d)?;
    Ok(ids.into_iter().partition(|&id| is_large(geom, &lattice, id)))
}

/// Check `r/a ∈ 2ℕ` and `R/(r+4a) ∈ 2ℕ`.
pub fn check_scales(big_r: f64, r: f64, a: f64) -> Result<()> {
    let even_ratio = |num: f64, den: f64| -> bool {
        if !(num > 0.0 && den > 0.0) {
            return false;
        }
        let q = num / den;
        (q - q.round()).abs() < 1e-9 && q.round() >= 2.0 && (q.round() as i64) % 2 == 0
    };
    if !even_ratio(r, a) {
        return Err(Error::BadScale(format!("r/a = {r}/{a} is not an even integer")));
    }
    if !even_ratio(big_r, r + 4.0 * a) {
        return Err(Error::BadScale(format!("R/(r+4a) = {big_r}/{} not even", r + 4.0 * a)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub scales: [f64; 3],
    pub mesobox_centers: Vec<Vec<f64>>,
    pub mesobox_values: Vec<f64>,
    pub a_term: f64,
    pub b_term: f64,
    pub c_term: f64,
    pub total: f64,
}

impl DecompositionResult {
    pub fn mesobox_sum(&self) -> f64 {
        self.mesobox_values.iter().sum()
    }

    pub fn identity_holds(&self) -> bool {
        self.total == self.mesobox_sum() + self.a_term + self.b_term + self.c_term
    }
}

pub fn multiscale_decompose(
    fs: &FieldSample,
    spec: &FunctionalSpec,
    big_r: f64,
    r: f64,
    a: f64,
) -> Result<DecompositionResult> {
    if !spec.is_component_sum() {
        return Err(Error::InvalidInput("decomposition needs a component-sum functional".into()));
    }
    spec.validate(fs.grid.dim)?;
    check_scales(big_r, r, a)?;
    let grid = fs.grid;
    let lattice = plane_lattice(&grid, a)?;
    let outer = grid.centered_box(big_r)?;
    let period = grid.cells_for_length(r + 4.0 * a)? as i64;
    let per_axis = (big_r / (r + 4.0 * a)).round() as i64;
    let dim = grid.dim;

    let geom = label_components(&extract_excursion(fs, spec), ConnectivityPolicy::default());
    let shape = geom.shape;

    // Mesobox boxes, in raster order of centers.
    let mut boxes = Vec::new();
    let mut centers = Vec::new();
    let count = (per_axis as usize).pow(dim as u32);
    for n in 0..count {
        let mut c = [0i64; 3];
        let mut rem = n;
        let mut coords = Vec::new();
        for k in (0..dim).rev() {
            let j = (rem % per_axis as usize) as i64 - per_axis / 2;
            rem /= per_axis as usize;
            c[k] = period * j + period / 2;
        }
        for k in 0..dim {
            coords.push(c[k] as f64 * grid.spacing);
        }
        boxes.push(grid.box_at(c, r)?);
        centers.push(coords);
    }

    // Region code per cell of the outer box: 0 outside mesoboxes, 1 shell, 2+j interior of box j.
    let mut region = vec![0u32; shape.len()];
    for (j, b) in boxes.iter().enumerate() {
        for p in b.iter() {
            region[shape.index(p)] = if b.on_shell(p) { 1 } else { 2 + j as u32 };
        }
    }

    let ids = geom.counted_components(&outer)?;
    let ncomp = geom.components.len() + 1;
    let mut touches_shell = vec![false; ncomp];
    let mut inside_box = vec![u32::MAX; ncomp];
    let mut outside = vec![false; ncomp];
    for p in outer.iter() {
        let i = shape.index(p);
        let l = geom.labels[i] as usize;
        if l == 0 {
            continue;
        }
        match region[i] {
            0 => outside[l] = true,
            1 => touches_shell[l] = true,
            code => inside_box[l] = code - 2,
        }
    }

    let weight = |id: u32| spec.component_weight(geom.component(id).holes);
    let (mut a_term, mut b_term, mut c_term) = (0.0, 0.0, 0.0);
    let mut total = 0.0;
    for &id in &ids {
        let w = weight(id);
        total += w;
        let l = id as usize;
        if touches_shell[l] {
            if is_large(&geom, &lattice, id) {
                b_term += w;
            } else {
                c_term += w;
            }
        } else if inside_box[l] == u32::MAX {
            debug_assert!(outside[l]);
            a_term += w;
        }
    }
    let mut mesobox_values = Vec::with_capacity(boxes.len());
    for b in &boxes {
        let v: f64 = geom.counted_components(b)?.iter().map(|&id| weight(id)).sum();
        mesobox_values.push(v);
    }
    Ok(DecompositionResult {
        scales: [big_r, r, a],
        mesobox_centers: centers,
        mesobox_values,
        a_term,
        b_term,
        c_term,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_counting() {
        let l = PlaneLattice { spacing: 4, origin: 8 };
        // Cells 8..=8 touch boundaries 8 and 9: one plane.
        assert_eq!(l.planes_touched(8, 8), 1);
        assert_eq!(l.planes_touched(9, 10), 0);
        assert_eq!(l.planes_touched(7, 12), 2);
        assert_eq!(l.planes_touched(0, 3), 2);
    }

    #[test]
    fn scale_rules() {
        assert!(check_scales(16.0, 4.0, 1.0).is_ok());
        assert!(check_scales(12.0, 4.0, 1.0).is_err());
        assert!(check_scales(16.0, 3.0, 1.0).is_err());
        assert!(check_scales(24.0, 4.0, 1.0).is_err());
        assert!(check_scales(48.0, 4.0, 0.5).is_ok());
    }
}
