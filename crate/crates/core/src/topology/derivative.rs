use serde::{Deserialize, Serialize};

use super::binary::{extract_from_values, FunctionalSpec};
use super::euler::euler_characteristic_cubical;
use super::label::{label_components, ConnectivityPolicy};
use crate::error::{Error, Result};
use crate::field::FieldSample;
use crate::grid::{CellBox, Shape};

/// Smooth bump `height · exp(1 - 1/(1 - s²))`, `s = |y - x| / radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub radius: f64,
    pub height: f64,
}

impl Bump {
    pub fn at(&self, dist: f64) -> f64 {
        let s = dist / self.radius;
        if s >= 1.0 {
            0.0
        } else {
            self.height * (1.0 - 1.0 / (1.0 - s * s)).exp()
        }
    }

    pub fn halved(&self) -> Bump {
        Bump { radius: 0.5 * self.radius, height: 0.5 * self.height }
    }

    /// Single-cell bump below the gap between `level` and the neighboring values.
    pub fn auto(fs: &FieldSample, cell: [usize; 3], level: f64) -> Bump {
        let shape = fs.shape();
        let mut gap = f64::INFINITY;
        let r = |k: usize| if k < shape.dim { -2i64..=2 } else { 0..=0 };
        for a in r(0) {
            for b in r(1) {
                for c in r(2) {
                    if a == 0 && b == 0 && c == 0 {
                        continue;
                    }
                    if let Some(q) = shape.offset(cell, [a, b, c]) {
                        gap = gap.min((fs.values[shape.index(q)] - level).abs());
                    }
                }
            }
        }
        let gap = if gap.is_finite() { gap } else { 1.0 };
        Bump { radius: 0.5 * fs.grid.spacing, height: (0.25 * gap).min(1e-6).max(f64::MIN_POSITIVE) }
    }
}

/// `Φ(D, g)` for a cell-valued field.
pub fn functional_on_box(shape: &Shape, values: &[f64], spacing: f64, spec: &FunctionalSpec, d: &CellBox) -> Result<f64> {
    d.check_in(shape)?;
    let sub_shape = d.shape();
    let sub: Vec<f64> = d.iter().map(|p| values[shape.index(p)]).collect();
    let grid = extract_from_values(sub_shape, &sub, spec, spacing);
    let full = sub_shape.full_box();
    if spec.is_component_sum() {
        let geom = label_components(&grid, ConnectivityPolicy::default());
        let ids = geom.counted_components(&full)?;
        Ok(ids.iter().map(|&id| spec.component_weight(geom.component(id).holes)).sum())
    } else {
        Ok(euler_characteristic_cubical(&grid, &full)? as f64)
    }
}

fn perturbed_difference(
    fs: &FieldSample,
    spec: &FunctionalSpec,
    d: &CellBox,
    cell: [usize; 3],
    bump: Bump,
) -> Result<f64> {
    let shape = fs.shape();
    let h = fs.grid.spacing;
    let mut up = fs.values.clone();
    let mut down = fs.values.clone();
    let reach = (bump.radius / h).ceil() as i64;
    let r = |k: usize| if k < shape.dim { -reach..=reach } else { 0..=0 };
    for a in r(0) {
        for b in r(1) {
            for c in r(2) {
                let Some(q) = shape.offset(cell, [a, b, c]) else { continue };
                let dist = h * ((a * a + b * b + c * c) as f64).sqrt();
                let rho = bump.at(dist);
                if rho != 0.0 {
                    let i = shape.index(q);
                    up[i] += rho;
                    down[i] -= rho;
                }
            }
        }
    }
    Ok(functional_on_box(&shape, &up, h, spec, d)? - functional_on_box(&shape, &down, h, spec, d)?)
}

/// `Φ(D, f + ρ) - Φ(D, f - ρ)` for a bump at the cell nearest `x`, checked against the halved bump.
pub fn topological_derivative(
    fs: &FieldSample,
    spec: &FunctionalSpec,
    d: &CellBox,
    x: &[f64],
    bump: Bump,
) -> Result<f64> {
    let cell = fs.grid.cell_at(x)?;
    derivative_at_cell(fs, spec, d, cell, bump)
}

pub fn derivative_at_cell(
    fs: &FieldSample,
    spec: &FunctionalSpec,
    d: &CellBox,
    cell: [usize; 3],
    bump: Bump,
) -> Result<f64> {
    d.check_in(&fs.shape())?;
    if !d.contains(cell) {
        return Err(Error::DomainOutsideGrid);
    }
    let v = perturbed_difference(fs, spec, d, cell, bump)?;
    let w = perturbed_difference(fs, spec, d, cell, bump.halved())?;
    if v != w {
        return Err(Error::NotStabilized(format!("bump refinement changed {v} to {w}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceModel;
    use crate::grid::GridSpec;

    fn field_from(f: impl Fn(f64, f64) -> f64) -> FieldSample {
        let g = GridSpec::new(2, 16.0, 0.25, 0.0).unwrap();
        let shape = g.shape();
        let v = (0..shape.len())
            .map(|i| {
                let p = shape.coords(i);
                f(g.coord(p[0]), g.coord(p[1]))
            })
            .collect();
        FieldSample::from_values(g, &CovarianceModel::bargmann_fock(2), v).unwrap()
    }

    fn derivative(fs: &FieldSample, level: f64, x: [f64; 2]) -> f64 {
        let spec = FunctionalSpec::count(level);
        let d = fs.grid.centered_box(16.0).unwrap();
        let cell = fs.grid.cell_at(&x).unwrap();
        let bump = Bump::auto(fs, cell, level);
        topological_derivative(fs, &spec, &d, &x, bump).unwrap()
    }

    #[test]
    fn maximum_saddle_minimum() {
        let c = 0.125;
        let cap = field_from(|x, y| (-((x - c).powi(2) + (y - c).powi(2)) / 2.0).exp());
        let top = cap.values[cap.shape().index(cap.grid.cell_at(&[c, c]).unwrap())];
        assert_eq!(derivative(&cap, top, [c, c]), 1.0);

        // Two bumps along x with a saddle between them at the origin cell.
        let two = field_from(|x, y| {
            let g = |a: f64| (-((x - a).powi(2) + (y - c).powi(2)) / 2.0).exp();
            g(c - 2.0) + g(c + 2.0)
        });
        let s = two.values[two.shape().index(two.grid.cell_at(&[c, c]).unwrap())];
        assert_eq!(derivative(&two, s, [c, c]), -1.0);

        // Inverted cap inside a plateau-like bowl: filling the hole keeps the count.
        let bowl = field_from(|x, y| {
            let r2 = (x - c).powi(2) + (y - c).powi(2);
            1.0 - (-r2 / 2.0).exp() * (-(r2 / 30.0)).exp() - r2 / 100.0
        });
        let m = bowl.values[bowl.shape().index(bowl.grid.cell_at(&[c, c]).unwrap())];
        assert_eq!(derivative(&bowl, m, [c, c]), 0.0);
    }
}
