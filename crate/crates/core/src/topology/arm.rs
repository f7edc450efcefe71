use std::collections::VecDeque;

use super::binary::BinaryGrid;
use super::label::{label_mask, neighbor_offsets, Connectivity};
use crate::error::{Error, Result};
use crate::field::FieldSample;
use crate::grid::{CellBox, Shape};

fn excursion(fs: &FieldSample, level: f64) -> BinaryGrid {
    BinaryGrid::new(fs.shape(), fs.values.iter().map(|&v| v >= level).collect())
}

/// Cells whose centers lie within `half` of cell `c` along every axis.
fn box_around(shape: &Shape, c: [usize; 3], half_cells: usize) -> Result<CellBox> {
    let mut lo = [0; 3];
    let mut hi = [1; 3];
    for k in 0..shape.dim {
        if c[k] < half_cells || c[k] + half_cells >= shape.dims[k] {
            return Err(Error::DomainOutsideGrid);
        }
        lo[k] = c[k] - half_cells;
        hi[k] = c[k] + half_cells + 1;
    }
    Ok(CellBox::new(shape.dim, lo, hi))
}

/// Foreground path from `center + Λ_1` to the boundary of `center + Λ_{r_arm}`.
pub fn one_arm_in(grid: &BinaryGrid, spacing: f64, center: [usize; 3], r_arm: f64) -> Result<bool> {
    let shape = grid.shape;
    let inner = box_around(&shape, center, (0.5 / spacing).floor() as usize)?;
    let outer = box_around(&shape, center, (0.5 * r_arm / spacing).floor() as usize)?;
    let offsets = neighbor_offsets(shape.dim, Connectivity::Full);
    let mut seen = vec![false; shape.len()];
    let mut queue = VecDeque::new();
    for p in inner.iter() {
        let i = shape.index(p);
        if grid.cells[i] {
            seen[i] = true;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        if outer.on_shell(p) {
            return Ok(true);
        }
        for o in &offsets {
            if let Some(q) = shape.offset(p, *o) {
                let j = shape.index(q);
                if !seen[j] && grid.cells[j] && outer.contains(q) {
                    seen[j] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(false)
}

pub fn one_arm_event(fs: &FieldSample, level: f64, center: &[f64], r_arm: f64) -> Result<bool> {
    let c = fs.grid.cell_at(center)?;
    one_arm_in(&excursion(fs, level), fs.grid.spacing, c, r_arm)
}

/// Bounded component of `grid ∖ B(x, 1)` meeting both `∂B(x, 1)` and `∂B(x, r_arm)`.
pub fn truncated_arm_in(grid: &BinaryGrid, spacing: f64, x: [usize; 3], r_arm: f64) -> Result<bool> {
    let shape = grid.shape;
    let reach = (r_arm / spacing).ceil() as usize;
    box_around(&shape, x, reach)?;
    let dist = |p: [usize; 3]| -> f64 {
        (0..shape.dim).map(|k| ((p[k] as f64 - x[k] as f64) * spacing).powi(2)).sum::<f64>().sqrt()
    };
    let offsets = neighbor_offsets(shape.dim, Connectivity::Full);
    let ball = box_around(&shape, x, (1.0 / spacing).ceil() as usize)?;
    let mut seen = vec![false; shape.len()];
    for p in ball.iter() {
        if dist(p) <= 1.0 {
            seen[shape.index(p)] = true;
        }
    }
    for seed in ball.iter() {
        if dist(seed) > 1.0 {
            continue;
        }
        for o in &offsets {
            let Some(start) = shape.offset(seed, *o) else { continue };
            let si = shape.index(start);
            if seen[si] || !grid.cells[si] {
                continue;
            }
            seen[si] = true;
            let mut queue = VecDeque::from([start]);
            let (mut far, mut border) = (false, false);
            while let Some(p) = queue.pop_front() {
                far |= dist(p) >= r_arm;
                border |= shape.on_border(p);
                for o2 in &offsets {
                    if let Some(q) = shape.offset(p, *o2) {
                        let j = shape.index(q);
                        if !seen[j] && grid.cells[j] {
                            seen[j] = true;
                            queue.push_back(q);
                        }
                    }
                }
            }
            if far && !border {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

pub fn truncated_arm_event(fs: &FieldSample, level: f64, x: &[f64], r_arm: f64) -> Result<bool> {
    let c = fs.grid.cell_at(x)?;
    truncated_arm_in(&excursion(fs, level), fs.grid.spacing, c, r_arm)
}

/// Cells belonging to foreground components that reach the grid border.
pub fn unbounded_mask(grid: &BinaryGrid) -> Vec<bool> {
    let shape = grid.shape;
    let (labels, n) = label_mask(&shape, &grid.cells, Connectivity::Full);
    let mut outer = vec![false; n + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && shape.on_border(shape.coords(i)) {
            outer[l as usize] = true;
        }
    }
    labels.iter().map(|&l| l != 0 && outer[l as usize]).collect()
}

/// Volume of `d` covered by components touching the outer buffer boundary.
pub fn unbounded_volume(fs: &FieldSample, level: f64, d: &CellBox, min_buffer: f64) -> Result<f64> {
    if fs.grid.buffer + 1e-12 < min_buffer {
        return Err(Error::BufferTooSmall { buffer: fs.grid.buffer, required: min_buffer });
    }
    let shape = fs.shape();
    d.check_in(&shape)?;
    let mask = unbounded_mask(&excursion(fs, level));
    let cells = d.iter().filter(|&p| mask[shape.index(p)]).count();
    Ok(cells as f64 * fs.grid.spacing.powi(fs.grid.dim as i32))
}
