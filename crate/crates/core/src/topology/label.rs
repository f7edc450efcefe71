use serde::{Deserialize, Serialize};

use super::binary::{BinaryGrid, FunctionalSpec};
use crate::error::Result;
use crate::grid::{CellBox, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Cells sharing a face (4 in 2D, 6 in 3D).
    Face,
    /// Cells sharing any vertex (8 in 2D, 26 in 3D).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityPolicy {
    pub foreground: Connectivity,
    pub background: Connectivity,
}

impl Default for ConnectivityPolicy {
    fn default() -> Self {
        ConnectivityPolicy { foreground: Connectivity::Full, background: Connectivity::Face }
    }
}

/// Neighbor offsets of `conn` in dimension `dim`, excluding zero.
pub fn neighbor_offsets(dim: usize, conn: Connectivity) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    let r = |k: usize| if k < dim { -1..=1 } else { 0..=0 };
    for a in r(0) {
        for b in r(1) {
            for c in r(2) {
                let o = [a, b, c];
                let nz = o.iter().filter(|&&v| v != 0).count();
                if nz == 0 || (conn == Connectivity::Face && nz > 1) {
                    continue;
                }
                out.push(o);
            }
        }
    }
    out
}

fn is_backward(o: &[i64; 3]) -> bool {
    o.iter().find(|&&v| v != 0).is_some_and(|&v| v < 0)
}

struct Dsu(Vec<u32>);

impl Dsu {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.0[x as usize] != x {
            let p = self.0[x as usize];
            self.0[x as usize] = self.0[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi as usize] = lo;
        }
    }
}

/// Label the cells where `mask` is true; ids are 1.. in raster order of first cell.
pub fn label_mask(shape: &Shape, mask: &[bool], conn: Connectivity) -> (Vec<u32>, usize) {
    let offsets: Vec<[i64; 3]> = neighbor_offsets(shape.dim, conn).into_iter().filter(is_backward).collect();
    let mut provisional = vec![0u32; mask.len()];
    let mut dsu = Dsu(vec![0]);
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let p = shape.coords(i);
        let mut mine = 0u32;
        for o in &offsets {
            if let Some(q) = shape.offset(p, *o) {
                let l = provisional[shape.index(q)];
                if l != 0 {
                    if mine == 0 {
                        mine = l;
                    } else {
                        dsu.union(mine, l);
                    }
                }
            }
        }
        if mine == 0 {
            mine = dsu.0.len() as u32;
            dsu.0.push(mine);
        }
        provisional[i] = mine;
    }
    let mut compact = vec![0u32; dsu.0.len()];
    let mut next = 0u32;
    for l in provisional.iter_mut() {
        if *l == 0 {
            continue;
        }
        let r = dsu.find(*l) as usize;
        if compact[r] == 0 {
            next += 1;
            compact[r] = next;
        }
        *l = compact[r];
    }
    (provisional, next as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentInfo {
    pub id: u32,
    pub cells: usize,
    /// Inclusive bounding box in cell indices.
    pub bbox_lo: [usize; 3],
    pub bbox_hi: [usize; 3],
    /// Contact with the low/high face of the labeled grid, per axis.
    pub touches_face: [[bool; 2]; 3],
    pub holes: Option<u32>,
}

impl ComponentInfo {
    pub fn touches_outer(&self) -> bool {
        self.touches_face.iter().any(|f| f[0] || f[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionGeometry {
    pub shape: Shape,
    pub policy: ConnectivityPolicy,
    pub labels: Vec<u32>,
    pub components: Vec<ComponentInfo>,
}

pub fn label_components(grid: &BinaryGrid, policy: ConnectivityPolicy) -> ExcursionGeometry {
    let shape = grid.shape;
    let (labels, count) = label_mask(&shape, &grid.cells, policy.foreground);
    let mut comps: Vec<ComponentInfo> = (1..=count as u32)
        .map(|id| ComponentInfo {
            id,
            cells: 0,
            bbox_lo: [usize::MAX; 3],
            bbox_hi: [0; 3],
            touches_face: [[false; 2]; 3],
            holes: None,
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let p = shape.coords(i);
        let c = &mut comps[l as usize - 1];
        c.cells += 1;
        for k in 0..3 {
            c.bbox_lo[k] = c.bbox_lo[k].min(p[k]);
            c.bbox_hi[k] = c.bbox_hi[k].max(p[k]);
            if k < shape.dim {
                c.touches_face[k][0] |= p[k] == 0;
                c.touches_face[k][1] |= p[k] + 1 == shape.dims[k];
            }
        }
    }
    if shape.dim == 2 {
        for c in comps.iter_mut() {
            c.holes = Some(0);
        }
        let background: Vec<bool> = grid.cells.iter().map(|&c| !c).collect();
        let (bg, nbg) = label_mask(&shape, &background, policy.background);
        let mut first = vec![usize::MAX; nbg + 1];
        let mut bounded = vec![true; nbg + 1];
        for (i, &l) in bg.iter().enumerate() {
            if l == 0 {
                continue;
            }
            if first[l as usize] == usize::MAX {
                first[l as usize] = i;
            }
            if shape.on_border(shape.coords(i)) {
                bounded[l as usize] = false;
            }
        }
        for l in 1..=nbg {
            if !bounded[l] {
                continue;
            }
            let p = shape.coords(first[l]);
            let owner = labels[shape.index([p[0] - 1, p[1], 0])];
            if owner != 0 {
                let h = comps[owner as usize - 1].holes.get_or_insert(0);
                *h += 1;
            }
        }
    }
    ExcursionGeometry { shape, policy, labels, components: comps }
}

impl ExcursionGeometry {
    pub fn component(&self, id: u32) -> &ComponentInfo {
        &self.components[id as usize - 1]
    }

    /// Ids of components with a cell in `d` and none on its boundary layer.
    pub fn counted_components(&self, d: &CellBox) -> Result<Vec<u32>> {
        d.check_in(&self.shape)?;
        let n = self.components.len() + 1;
        let mut seen = vec![false; n];
        let mut excluded = vec![false; n];
        for p in d.iter() {
            let l = self.labels[self.shape.index(p)] as usize;
            if l == 0 {
                continue;
            }
            seen[l] = true;
            if d.on_shell(p) {
                excluded[l] = true;
            }
        }
        Ok((1..n).filter(|&l| seen[l] && !excluded[l]).map(|l| l as u32).collect())
    }

    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = vec!["component_id,cells,bbox,touches_boundary,holes".to_string()];
        for c in &self.components {
            let d = self.shape.dim;
            let lo: Vec<String> = c.bbox_lo[..d].iter().map(|v| v.to_string()).collect();
            let hi: Vec<String> = c.bbox_hi[..d].iter().map(|v| v.to_string()).collect();
            rows.push(format!(
                "{},{},\"{}:{}\",{},{}",
                c.id,
                c.cells,
                lo.join(" "),
                hi.join(" "),
                c.touches_outer(),
                c.holes.map(|h| h.to_string()).unwrap_or_default()
            ));
        }
        rows
    }
}

pub fn component_count(geom: &ExcursionGeometry, d: &CellBox) -> Result<usize> {
    Ok(geom.counted_components(d)?.len())
}

/// Sum of component weights over counted components.
pub fn bounded_functional(geom: &ExcursionGeometry, spec: &FunctionalSpec, d: &CellBox) -> Result<f64> {
    if !spec.is_component_sum() {
        return Err(crate::error::Error::InvalidInput(
            "Euler characteristic is not a component sum; use euler_characteristic_cubical".into(),
        ));
    }
    spec.validate(geom.shape.dim)?;
    let ids = geom.counted_components(d)?;
    Ok(ids.iter().map(|&id| spec.component_weight(geom.component(id).holes)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_adjacency() {
        let g = BinaryGrid::from_rows(&[&[1, 0], &[0, 1]]);
        assert_eq!(label_components(&g, ConnectivityPolicy::default()).components.len(), 1);
        let four = ConnectivityPolicy { foreground: Connectivity::Face, background: Connectivity::Full };
        assert_eq!(label_components(&g, four).components.len(), 2);
    }

    #[test]
    fn ring_has_one_hole() {
        let g = BinaryGrid::from_rows(&[
            &[0, 0, 0, 0, 0, 0, 0],
            &[0, 1, 1, 1, 1, 1, 0],
            &[0, 1, 0, 0, 0, 1, 0],
            &[0, 1, 0, 0, 0, 1, 0],
            &[0, 1, 0, 0, 0, 1, 0],
            &[0, 1, 1, 1, 1, 1, 0],
            &[0, 0, 0, 0, 0, 0, 0],
        ]);
        let geom = label_components(&g, ConnectivityPolicy::default());
        assert_eq!(geom.components.len(), 1);
        assert_eq!(geom.components[0].holes, Some(1));
        let d = geom.shape.full_box();
        assert_eq!(component_count(&geom, &d).unwrap(), 1);
    }

    #[test]
    fn boundary_exclusion() {
        let g = BinaryGrid::from_rows(&[&[0, 0, 0, 0], &[1, 1, 0, 0], &[0, 0, 0, 0], &[0, 0, 0, 0]]);
        let geom = label_components(&g, ConnectivityPolicy::default());
        assert_eq!(component_count(&geom, &geom.shape.full_box()).unwrap(), 0);
        let empty = label_components(&BinaryGrid::filled(g.shape, false), ConnectivityPolicy::default());
        assert_eq!(component_count(&empty, &g.shape.full_box()).unwrap(), 0);
    }

    #[test]
    fn labels_in_3d() {
        let shape = Shape::new(3, &[4, 4, 4]);
        let mut g = BinaryGrid::filled(shape, false);
        g.set([0, 0, 0], true);
        g.set([1, 1, 1], true);
        g.set([3, 3, 0], true);
        let geom = label_components(&g, ConnectivityPolicy::default());
        assert_eq!(geom.components.len(), 2);
    }
}
