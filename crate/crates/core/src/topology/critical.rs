//! Discrete Morse theory on cell-valued fields.
//!
//! Cells are ordered by value (ties by index); a cell's lower link is the part
//! of its cube boundary shared with earlier cells of the domain. Adding cells
//! in this order builds the superlevel complexes, so the reduced homology of
//! the link decides whether a cell is critical and how the topology changes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::label::{neighbor_offsets, Connectivity};
use crate::error::{Error, Result};
use crate::grid::{CellBox, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Maximum,
    Minimum,
    Saddle,
    /// Zero-dimensional stratum; critical by convention.
    Corner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// Link taken in the full neighborhood inside the domain.
    Domain,
    /// Link taken inside the boundary stratum containing the cell.
    Stratum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalCell {
    pub cell: [usize; 3],
    pub kind: CriticalKind,
    pub multiplicity: u32,
    pub value: f64,
    pub link: LinkKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticalCensus {
    pub interior: Vec<CriticalCell>,
    pub faces: Vec<CriticalCell>,
    pub edges: Vec<CriticalCell>,
    pub corners: Vec<CriticalCell>,
}

impl CriticalCensus {
    pub fn all(&self) -> impl Iterator<Item = &CriticalCell> {
        self.interior.iter().chain(&self.faces).chain(&self.edges).chain(&self.corners)
    }

    /// Stratified critical-point count with multiplicity.
    pub fn total_multiplicity(&self) -> u64 {
        self.all().map(|c| c.multiplicity as u64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LinkSummary {
    /// Euler characteristic change `1 - χ(link)` when the cell is added.
    pub delta_chi: i32,
    /// Sum of reduced Betti numbers of the link.
    pub multiplicity: u32,
    pub kind: Option<CriticalKind>,
}

pub(crate) struct LinkTable {
    pub dim: usize,
    pub offsets: Vec<[i64; 3]>,
    cell_sign: Vec<i32>,
    containers: Vec<u32>,
    adjacency: Vec<(usize, usize)>,
    full: u32,
    table: Vec<LinkSummary>,
    cache: HashMap<u32, LinkSummary>,
}

impl LinkTable {
    pub fn new(dim: usize) -> Self {
        let offsets = neighbor_offsets(dim, Connectivity::Full);
        let n = offsets.len();
        let nz = |o: &[i64; 3]| o.iter().filter(|&&v| v != 0).count();
        let cell_sign = offsets.iter().map(|o| if (dim - nz(o)) % 2 == 0 { 1 } else { -1 }).collect();
        let containers = offsets
            .iter()
            .map(|o| {
                let mut mask = 0u32;
                for (j, s) in offsets.iter().enumerate() {
                    let ok = (0..3).all(|k| if o[k] == 0 { s[k] == 0 } else { s[k] == 0 || s[k] == o[k] });
                    if ok {
                        mask |= 1 << j;
                    }
                }
                mask
            })
            .collect();
        let mut adjacency = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let (oa, ob) = (offsets[a], offsets[b]);
                // `ob` is a face of `oa`.
                if (0..3).all(|k| oa[k] == 0 || ob[k] == oa[k]) {
                    adjacency.push((a, b));
                }
            }
        }
        let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
        let mut t = LinkTable { dim, offsets, cell_sign, containers, adjacency, full, table: Vec::new(), cache: HashMap::new() };
        if n <= 8 {
            t.table = (0..=full).map(|m| t.compute(m)).collect();
        }
        t
    }

    fn components(&self, set: u32) -> u32 {
        let n = self.offsets.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &self.adjacency {
            if set & (1 << a) != 0 && set & (1 << b) != 0 {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        (0..n).filter(|&i| set & (1 << i) != 0 && find(&mut parent, i) == i).count() as u32
    }

    fn compute(&self, neighbors: u32) -> LinkSummary {
        let mut link = 0u32;
        for (o, &c) in self.containers.iter().enumerate() {
            if neighbors & c != 0 {
                link |= 1 << o;
            }
        }
        let chi: i32 = (0..self.offsets.len()).filter(|&o| link & (1 << o) != 0).map(|o| self.cell_sign[o]).sum();
        let delta_chi = 1 - chi;
        if link == 0 {
            return LinkSummary { delta_chi, multiplicity: 1, kind: Some(CriticalKind::Maximum) };
        }
        if link == self.full {
            return LinkSummary { delta_chi, multiplicity: 1, kind: Some(CriticalKind::Minimum) };
        }
        let mut m = self.components(link) - 1;
        if self.dim == 3 {
            m += self.components(self.full & !link) - 1;
        }
        LinkSummary { delta_chi, multiplicity: m, kind: if m > 0 { Some(CriticalKind::Saddle) } else { None } }
    }

    pub fn summary(&mut self, neighbors: u32) -> LinkSummary {
        if !self.table.is_empty() {
            return self.table[neighbors as usize];
        }
        if let Some(s) = self.cache.get(&neighbors) {
            return *s;
        }
        let s = self.compute(neighbors);
        self.cache.insert(neighbors, s);
        s
    }
}

/// Cell-valued field restricted to a box, with the superlevel ordering.
pub(crate) struct OrderedField<'a> {
    pub shape: Shape,
    pub values: &'a [f64],
    pub domain: CellBox,
}

impl OrderedField<'_> {
    #[inline]
    fn earlier(&self, q: usize, p: usize) -> bool {
        let (a, b) = (self.values[q], self.values[p]);
        a > b || (a == b && q < p)
    }

    /// Bit mask of earlier neighbors of `p` among `offsets`, each mapped by `embed`.
    fn mask(&self, p: [usize; 3], table: &LinkTable, embed: impl Fn(&[i64; 3]) -> [i64; 3]) -> u32 {
        let pi = self.shape.index(p);
        let mut m = 0u32;
        for (j, o) in table.offsets.iter().enumerate() {
            if let Some(q) = self.shape.offset(p, embed(o)) {
                if self.domain.contains(q) && self.earlier(self.shape.index(q), pi) {
                    m |= 1 << j;
                }
            }
        }
        m
    }

    pub fn domain_summary(&self, p: [usize; 3], table: &mut LinkTable) -> LinkSummary {
        let m = self.mask(p, table, |o| *o);
        table.summary(m)
    }

    /// Summary inside the boundary stratum of `p`; `None` for interior cells.
    pub fn stratum_summary(&self, p: [usize; 3], tables: &mut [LinkTable]) -> Option<(usize, LinkSummary)> {
        let dim = self.shape.dim;
        let free: Vec<usize> =
            (0..dim).filter(|&k| p[k] != self.domain.lo[k] && p[k] + 1 != self.domain.hi[k]).collect();
        if free.len() == dim {
            return None;
        }
        if free.is_empty() {
            let s = LinkSummary { delta_chi: 1, multiplicity: 1, kind: Some(CriticalKind::Corner) };
            return Some((0, s));
        }
        let table = &mut tables[free.len() - 1];
        let m = self.mask(p, table, |o| {
            let mut full = [0i64; 3];
            for (j, &k) in free.iter().enumerate() {
                full[k] = o[j];
            }
            full
        });
        Some((free.len(), table.summary(m)))
    }
}

fn check_domain(shape: &Shape, d: &CellBox, len: usize) -> Result<()> {
    if shape.len() != len {
        return Err(Error::InvalidInput("value count does not match shape".into()));
    }
    d.check_in(shape)
}

fn bucket(census: &mut CriticalCensus, dim: usize, stratum_dim: usize) -> &mut Vec<CriticalCell> {
    if stratum_dim == dim {
        &mut census.interior
    } else if stratum_dim == 0 {
        &mut census.corners
    } else if stratum_dim == dim - 1 {
        &mut census.faces
    } else {
        &mut census.edges
    }
}

fn tables(dim: usize) -> Vec<LinkTable> {
    (1..=dim).map(LinkTable::new).collect()
}

/// Stratified census of critical cells in `d`.
pub fn critical_census_values(shape: &Shape, values: &[f64], d: &CellBox) -> Result<CriticalCensus> {
    check_domain(shape, d, values.len())?;
    let dim = shape.dim;
    let mut tabs = tables(dim);
    let field = OrderedField { shape: *shape, values, domain: *d };
    let mut census = CriticalCensus::default();
    for p in d.iter() {
        let value = values[shape.index(p)];
        let s = field.domain_summary(p, &mut tabs[dim - 1]);
        let stratum = field.stratum_summary(p, &mut tabs);
        let own_dim = stratum.map(|(k, _)| k).unwrap_or(dim);
        if let Some(kind) = s.kind {
            bucket(&mut census, dim, own_dim).push(CriticalCell {
                cell: p,
                kind,
                multiplicity: s.multiplicity,
                value,
                link: LinkKind::Domain,
            });
        }
        if let Some((k, ss)) = stratum {
            if let Some(kind) = ss.kind {
                bucket(&mut census, dim, k).push(CriticalCell {
                    cell: p,
                    kind,
                    multiplicity: ss.multiplicity,
                    value,
                    link: LinkKind::Stratum,
                });
            }
        }
    }
    Ok(census)
}

/// Euler characteristic of `{v >= level}` in `d` by summing link increments.
pub fn euler_morse_values(shape: &Shape, values: &[f64], level: f64, d: &CellBox) -> Result<i64> {
    check_domain(shape, d, values.len())?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in d.iter() {
        let v = values[shape.index(p)];
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let tol = 1e-12 * (hi - lo).max(f64::MIN_POSITIVE);
    let mut table = LinkTable::new(shape.dim);
    let field = OrderedField { shape: *shape, values, domain: *d };
    let mut chi = 0i64;
    for p in d.iter() {
        let v = values[shape.index(p)];
        let near = (v - level).abs() <= tol;
        if v < level && !near {
            continue;
        }
        let s = field.domain_summary(p, &mut table);
        if near && s.kind.is_some() {
            return Err(Error::LevelAtCriticalValue { level, value: v });
        }
        if v >= level {
            chi += s.delta_chi as i64;
        }
    }
    Ok(chi)
}

pub fn critical_census(fs: &crate::field::FieldSample, d: &CellBox) -> Result<CriticalCensus> {
    critical_census_values(&fs.shape(), &fs.values, d)
}

pub fn euler_characteristic_morse(fs: &crate::field::FieldSample, level: f64, d: &CellBox) -> Result<i64> {
    euler_morse_values(&fs.shape(), &fs.values, level, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump2(n: usize, centers: &[(f64, f64, f64)]) -> (Shape, Vec<f64>) {
        let shape = Shape::new(2, &[n, n]);
        let v = (0..shape.len())
            .map(|i| {
                let p = shape.coords(i);
                centers
                    .iter()
                    .map(|&(a, b, h)| {
                        let dx = p[0] as f64 - a;
                        let dy = p[1] as f64 - b;
                        h * (-(dx * dx + dy * dy) / 8.0).exp()
                    })
                    .sum::<f64>()
            })
            .collect();
        (shape, v)
    }

    #[test]
    fn link_table_kinds_2d() {
        let mut t = LinkTable::new(2);
        assert_eq!(t.summary(0).kind, Some(CriticalKind::Maximum));
        assert_eq!(t.summary(0xff).kind, Some(CriticalKind::Minimum));
        assert_eq!(t.summary(0xff).delta_chi, 1);
        // Offsets are ordered lexicographically: index 1 is (-1,0), index 6 is (1,0).
        let saddle = t.summary((1 << 1) | (1 << 6));
        assert_eq!((saddle.kind, saddle.multiplicity, saddle.delta_chi), (Some(CriticalKind::Saddle), 1, -1));
        assert_eq!(t.summary(1 << 1).kind, None);
    }

    #[test]
    fn link_table_3d_extremes() {
        let mut t = LinkTable::new(3);
        let full = (1u32 << 26) - 1;
        assert_eq!(t.summary(0).delta_chi, 1);
        assert_eq!(t.summary(full).delta_chi, -1);
        assert_eq!(t.summary(full).multiplicity, 1);
        // A single face neighbor gives a contractible link.
        let face = t.offsets.iter().position(|o| *o == [1, 0, 0]).unwrap();
        assert_eq!(t.summary(1 << face).multiplicity, 0);
    }

    #[test]
    fn ramp_has_no_interior_critical_cells() {
        let shape = Shape::new(2, &[10, 10]);
        let v: Vec<f64> = (0..100).map(|i| shape.coords(i)[1] as f64).collect();
        let c = critical_census_values(&shape, &v, &shape.full_box()).unwrap();
        assert!(c.interior.is_empty());
    }

    #[test]
    fn single_cap() {
        let (shape, v) = bump2(21, &[(10.0, 10.0, 1.0)]);
        let c = critical_census_values(&shape, &v, &shape.full_box()).unwrap();
        assert_eq!(c.interior.len(), 1);
        assert_eq!(c.interior[0].kind, CriticalKind::Maximum);
        assert_eq!(euler_morse_values(&shape, &v, 0.5, &shape.full_box()).unwrap(), 1);
    }

    #[test]
    fn two_caps_joined_below_level() {
        let (shape, v) = bump2(31, &[(15.0, 9.0, 1.0), (15.0, 21.0, 1.0)]);
        assert_eq!(euler_morse_values(&shape, &v, 0.8, &shape.full_box()).unwrap(), 2);
    }
}
