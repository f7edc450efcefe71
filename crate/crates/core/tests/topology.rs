use std::collections::VecDeque;

use excursion_core::topology::{
    component_count, critical_census, euler_characteristic_cubical, evaluate, extract_excursion,
    label_components, multiscale_decompose, BinaryGrid, ConnectivityPolicy, FunctionalSpec, WeightMap,
};
use excursion_core::{CellBox, CovarianceModel, FieldSampler, GridSpec, Shape};
use proptest::prelude::*;

/// Breadth-first labeling with vertex adjacency, written without the library's union-find.
fn flood_fill_count(shape: Shape, cells: &[bool], d: &CellBox) -> usize {
    let dims = shape.dims;
    let mut seen = vec![false; cells.len()];
    let idx = |p: [i64; 3]| (p[0] as usize * dims[1] + p[1] as usize) * dims[2] + p[2] as usize;
    let mut counted = 0;
    for start in 0..cells.len() {
        if !cells[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let (mut inside, mut shell) = (false, false);
        while let Some(i) = queue.pop_front() {
            let p = [(i / (dims[1] * dims[2])) as i64, ((i / dims[2]) % dims[1]) as i64, (i % dims[2]) as i64];
            let pu = [p[0] as usize, p[1] as usize, p[2] as usize];
            if d.contains(pu) {
                inside = true;
                shell |= (0..shape.dim).any(|k| pu[k] == d.lo[k] || pu[k] + 1 == d.hi[k]);
            }
            for a in -1..=1i64 {
                for b in -1..=1i64 {
                    for c in -1..=1i64 {
                        let q = [p[0] + a, p[1] + b, p[2] + c];
                        if (0..3).any(|k| q[k] < 0 || q[k] >= dims[k] as i64) {
                            continue;
                        }
                        let j = idx(q);
                        if cells[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        if inside && !shell {
            counted += 1;
        }
    }
    counted
}

/// `χ(X_{D1} ∩ X_{D2})` for boxes sharing the face `axis = cut`, from the refined interface lattice.
fn interface_euler(g: &BinaryGrid, lo: [usize; 3], hi: [usize; 3], axis: usize, cut: usize) -> i64 {
    let dim = g.shape.dim;
    let others: Vec<usize> = (0..dim).filter(|&k| k != axis).collect();
    let m: Vec<usize> = others.iter().map(|&k| hi[k] - lo[k]).collect();
    let refined = |j: usize| if j < m.len() { 2 * m[j] + 1 } else { 1 };
    let mut chi = 0i64;
    for c0 in 0..refined(0) {
        for c1 in 0..refined(1) {
            let c = [c0, c1];
            // Incident cells along each in-plane axis.
            let span = |j: usize| -> Vec<usize> {
                if j >= m.len() {
                    return vec![0];
                }
                let r = c[j];
                if r % 2 == 1 {
                    vec![(r - 1) / 2]
                } else {
                    let mut v = Vec::new();
                    if r / 2 >= 1 {
                        v.push(r / 2 - 1);
                    }
                    if r / 2 < m[j] {
                        v.push(r / 2);
                    }
                    v
                }
            };
            let side = |layer: usize| -> bool {
                span(0).iter().any(|&i| {
                    span(1).iter().any(|&j| {
                        let mut p = [0usize; 3];
                        p[axis] = layer;
                        p[others[0]] = lo[others[0]] + i;
                        if others.len() > 1 {
                            p[others[1]] = lo[others[1]] + j;
                        }
                        g.get(p)
                    })
                })
            };
            if side(cut - 1) && side(cut) {
                let odd = (0..m.len()).filter(|&j| c[j] % 2 == 1).count();
                chi += if odd % 2 == 0 { 1 } else { -1 };
            }
        }
    }
    chi
}

fn grid_strategy(dim: usize) -> impl Strategy<Value = BinaryGrid> {
    let n: usize = if dim == 2 { 14 } else { 7 };
    (prop::collection::vec(prop::bool::weighted(0.45), n.pow(dim as u32)))
        .prop_map(move |cells| BinaryGrid::new(Shape::cube(dim, n), cells))
}

fn box_strategy(dim: usize) -> impl Strategy<Value = CellBox> {
    let n: usize = if dim == 2 { 14 } else { 7 };
    prop::collection::vec((0..n - 2, 2..n), 3).prop_map(move |v| {
        let mut lo = [0; 3];
        let mut hi = [1; 3];
        for k in 0..dim {
            lo[k] = v[k].0;
            hi[k] = (v[k].0 + v[k].1).min(n).max(lo[k] + 1);
        }
        CellBox::new(dim, lo, hi)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn component_count_matches_flood_fill_2d(g in grid_strategy(2), d in box_strategy(2)) {
        let geom = label_components(&g, ConnectivityPolicy::default());
        prop_assert_eq!(component_count(&geom, &d).unwrap(), flood_fill_count(g.shape, &g.cells, &d));
    }

    #[test]
    fn component_count_matches_flood_fill_3d(g in grid_strategy(3), d in box_strategy(3)) {
        let geom = label_components(&g, ConnectivityPolicy::default());
        prop_assert_eq!(component_count(&geom, &d).unwrap(), flood_fill_count(g.shape, &g.cells, &d));
    }

    #[test]
    fn euler_is_additive_over_shared_faces(
        dim in 2usize..4,
        cells in prop::collection::vec(prop::bool::weighted(0.5), 8 * 8 * 8),
        axis in 0usize..3,
        cut in 2usize..7,
    ) {
        let axis = axis % dim;
        let n = 8;
        let g = BinaryGrid::new(Shape::cube(dim, n), cells[..n.pow(dim as u32)].to_vec());
        let (mut lo, mut hi) = ([0usize; 3], [1usize; 3]);
        for k in 0..dim {
            lo[k] = 1;
            hi[k] = n - 1;
        }
        let whole = CellBox::new(dim, lo, hi);
        let (mut hi1, mut lo2) = (hi, lo);
        hi1[axis] = cut;
        lo2[axis] = cut;
        let d1 = CellBox::new(dim, lo, hi1);
        let d2 = CellBox::new(dim, lo2, hi);
        let chi = |b: &CellBox| euler_characteristic_cubical(&g, b).unwrap();
        prop_assert_eq!(chi(&whole), chi(&d1) + chi(&d2) - interface_euler(&g, lo, hi, axis, cut));
    }
}

#[test]
fn planar_euler_is_components_minus_holes() {
    // Components inside the box: χ = #components - #holes.
    let g = BinaryGrid::from_rows(&[
        &[0, 0, 0, 0, 0, 0, 0, 0],
        &[0, 1, 1, 1, 0, 0, 0, 0],
        &[0, 1, 0, 1, 0, 1, 0, 0],
        &[0, 1, 1, 1, 0, 0, 0, 0],
        &[0, 0, 0, 0, 0, 1, 1, 0],
        &[0, 0, 0, 0, 0, 0, 0, 0],
    ]);
    let d = g.shape.full_box();
    let geom = label_components(&g, ConnectivityPolicy::default());
    let holes: u32 = geom.components.iter().map(|c| c.holes.unwrap()).sum();
    let comps = component_count(&geom, &d).unwrap() as i64;
    assert_eq!((comps, holes), (3, 1));
    assert_eq!(euler_characteristic_cubical(&g, &d).unwrap(), comps - holes as i64);
}

#[test]
fn partition_identity_on_sampled_fields() {
    let model = CovarianceModel::bargmann_fock(2);
    for (big, r, a) in [(12.0, 2.0, 1.0), (32.0, 4.0, 1.0), (24.0, 8.0, 1.0)] {
        let grid = GridSpec::new(2, big, 0.25, 2.0).unwrap();
        let sampler = FieldSampler::new(&model, &grid).unwrap();
        for rep in 0..6 {
            let fs = sampler.sample(41, rep);
            for spec in [FunctionalSpec::count(0.0), FunctionalSpec::weighted(-0.5, WeightMap::HoleIndicator { holes: 1 })] {
                let res = multiscale_decompose(&fs, &spec, big, r, a).unwrap();
                assert!(res.identity_holds(), "R={big} r={r} a={a} rep={rep}: {res:?}");
                let outer = grid.centered_box(big).unwrap();
                assert_eq!(res.total, evaluate(&fs, &spec, &outer).unwrap());
            }
        }
    }
}

#[test]
fn pathwise_bound_on_sampled_fields() {
    for dim in [2, 3] {
        let model = CovarianceModel::bargmann_fock(dim);
        let side = if dim == 2 { 16.0 } else { 6.0 };
        let grid = GridSpec::new(dim, side, 0.25, 1.0).unwrap();
        let sampler = FieldSampler::new(&model, &grid).unwrap();
        let d = grid.centered_box(side).unwrap();
        for rep in 0..8 {
            let fs = sampler.sample(5, rep);
            let n = critical_census(&fs, &d).unwrap().total_multiplicity() as f64;
            for level in [-1.0, 0.0, 1.0] {
                for spec in [FunctionalSpec::count(level), FunctionalSpec::euler(level)] {
                    let phi = evaluate(&fs, &spec, &d).unwrap();
                    assert!(phi.abs() <= spec.lipschitz_norm() * n, "d={dim} ℓ={level} {phi} vs {n}");
                }
            }
        }
    }
}

#[test]
fn excursion_extraction_thresholds_values() {
    let model = CovarianceModel::bargmann_fock(2);
    let grid = GridSpec::new(2, 8.0, 0.25, 0.0).unwrap();
    let fs = FieldSampler::new(&model, &grid).unwrap().sample(2, 0);
    let g = extract_excursion(&fs, &FunctionalSpec::count(0.3));
    for (v, c) in fs.values.iter().zip(&g.cells) {
        assert_eq!(*c, *v >= 0.3);
    }
}
