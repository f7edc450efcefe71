use std::f64::consts::PI;
use std::sync::Arc;

use excursion_core::pivotal::{
    covariance_determinant, ktilde_box_integral, pivotal_density, ConditionedSampler, DEFAULT_KAPPA_MAX,
};
use excursion_core::{CovarianceModel, FieldSampler, GridSpec};
use nalgebra::{Matrix4, Vector4};

/// Density of `(f(x), f'(x), f^t(0), f^t'(0))` at `(ℓ, 0, ℓ, 0)` for the kernel `e^{-r²/2}`.
fn bf_density_1d(x: f64, t: f64, level: f64) -> f64 {
    let e = (-x * x / 2.0).exp();
    let (c, cd, dc, dd) = (t * e, t * x * e, -t * x * e, t * (1.0 - x * x) * e);
    let s = Matrix4::new(
        1.0, 0.0, c, cd, //
        0.0, 1.0, dc, dd, //
        c, dc, 1.0, 0.0, //
        cd, dd, 0.0, 1.0,
    );
    let v = Vector4::new(level, 0.0, level, 0.0);
    let q = v.dot(&(s.try_inverse().unwrap() * v));
    (-(q / 2.0)).exp() / ((2.0 * PI).powi(2) * s.determinant().sqrt())
}

#[test]
fn density_matches_hand_assembled_oracle() {
    let model = CovarianceModel::bargmann_fock(1);
    for (x, t, level) in [(2.0, 0.5, 0.0), (2.0, 0.5, 1.0), (0.7, 0.9, -0.4), (1.3, 0.2, 1.5)] {
        let got = pivotal_density(&model, &[x], t, level).unwrap();
        let want = bf_density_1d(x, t, level);
        assert!((got - want).abs() < 1e-12 * want.max(1.0), "x={x} t={t} ℓ={level}: {got} vs {want}");
    }
    // (2π)^{-2} det^{-1/2} with det = 0.9176005914149401.
    let frozen = 0.026443164145180848;
    assert!((pivotal_density(&model, &[2.0], 0.5, 0.0).unwrap() - frozen).abs() < 1e-14);
}

#[test]
fn density_factorizes_far_away() {
    let model = CovarianceModel::bargmann_fock(1);
    let far = pivotal_density(&model, &[10.0], 0.7, 1.0).unwrap();
    let product = pivotal_density(&model, &[10.0], 0.0, 1.0).unwrap();
    assert!((far - product).abs() < 1e-15 * product.max(1e-300) + 1e-18);
    let single = (-0.5f64).exp() / (2.0 * PI);
    assert!((product - single * single).abs() < 1e-14);
}

#[test]
fn determinant_positive_and_decreasing() {
    for dim in [1, 2] {
        let model = CovarianceModel::bargmann_fock(dim);
        for sep in [0.5, 2.0] {
            let mut y = vec![0.0; dim];
            y[0] = sep;
            let z = vec![0.0; dim];
            let dets: Vec<f64> = [0.0, 0.5, 0.9, 0.99].iter().map(|&t| covariance_determinant(&model, &y, &z, t)).collect();
            assert!(dets.iter().all(|&v| v > 0.0), "{dets:?}");
            assert!(dets.windows(2).all(|w| w[1] < w[0]), "{dets:?}");
        }
    }
}

/// Mean FD gradient norm at the two constrained cells, and the worst value error.
fn conditioned_stats(h: f64, t: f64, r: f64, draws: u64) -> (f64, f64) {
    let model = CovarianceModel::bargmann_fock(2);
    let grid = GridSpec::new(2, 12.0, h, 0.0).unwrap();
    let sampler = Arc::new(FieldSampler::new(&model, &grid).unwrap());
    let cs = ConditionedSampler::new(&model, sampler, &[r, 0.0], &[0.0, 0.0], t, 0.5, DEFAULT_KAPPA_MAX).unwrap();
    let (mut grad, mut worst) = (0.0, 0.0f64);
    for rep in 0..draws {
        let pair = cs.draw(17, rep).unwrap();
        for (fs, p) in [(&pair.f, &cs.f_point), (&pair.ft, &cs.ft_point)] {
            let cell = grid.cell_at(p).unwrap();
            worst = worst.max((fs.at(cell) - 0.5).abs());
            let g = fs.gradient(cell);
            grad += (g[0] * g[0] + g[1] * g[1]).sqrt();
        }
    }
    (grad / (2 * draws) as f64, worst)
}

#[test]
fn conditioning_hits_constraints() {
    for (t, r) in [(0.3, 2.0), (0.7, 4.0)] {
        let (g_coarse, w_coarse) = conditioned_stats(0.25, t, r, 8);
        let (g_fine, w_fine) = conditioned_stats(0.125, t, r, 8);
        assert!(w_coarse < 1e-10 && w_fine < 1e-10, "{w_coarse} {w_fine}");
        assert!(g_fine <= 0.5 * g_coarse, "t={t} |x|={r}: {g_coarse} -> {g_fine}");
    }
}

#[test]
fn ktilde_integral_decays_with_separation() {
    let model = CovarianceModel::bargmann_fock(2);
    let at = |s: f64| ktilde_box_integral(&model, &[0.0, 0.0], &[4.0, 4.0], &[4.0 + s, 0.0], &[8.0 + s, 4.0], 0.5);
    let v: Vec<f64> = [0.0, 1.0, 2.0, 4.0].iter().map(|&s| at(s)).collect();
    assert!(v[0] > 0.0 && v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
}
