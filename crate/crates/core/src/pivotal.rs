//! Interpolation and conditioning machinery for the pivotal variance formula.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::field::{
    condition_on_constraints, interpolated_pair, ConditioningConstraint, FieldPair, FieldRole, FieldSampler,
};
use crate::grid::GridSpec;
use crate::quadrature::gauss_legendre;
use crate::rng::{derive_seed, stream, StreamRole};
use crate::topology::arm::truncated_arm_event;
use crate::topology::derivative::{derivative_at_cell, Bump};
use crate::topology::FunctionalSpec;

/// Covariance of `(f(y), f^t(z), ∇f(y), ∇f^t(z))`.
pub fn pivotal_covariance(model: &CovarianceModel, y: &[f64], z: &[f64], t: f64) -> DMatrix<f64> {
    let d = model.dim();
    let n = 2 + 2 * d;
    // (position, role is f^t, derivative axis)
    let slot = |i: usize| -> (&[f64], bool, Option<usize>) {
        match i {
            0 => (y, false, None),
            1 => (z, true, None),
            _ if i < 2 + d => (y, false, Some(i - 2)),
            _ => (z, true, Some(i - 2 - d)),
        }
    };
    DMatrix::from_fn(n, n, |a, b| {
        let (pa, ra, da) = slot(a);
        let (pb, rb, db) = slot(b);
        let lag: Vec<f64> = (0..d).map(|k| pa[k] - pb[k]).collect();
        let jet = model.jet(&lag);
        let factor = if ra == rb { 1.0 } else { t };
        factor
            * match (da, db) {
                (None, None) => jet.value,
                (None, Some(j)) => -jet.grad[j],
                (Some(i), None) => jet.grad[i],
                (Some(i), Some(j)) => -jet.hess[i][j],
            }
    })
}

pub fn covariance_determinant(model: &CovarianceModel, y: &[f64], z: &[f64], t: f64) -> f64 {
    pivotal_covariance(model, y, z, t).determinant()
}

/// Density of `(f(y), f^t(z), ∇f(y), ∇f^t(z))` at `(ℓ, ℓ, 0, 0)`.
pub fn pivotal_density_at(model: &CovarianceModel, y: &[f64], z: &[f64], t: f64, level: f64) -> Result<f64> {
    let sigma = pivotal_covariance(model, y, z, t);
    let n = sigma.nrows();
    let chol = sigma.cholesky().ok_or(Error::DegenerateCovariance)?;
    let mut v = DVector::zeros(n);
    v[0] = level;
    v[1] = level;
    let sol = chol.solve(&v);
    let quad = v.dot(&sol);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let dens = (-0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()).exp();
    if !dens.is_finite() {
        return Err(Error::DegenerateCovariance);
    }
    Ok(dens)
}

pub fn pivotal_density(model: &CovarianceModel, x: &[f64], t: f64, level: f64) -> Result<f64> {
    let zero = vec![0.0; model.dim()];
    pivotal_density_at(model, x, &zero, t, level)
}

/// Conditioned-pair generator for one `(x, t)` node on a fixed grid.
pub struct ConditionedSampler {
    model: CovarianceModel,
    sampler: Arc<FieldSampler>,
    /// Point where `f` is critical.
    pub f_point: Vec<f64>,
    /// Point where `f^t` is critical.
    pub ft_point: Vec<f64>,
    pub t: f64,
    pub level: f64,
    pub kappa_max: f64,
}

impl ConditionedSampler {
    pub fn new(
        model: &CovarianceModel,
        sampler: Arc<FieldSampler>,
        f_point: &[f64],
        ft_point: &[f64],
        t: f64,
        level: f64,
        kappa_max: f64,
    ) -> Result<Self> {
        let grid = sampler.grid();
        let snap = |p: &[f64]| -> Result<Vec<f64>> { Ok(grid.cell_center(grid.cell_at(p)?)) };
        Ok(ConditionedSampler {
            model: model.clone(),
            f_point: snap(f_point)?,
            ft_point: snap(ft_point)?,
            sampler,
            t,
            level,
            kappa_max,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.sampler.grid()
    }

    pub fn constraints(&self) -> Vec<ConditioningConstraint> {
        vec![
            ConditioningConstraint { point: self.f_point.clone(), level: self.level, gradient: true, field: FieldRole::F },
            ConditioningConstraint { point: self.ft_point.clone(), level: self.level, gradient: true, field: FieldRole::Ft },
        ]
    }

    /// Unconditioned `(f, f^t)` for replicate `rep`.
    pub fn base_pair(&self, master: u64, rep: u64) -> Result<FieldPair> {
        let mut rng = stream(master, rep, StreamRole::Field);
        let (a, b) = self.sampler.draw_pair(&mut rng);
        let grid = *self.sampler.grid();
        let wrap = |v: Vec<f64>| crate::field::FieldSample {
            grid,
            model: self.model.descriptor(),
            seed: Some(crate::field::SeedRecord { master, replicate: rep }),
            values: v,
            companion: None,
            t: None,
        };
        let f = wrap(a);
        let ft = interpolated_pair(&f, &wrap(b), self.t)?;
        Ok(FieldPair { f, ft, t: self.t })
    }

    pub fn draw(&self, master: u64, rep: u64) -> Result<FieldPair> {
        let base = self.base_pair(master, rep)?;
        condition_on_constraints(&self.model, self.sampler.grid(), &self.constraints(), &base, self.kappa_max)
    }
}

pub fn sample_conditioned_pair(
    model: &CovarianceModel,
    grid: &GridSpec,
    x: &[f64],
    t: f64,
    level: f64,
    seed: u64,
) -> Result<FieldPair> {
    let sampler = Arc::new(FieldSampler::new(model, grid)?);
    let zero = vec![0.0; grid.dim];
    ConditionedSampler::new(model, sampler, x, &zero, t, level, DEFAULT_KAPPA_MAX)?.draw(seed, 0)
}

pub const DEFAULT_KAPPA_MAX: f64 = 1e14;

/// `d_xΦ` for `f` at `f_point` and `d_0Φ` for `f^t` at `ft_point`, checked on `Λ_{R}` and `Λ_{2R}`.
pub fn derivatives_at_points(
    pair: &FieldPair,
    spec: &FunctionalSpec,
    r_stab: f64,
    f_point: &[f64],
    ft_point: &[f64],
) -> Result<(f64, f64)> {
    let mut out = [0.0; 2];
    for (slot, (field, point)) in [(&pair.f, f_point), (&pair.ft, ft_point)].into_iter().enumerate() {
        let grid = field.grid;
        let cell = grid.cell_at(point)?;
        let bump = Bump::auto(field, cell, spec.level);
        let small = derivative_at_cell(field, spec, &grid.centered_box(r_stab)?, cell, bump)?;
        let large = derivative_at_cell(field, spec, &grid.centered_box(2.0 * r_stab)?, cell, bump)?;
        if small != large {
            let arm = truncated_arm_event(field, spec.level, point, 0.5 * r_stab).unwrap_or(false);
            return Err(Error::NotStabilized(format!(
                "derivative {small} on R = {r_stab} but {large} on 2R; truncated arm witness: {arm}"
            )));
        }
        out[slot] = small;
    }
    Ok((out[0], out[1]))
}

/// `(d_xΦ_∞, d_0^tΦ_∞)` for a pair conditioned at `x` (for `f`) and the origin (for `f^t`).
pub fn estimate_topological_derivative_at_infinity(
    pair: &FieldPair,
    spec: &FunctionalSpec,
    r_stab: f64,
    x: &[f64],
) -> Result<(f64, f64)> {
    let zero = vec![0.0; pair.f.grid.dim];
    derivatives_at_points(pair, spec, r_stab, x, &zero)
}

fn det(h: &[[f64; 3]; 3], d: usize) -> f64 {
    match d {
        1 => h[0][0],
        2 => h[0][0] * h[1][1] - h[0][1] * h[1][0],
        _ => {
            h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
                + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotalSampleRecord {
    pub x: Vec<f64>,
    pub t: f64,
    pub det_product: f64,
    pub deriv_product: f64,
    pub density: f64,
}

/// One conditioned draw's contribution `|det ∇²f(x)| |det ∇²f^t(0)| d_xΦ d_0Φ`.
pub fn sample_record(
    cs: &ConditionedSampler,
    spec: &FunctionalSpec,
    r_stab: f64,
    density: f64,
    master: u64,
    rep: u64,
) -> Result<PivotalSampleRecord> {
    let pair = cs.draw(master, rep)?;
    let grid = cs.grid();
    let d = grid.dim;
    let hf = pair.f.hessian(grid.cell_at(&cs.f_point)?);
    let hft = pair.ft.hessian(grid.cell_at(&cs.ft_point)?);
    let det_product = det(&hf, d).abs() * det(&hft, d).abs();
    let (a, b) = derivatives_at_points(&pair, spec, r_stab, &cs.f_point, &cs.ft_point)?;
    Ok(PivotalSampleRecord { x: cs.f_point.clone(), t: cs.t, det_product, deriv_product: a * b, density })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PivotalConfig {
    pub functional: FunctionalSpec,
    /// Spatial truncation radius.
    pub rho_max: f64,
    /// Inner radius of the graded radial rule.
    pub r_min: f64,
    /// Step of the radial rule in `log r`.
    pub radial_step: f64,
    /// Directions per radius (d = 2: angles; d = 3: polar nodes, with twice as many azimuths).
    pub angular_nodes: usize,
    /// Gauss-Legendre nodes in `log(1 - t)`.
    pub t_nodes: usize,
    /// Largest allowed truncation `1 - t_max`.
    pub t_cap: f64,
    /// Truncation `1 - t_max = t_floor_scale · |x|²` below `t_cap`.
    pub t_floor_scale: f64,
    pub replicates: usize,
    pub r_stab: f64,
    /// Largest grid spacing.
    pub spacing: f64,
    /// Minimum number of cells between the two critical points.
    pub cells_per_offset: usize,
    pub kappa_max: f64,
    /// Condition `f` at the origin and `f^t` at `x` instead.
    pub swap_roles: bool,
}

impl Default for PivotalConfig {
    fn default() -> Self {
        PivotalConfig {
            functional: FunctionalSpec::euler(1.0),
            rho_max: 6.0,
            r_min: 1e-3,
            radial_step: std::f64::consts::LN_2 / 4.0,
            angular_nodes: 8,
            t_nodes: 12,
            t_cap: 0.05,
            t_floor_scale: 1e-3,
            replicates: 24,
            r_stab: 16.0,
            spacing: 0.05,
            cells_per_offset: 6,
            kappa_max: DEFAULT_KAPPA_MAX,
            swap_roles: false,
        }
    }
}

impl PivotalConfig {
    pub fn validate(&self, model: &CovarianceModel) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.t_cap > 0.0 && self.t_cap <= 0.2) {
            return bad("t_cap must lie in (0, 0.2]");
        }
        if self.rho_max < 4.0 * model.correlation_length() {
            return bad("rho_max must cover four correlation lengths");
        }
        if !(self.r_min > 0.0 && self.r_min < self.rho_max) {
            return bad("r_min must lie in (0, rho_max)");
        }
        if !(self.radial_step > 0.0) || self.t_nodes == 0 || self.replicates < 2 || self.angular_nodes == 0 {
            return bad("quadrature sizes must be positive and replicates >= 2");
        }
        if self.r_stab < 2.0 * self.rho_max + 1.0 {
            return bad("r_stab must exceed 2 rho_max + 1 so every node lies inside the box");
        }
        if !(self.t_floor_scale > 0.0) || !(self.spacing > 0.0) || self.cells_per_offset < 2 {
            return bad("t_floor_scale, spacing must be positive and cells_per_offset >= 2");
        }
        self.functional.validate(model.dim())
    }

    fn directions(&self, d: usize) -> Vec<(Vec<f64>, f64)> {
        use std::f64::consts::PI;
        match d {
            1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
            2 => {
                let n = self.angular_nodes;
                (0..n)
                    .map(|j| {
                        let th = 2.0 * PI * (j as f64 + 0.5) / n as f64;
                        (vec![th.cos(), th.sin()], 2.0 * PI / n as f64)
                    })
                    .collect()
            }
            _ => {
                let (mu, w) = gauss_legendre(self.angular_nodes);
                let na = 2 * self.angular_nodes;
                let mut out = Vec::new();
                for (m, wm) in mu.iter().zip(&w) {
                    let s = (1.0 - m * m).sqrt();
                    for j in 0..na {
                        let ph = 2.0 * PI * (j as f64 + 0.5) / na as f64;
                        out.push((vec![s * ph.cos(), s * ph.sin(), *m], wm * 2.0 * PI / na as f64));
                    }
                }
                out
            }
        }
    }

    /// Radial nodes `r_k` and weights in `log r`.
    fn radii(&self) -> Vec<f64> {
        let span = (self.rho_max / self.r_min).ln();
        let k = (span / self.radial_step - 1e-9).ceil() as usize;
        (0..k).map(|i| self.r_min * ((i as f64 + 0.5) * self.radial_step).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u64,
    pub x: Vec<f64>,
    pub radius: f64,
    pub t: f64,
    pub spacing: f64,
    pub weight: f64,
    pub kernel: f64,
    pub density: f64,
    pub mean: f64,
    pub variance: f64,
    pub used: usize,
    pub not_stabilized: usize,
    pub dropped: bool,
    pub contribution: f64,
    pub contribution_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSensitivity {
    /// Estimate using only nodes with `|x| <= rho_max / 2`.
    pub rho_max_halved: f64,
    /// Estimate dropping the part of each t-range within twice the truncation of 1.
    pub t_cap_doubled: f64,
    /// Estimated contribution of the omitted ball `|x| < r_min`.
    pub omitted_ball: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Report {
    pub sigma2: f64,
    pub se: f64,
    pub nodes: usize,
    pub dropped_nodes: usize,
    pub not_stabilized: usize,
    pub truncation_sensitivity: TruncationSensitivity,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub records: Vec<NodeRecord>,
}

struct NodePlan {
    id: u64,
    x: Vec<f64>,
    radius: f64,
    t: f64,
    weight: f64,
    spacing: f64,
    near_one: bool,
}

fn node_grid(cfg: &PivotalConfig, d: usize, h: f64) -> Result<GridSpec> {
    GridSpec::new(d, 2.0 * cfg.r_stab, h, 0.0)
}

/// Monte Carlo quadrature of the pivotal variance integral.
pub fn estimate_sigma2(model: &CovarianceModel, cfg: &PivotalConfig, master: u64) -> Result<Sigma2Report> {
    cfg.validate(model)?;
    let d = model.dim();
    let dirs = cfg.directions(d);
    let (gl_x, gl_w) = gauss_legendre(cfg.t_nodes);
    let mut plans = Vec::new();
    for (k, &r) in cfg.radii().iter().enumerate() {
        let target = cfg.spacing.min(r / cfg.cells_per_offset as f64);
        // Both stabilization boxes must hold an even number of cells.
        let h = cfg.r_stab / (2.0 * (cfg.r_stab / target / 2.0).ceil());
        let tau = (cfg.t_floor_scale * r * r).clamp(1e-12, cfg.t_cap);
        let (ua, ub) = (tau.ln(), 0.0);
        for (j, (dir, wd)) in dirs.iter().enumerate() {
            let snapped: Vec<f64> = dir.iter().map(|c| (c * r / h).round() * h).collect();
            for (i, (g, w)) in gl_x.iter().zip(&gl_w).enumerate() {
                let u = 0.5 * (ua + ub) + 0.5 * (ub - ua) * g;
                let t = 1.0 - u.exp();
                let wt = 0.5 * (ub - ua) * w * u.exp();
                plans.push(NodePlan {
                    id: ((k * dirs.len() + j) * cfg.t_nodes + i) as u64,
                    x: snapped.clone(),
                    radius: r,
                    t,
                    weight: wt * wd * r.powi(d as i32) * cfg.radial_step,
                    spacing: h,
                    near_one: 1.0 - t < 2.0 * tau,
                });
            }
        }
    }

    let mut samplers: BTreeMap<u64, Arc<FieldSampler>> = BTreeMap::new();
    for p in &plans {
        if let std::collections::btree_map::Entry::Vacant(e) = samplers.entry(p.spacing.to_bits()) {
            e.insert(Arc::new(FieldSampler::new(model, &node_grid(cfg, d, p.spacing)?)?));
        }
    }

    let zero = vec![0.0; d];
    let records: Vec<NodeRecord> = plans
        .par_iter()
        .map(|p| -> Result<NodeRecord> {
            let sampler = samplers[&p.spacing.to_bits()].clone();
            let (fp, ftp) = if cfg.swap_roles { (&zero, &p.x) } else { (&p.x, &zero) };
            let kernel = model.eval(&p.x);
            let mut rec = NodeRecord {
                id: p.id,
                x: p.x.clone(),
                radius: p.radius,
                t: p.t,
                spacing: p.spacing,
                weight: p.weight,
                kernel,
                density: 0.0,
                mean: 0.0,
                variance: 0.0,
                used: 0,
                not_stabilized: 0,
                dropped: false,
                contribution: 0.0,
                contribution_var: 0.0,
            };
            let density = match pivotal_density_at(model, fp, ftp, p.t, cfg.functional.level) {
                Ok(v) => v,
                Err(Error::DegenerateCovariance) => {
                    rec.dropped = true;
                    return Ok(rec);
                }
                Err(e) => return Err(e),
            };
            rec.density = density;
            let cs = ConditionedSampler::new(model, sampler, fp, ftp, p.t, cfg.functional.level, cfg.kappa_max)?;
            let node_master = derive_seed(master, p.id);
            let mut vals = Vec::with_capacity(cfg.replicates);
            for rep in 0..cfg.replicates as u64 {
                match sample_record(&cs, &cfg.functional, cfg.r_stab, density, node_master, rep) {
                    Ok(s) => vals.push(s.det_product * s.deriv_product),
                    Err(Error::NotStabilized(_)) => rec.not_stabilized += 1,
                    Err(Error::DegenerateConstraintSet { .. }) => {
                        rec.dropped = true;
                        return Ok(rec);
                    }
                    Err(e) => return Err(e),
                }
            }
            rec.used = vals.len();
            if vals.len() >= 2 {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let scale = p.weight * kernel * density;
                rec.mean = mean;
                rec.variance = var;
                rec.contribution = scale * mean;
                rec.contribution_var = scale * scale * var / n;
            } else {
                rec.dropped = true;
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;

    let sigma2: f64 = records.iter().map(|r| r.contribution).sum();
    let se = records.iter().map(|r| r.contribution_var).sum::<f64>().sqrt();
    let rho_max_halved = records.iter().filter(|r| r.radius <= 0.5 * cfg.rho_max).map(|r| r.contribution).sum();
    let t_cap_doubled =
        records.iter().zip(&plans).filter(|(_, p)| !p.near_one).map(|(r, _)| r.contribution).sum();
    let radii = cfg.radii();
    let first: f64 = records.iter().filter(|r| r.radius == radii[0]).map(|r| r.contribution).sum();
    let omitted_ball = first * (cfg.r_min / radii[0]).powi(d as i32) / (d as f64 * cfg.radial_step);
    Ok(Sigma2Report {
        sigma2,
        se,
        nodes: records.len(),
        dropped_nodes: records.iter().filter(|r| r.dropped).count(),
        not_stabilized: records.iter().map(|r| r.not_stabilized).sum(),
        truncation_sensitivity: TruncationSensitivity { rho_max_halved, t_cap_doubled, omitted_ball },
        records,
    })
}

/// A Lipschitz map applied to functional values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LipschitzMap {
    Zero,
    Identity,
    Abs,
    Clamp { lo: f64, hi: f64 },
    Tanh { scale: f64 },
}

impl LipschitzMap {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            LipschitzMap::Zero => 0.0,
            LipschitzMap::Identity => x,
            LipschitzMap::Abs => x.abs(),
            LipschitzMap::Clamp { lo, hi } => x.clamp(lo, hi),
            LipschitzMap::Tanh { scale } => (x / scale).tanh(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            LipschitzMap::Zero => 0.0,
            LipschitzMap::Identity | LipschitzMap::Abs | LipschitzMap::Clamp { .. } => 1.0,
            LipschitzMap::Tanh { scale } => 1.0 / scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiRow {
    pub separation: f64,
    pub covariance: f64,
    pub se: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// `∫∫ K̃(x - y)` over two axis-aligned boxes, by midpoint rule with step `q`.
pub fn ktilde_box_integral(model: &CovarianceModel, lo1: &[f64], hi1: &[f64], lo2: &[f64], hi2: &[f64], q: f64) -> f64 {
    let d = model.dim();
    // Per axis: counts of midpoint pairs at each lag.
    let mut axes: Vec<Vec<(f64, f64)>> = Vec::new();
    for k in 0..d {
        let m1 = ((hi1[k] - lo1[k]) / q).round().max(1.0) as usize;
        let m2 = ((hi2[k] - lo2[k]) / q).round().max(1.0) as usize;
        let s1 = (hi1[k] - lo1[k]) / m1 as f64;
        let s2 = (hi2[k] - lo2[k]) / m2 as f64;
        let mut lags: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        for i in 0..m1 {
            let a = lo1[k] + (i as f64 + 0.5) * s1;
            for j in 0..m2 {
                let b = lo2[k] + (j as f64 + 0.5) * s2;
                let key = ((a - b) * 1e6).round() as i64;
                let e = lags.entry(key).or_insert((a - b, 0.0));
                e.1 += s1 * s2;
            }
        }
        axes.push(lags.into_values().collect());
    }
    let mut total = 0.0;
    let mut idx = vec![0usize; d];
    loop {
        let lag: Vec<f64> = (0..d).map(|k| axes[k][idx[k]].0).collect();
        let w: f64 = (0..d).map(|k| axes[k][idx[k]].1).product();
        total += w * model.ktilde(&lag);
        let mut k = 0;
        loop {
            if k == d {
                return total;
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiConfig {
    pub functional: FunctionalSpec,
    pub box_side: f64,
    pub separations: Vec<f64>,
    pub f: LipschitzMap,
    pub g: LipschitzMap,
    pub replicates: usize,
    pub spacing: f64,
    /// Step of the bound's midpoint rule.
    #[serde(default = "default_quad_step")]
    pub quad_step: f64,
}

fn default_quad_step() -> f64 {
    0.5
}

/// Covariance of `F(Φ(D₁))` and `G(Φ(D₂))` for boxes at the given face separations.
pub fn quasi_association_check(model: &CovarianceModel, cfg: &QuasiConfig, master: u64) -> Result<Vec<QuasiRow>> {
    cfg.functional.validate(model.dim())?;
    let d = model.dim();
    let w = cfg.box_side;
    let mut rows = Vec::new();
    for (si, &s) in cfg.separations.iter().enumerate() {
        let extent = 2.0 * w + s;
        let side = 2.0 * ((extent / cfg.spacing / 2.0).ceil() + 1.0) * cfg.spacing;
        let grid = GridSpec::new(d, side, cfg.spacing, 0.0)?;
        let sampler = FieldSampler::new(model, &grid)?;
        let offset = 0.5 * (w + s);
        let off_cells = (offset / cfg.spacing).round() as i64;
        let mut c1 = [0i64; 3];
        let mut c2 = [0i64; 3];
        c1[0] = -off_cells;
        c2[0] = off_cells;
        let b1 = grid.box_at(c1, w)?;
        let b2 = grid.box_at(c2, w)?;
        let seed = derive_seed(master, si as u64);
        let pairs: Vec<(f64, f64)> = (0..cfg.replicates.div_ceil(2) as u64)
            .into_par_iter()
            .map(|pi| -> Result<Vec<(f64, f64)>> {
                let (a, b) = sampler.sample_replicate_pair(seed, pi);
                let mut out = Vec::new();
                for fs in [a, b] {
                    let p1 = crate::topology::evaluate(&fs, &cfg.functional, &b1)?;
                    let p2 = crate::topology::evaluate(&fs, &cfg.functional, &b2)?;
                    out.push((cfg.f.apply(p1), cfg.g.apply(p2)));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .take(cfg.replicates)
            .collect();
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let prods: Vec<f64> = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).collect();
        let cov = prods.iter().sum::<f64>() / (n - 1.0);
        let pm = prods.iter().sum::<f64>() / n;
        let se = (prods.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let mut lo1 = vec![-0.5 * w; d];
        let mut hi1 = vec![0.5 * w; d];
        let mut lo2 = lo1.clone();
        let mut hi2 = hi1.clone();
        let real_off = off_cells as f64 * cfg.spacing;
        lo1[0] -= real_off;
        hi1[0] -= real_off;
        lo2[0] += real_off;
        hi2[0] += real_off;
        for k in 0..d {
            lo1[k] -= 2.0;
            hi1[k] += 2.0;
            lo2[k] -= 2.0;
            hi2[k] += 2.0;
        }
        let bound = ktilde_box_integral(model, &lo1, &hi1, &lo2, &hi2, cfg.quad_step);
        rows.push(QuasiRow { separation: s, covariance: cov, se, bound, ratio: cov.abs() / bound });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_factorizes_at_t_zero() {
        let m = CovarianceModel::bargmann_fock(2);
        let joint = pivotal_density(&m, &[0.7, -0.4], 0.0, 1.0).unwrap();
        // Value and gradient of a unit BF field are independent, gradient covariance = identity.
        let one = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt() / (2.0 * std::f64::consts::PI);
        assert!((joint - one * one).abs() < 1e-12 * one * one);
    }

    #[test]
    fn determinant_decreases_in_t() {
        let m = CovarianceModel::bargmann_fock(2);
        for a in [0.5, 2.0] {
            let dets: Vec<f64> =
                [0.0, 0.5, 0.9, 0.99].iter().map(|&t| covariance_determinant(&m, &[a, 0.0], &[0.0, 0.0], t)).collect();
            assert!(dets.iter().all(|&v| v > 0.0));
            assert!(dets.windows(2).all(|w| w[1] < w[0]), "{dets:?}");
        }
    }

    #[test]
    fn ktilde_integral_of_constant_kernel_is_volume_product() {
        let m = CovarianceModel::bargmann_fock(1);
        // Boxes far apart: integral is small but positive.
        let v = ktilde_box_integral(&m, &[-1.0], &[1.0], &[20.0], &[22.0], 0.25);
        assert!(v > 0.0 && v < 1e-20);
        let near = ktilde_box_integral(&m, &[0.0], &[1.0], &[0.0], &[1.0], 0.05);
        assert!((near - 1.0).abs() < 1e-9);
    }
}
