//! Volume of the unbounded excursion component in the supercritical planar regime.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dist::{
    bootstrap_indices, kolmogorov_distance, mean, normal_cdf, percentile_interval, variance, variance_estimate,
    EmpiricalDistribution, Estimate, BOOTSTRAP_RESAMPLES, Z95,
};
use super::suites::{replicate_map, CsvRow};
use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::field::FieldSampler;
use crate::grid::GridSpec;
use crate::rng::derive_seed;
use crate::topology::{unbounded_mask, BinaryGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeConfig {
    pub level: f64,
    /// Scales for the variance and `d_Kol` curves.
    pub scales: Vec<f64>,
    /// Dyadic scales for the iterated-logarithm sequence.
    pub lil_scales: Vec<f64>,
    pub replicates: usize,
    /// Replicates entering the iterated-logarithm band check.
    pub lil_runs: usize,
    pub spacing: f64,
    pub buffer: f64,
    /// Largest lag (field units, per axis) in the indicator covariance table.
    pub lag_max: f64,
    /// Side of the window of base points for the lag table.
    pub base_window: f64,
    /// Side of the window of half-unit cells for the `V_v` table.
    pub cox_window: f64,
    /// Distances `k` (half-unit index units) for the Cox-Grimmett coefficient.
    pub cox_k: Vec<usize>,
}

impl VolumeConfig {
    pub fn validate(&self, model: &CovarianceModel) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if model.dim() != 2 {
            return bad("volume suite is planar".into());
        }
        let required = 6.0 * model.correlation_length();
        if self.buffer + 1e-12 < required {
            return Err(Error::BufferTooSmall { buffer: self.buffer, required });
        }
        let cells_half = 0.5 / self.spacing;
        if (cells_half - cells_half.round()).abs() > 1e-9 || cells_half.round() < 1.0 {
            return bad("spacing must divide 1/2".into());
        }
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return bad("scales must be increasing".into());
        }
        let r_max = self.r_max();
        if self.lil_scales.iter().any(|&n| n > r_max) {
            return bad("LIL scales must not exceed the largest scale".into());
        }
        if self.base_window + 2.0 * self.lag_max > r_max || self.cox_window > r_max {
            return bad("lag and Cox-Grimmett windows must fit inside the largest scale".into());
        }
        if self.replicates < 2 || self.lil_runs > self.replicates {
            return bad("need replicates >= 2 and lil_runs <= replicates".into());
        }
        Ok(())
    }

    pub fn r_max(&self) -> f64 {
        self.scales.iter().chain(&self.lil_scales).fold(0.0, |a, &b| a.max(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCovariance {
    /// Lag in field units.
    pub lag: [f64; 2],
    pub covariance: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeScaleRow {
    pub scale: f64,
    pub variance_density: Estimate,
    pub d_kol: f64,
    pub d_kol_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxGrimmettRow {
    pub k: usize,
    pub u: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub level: f64,
    /// Cell-level indicator mean over `Λ_{R_max}`.
    pub theta: Estimate,
    /// Indicator mean over the lag-table base points.
    pub theta_base: f64,
    /// `Ĉov[E_0, E_0]` from the lag table.
    pub cov_zero: f64,
    /// `θ̂(1 - θ̂)` over the same base points.
    pub bernoulli_variance: f64,
    pub lag_table: Vec<LagCovariance>,
    /// `∫ Cov[E_x, E_0] dx` over the lag table.
    pub sigma2: f64,
    pub rows: Vec<VolumeScaleRow>,
    pub lil_scales: Vec<f64>,
    /// `max_n |L_n|` per run.
    pub lil_max: Vec<f64>,
    /// `3 σ̂ √d`.
    pub lil_band: f64,
    pub cox_grimmett: Vec<CoxGrimmettRow>,
    /// Pairs of `V_v` with covariance below `-3 SE`.
    pub negative_pairs: usize,
    pub non_positive_covariance: bool,
    /// Indicator flip rate per unit length along grid rows.
    pub crossing_rate: f64,
    /// Largest `|ΔĈov| - (C |Δx| + 4 SE)` over adjacent lags; `<= 0` when continuity holds.
    pub continuity_excess: f64,
    pub warnings: Vec<String>,
}

impl VolumeReport {
    /// No lag-table entry below `-3 SE`.
    pub fn lag_association_holds(&self) -> bool {
        self.lag_table.iter().all(|c| c.covariance >= -3.0 * c.se)
    }

    pub fn lil_fraction_within(&self) -> f64 {
        self.lil_max.iter().filter(|&&m| m <= self.lil_band).count() as f64 / self.lil_max.len().max(1) as f64
    }

    /// `u(k_{i+1}) <= upper CI of u(k_i)`.
    pub fn cox_grimmett_nonincreasing(&self) -> bool {
        self.cox_grimmett.windows(2).all(|w| w[1].u <= w[0].ci.1.max(w[0].u))
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let nan = (f64::NAN, f64::NAN);
        let mut out = vec![
            CsvRow::new(0.0, "theta", self.theta.value, (self.theta.lo, self.theta.hi)),
            CsvRow::new(0.0, "cov_zero", self.cov_zero, nan),
            CsvRow::new(0.0, "bernoulli_variance", self.bernoulli_variance, nan),
            CsvRow::new(0.0, "sigma2", self.sigma2, nan),
            CsvRow::new(0.0, "crossing_rate", self.crossing_rate, nan),
        ];
        for r in &self.rows {
            out.push(CsvRow::from_estimate(r.scale, "variance_density", &r.variance_density));
            out.push(CsvRow::new(r.scale, "d_kol", r.d_kol, r.d_kol_ci));
        }
        for c in &self.cox_grimmett {
            out.push(CsvRow::new(c.k as f64, "cox_grimmett_u", c.u, c.ci));
        }
        for c in &self.lag_table {
            let lag = (c.lag[0].powi(2) + c.lag[1].powi(2)).sqrt();
            out.push(CsvRow::new(lag, "lag_covariance", c.covariance, (c.covariance - Z95 * c.se, c.covariance + Z95 * c.se)));
        }
        out
    }
}

/// Per-replicate summaries.
struct RepData {
    cells_in: usize,
    /// Unbounded cells in `Λ_R` per scale (then LIL scales).
    volumes: Vec<usize>,
    base_sum: u64,
    /// Per lag: `Σ E_x E_{x+v}` and `Σ E_{x+v}`.
    lag_xy: Vec<u64>,
    lag_y: Vec<u64>,
    v_cells: Vec<f64>,
    flips: u64,
    flip_len: u64,
}

/// `(S_xy n - S_x S_y) / n²` computed exactly in integers before the final division.
fn cov_from_counts(sxy: u64, sx: u64, sy: u64, n: u64) -> f64 {
    let num = sxy as i128 * n as i128 - sx as i128 * sy as i128;
    num as f64 / (n as f64 * n as f64)
}

pub fn volume_suite(model: &CovarianceModel, cfg: &VolumeConfig, master: u64) -> Result<VolumeReport> {
    cfg.validate(model)?;
    let h = cfg.spacing;
    let r_max = cfg.r_max();
    let grid = GridSpec::new(2, r_max, h, cfg.buffer)?;
    let sampler = FieldSampler::new(model, &grid)?;
    let shape = grid.shape();
    let n = grid.cells_per_side() as i64;
    let half = (0.5 / h).round() as i64;
    let all_scales: Vec<f64> = cfg.scales.iter().chain(&cfg.lil_scales).copied().collect();
    let boxes = all_scales.iter().map(|&r| grid.centered_box(r)).collect::<Result<Vec<_>>>()?;
    let outer = grid.centered_box(r_max)?;
    // Half-unit lattice sites v map to the cell with lower corner v/2.
    let site = |v: [i64; 2]| -> usize { shape.index([(n / 2 + v[0] * half) as usize, (n / 2 + v[1] * half) as usize, 0]) };
    let bw = (cfg.base_window).round() as i64; // half-units on each side of 0
    let lmax = (2.0 * cfg.lag_max).round() as i64;
    let lags: Vec<[i64; 2]> = (-lmax..=lmax).flat_map(|i| (-lmax..=lmax).map(move |j| [i, j])).collect();
    let cw = (cfg.cox_window).round() as i64;
    let cox_sites: Vec<[i64; 2]> = (-cw..cw).flat_map(|i| (-cw..cw).map(move |j| [i, j])).collect();
    let level = cfg.level;

    let data = replicate_map(&sampler, master, cfg.replicates, |_, fs| {
        let mask = unbounded_mask(&BinaryGrid::new(shape, fs.values.iter().map(|&v| v >= level).collect()));
        let count = |b: &crate::grid::CellBox| b.iter().filter(|&p| mask[shape.index(p)]).count();
        let volumes: Vec<usize> = boxes.iter().map(count).collect();
        let cells_in = count(&outer);
        let e = |v: [i64; 2]| mask[site(v)] as u64;
        let mut base_sum = 0;
        let mut lag_xy = vec![0u64; lags.len()];
        let mut lag_y = vec![0u64; lags.len()];
        for i in -bw..bw {
            for j in -bw..bw {
                let ex = e([i, j]);
                base_sum += ex;
                for (k, l) in lags.iter().enumerate() {
                    let ey = e([i + l[0], j + l[1]]);
                    lag_y[k] += ey;
                    lag_xy[k] += ex * ey;
                }
            }
        }
        let v_cells = cox_sites
            .iter()
            .map(|v| {
                let mut c = 0usize;
                for a in 0..half {
                    for b in 0..half {
                        let p = [(n / 2 + v[0] * half + a) as usize, (n / 2 + v[1] * half + b) as usize, 0];
                        c += mask[shape.index(p)] as usize;
                    }
                }
                c as f64 * h * h
            })
            .collect();
        let (mut flips, mut flip_len) = (0u64, 0u64);
        for p in outer.iter() {
            if p[1] + 1 < outer.hi[1] {
                flips += (mask[shape.index(p)] != mask[shape.index([p[0], p[1] + 1, 0])]) as u64;
                flip_len += 1;
            }
        }
        Ok(RepData { cells_in, volumes, base_sum, lag_xy, lag_y, v_cells, flips, flip_len })
    })?;

    let reps = data.len() as f64;
    let cell_area = h * h;
    let outer_cells = outer.len() as f64;
    let theta_rep: Vec<f64> = data.iter().map(|r| r.cells_in as f64 / outer_cells).collect();
    let theta_v = mean(&theta_rep);
    let theta_se = (variance(&theta_rep) / reps).sqrt();
    let theta = Estimate { value: theta_v, se: theta_se, lo: theta_v - Z95 * theta_se, hi: theta_v + Z95 * theta_se };

    // Lag table.
    let nb = (2 * bw) as u64 * (2 * bw) as u64;
    let ntot = nb * data.len() as u64;
    let sx: u64 = data.iter().map(|r| r.base_sum).sum();
    let lag_table: Vec<LagCovariance> = lags
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let sxy: u64 = data.iter().map(|r| r.lag_xy[k]).sum();
            let sy: u64 = data.iter().map(|r| r.lag_y[k]).sum();
            let cov = cov_from_counts(sxy, sx, sy, ntot);
            let (mx, my) = (sx as f64 / ntot as f64, sy as f64 / ntot as f64);
            let infl: Vec<f64> = data
                .iter()
                .map(|r| {
                    let nbf = nb as f64;
                    r.lag_xy[k] as f64 / nbf - my * r.base_sum as f64 / nbf - mx * r.lag_y[k] as f64 / nbf
                })
                .collect();
            LagCovariance { lag: [l[0] as f64 * 0.5, l[1] as f64 * 0.5], covariance: cov, se: (variance(&infl) / reps).sqrt() }
        })
        .collect();
    let zero_idx = lags.iter().position(|l| *l == [0, 0]).expect("zero lag");
    let cov_zero = lag_table[zero_idx].covariance;
    let bernoulli_variance = cov_from_counts(sx, sx, sx, ntot);
    let theta_base = sx as f64 / ntot as f64;
    let sigma2: f64 = lag_table.iter().map(|c| c.covariance).sum::<f64>() * 0.25;

    // Volume curves.
    let cdf = normal_cdf(sigma2.max(1e-300).sqrt());
    let boot = bootstrap_indices(data.len(), BOOTSTRAP_RESAMPLES, derive_seed(master, 0xb007));
    let normalized = |k: usize, idx: Option<&[usize]>, th: f64| -> Vec<f64> {
        let r = all_scales[k];
        let pick: Box<dyn Iterator<Item = &RepData>> = match idx {
            Some(ix) => Box::new(ix.iter().map(|&i| &data[i])),
            None => Box::new(data.iter()),
        };
        pick.map(|d| (d.volumes[k] as f64 * cell_area - th * r * r) / r).collect()
    };
    let rows = (0..cfg.scales.len())
        .map(|k| -> Result<VolumeScaleRow> {
            let r = all_scales[k];
            let vols: Vec<f64> = data.iter().map(|d| d.volumes[k] as f64 * cell_area / r).collect();
            let dk = kolmogorov_distance(&EmpiricalDistribution::new(normalized(k, None, theta_v))?, &cdf);
            let bd: Vec<f64> = boot
                .par_iter()
                .map(|ix| {
                    let th = mean(&ix.iter().map(|&i| theta_rep[i]).collect::<Vec<_>>());
                    EmpiricalDistribution::new(normalized(k, Some(ix), th))
                        .map(|e| kolmogorov_distance(&e, &cdf))
                        .unwrap_or(f64::NAN)
                })
                .collect();
            Ok(VolumeScaleRow { scale: r, variance_density: variance_estimate(&vols), d_kol: dk, d_kol_ci: percentile_interval(&bd) })
        })
        .collect::<Result<Vec<_>>>()?;

    // Iterated logarithm.
    let off = cfg.scales.len();
    let lil_max = data[..cfg.lil_runs]
        .iter()
        .map(|d| {
            cfg.lil_scales
                .iter()
                .enumerate()
                .map(|(j, &s)| {
                    let vol = s * s;
                    (d.volumes[off + j] as f64 * cell_area - theta_v * vol).abs() / (2.0 * vol * vol.ln().ln()).sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let lil_band = 3.0 * sigma2.max(0.0).sqrt() * 2f64.sqrt();

    // V_v covariance table and Cox-Grimmett coefficients.
    let m = cox_sites.len();
    let cov_matrix = |idx: &[usize]| -> Vec<f64> {
        let k = idx.len() as f64;
        let mu: Vec<f64> = (0..m).map(|s| idx.iter().map(|&i| data[i].v_cells[s]).sum::<f64>() / k).collect();
        let mut c = vec![0.0; m * m];
        for &i in idx {
            let x: Vec<f64> = (0..m).map(|s| data[i].v_cells[s] - mu[s]).collect();
            for a in 0..m {
                if x[a] == 0.0 {
                    continue;
                }
                for b in 0..m {
                    c[a * m + b] += x[a] * x[b];
                }
            }
        }
        c.iter_mut().for_each(|v| *v /= k - 1.0);
        c
    };
    let dist2 = |a: usize, b: usize| -> i64 {
        let (p, q) = (cox_sites[a], cox_sites[b]);
        (p[0] - q[0]).pow(2) + (p[1] - q[1]).pow(2)
    };
    let u_of = |c: &[f64], k: usize| -> f64 {
        (0..m)
            .map(|a| (0..m).filter(|&b| dist2(a, b) >= (k * k) as i64).map(|b| c[a * m + b].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let c_full = cov_matrix(&all);
    let boot_c: Vec<Vec<f64>> = boot.par_iter().map(|ix| cov_matrix(ix)).collect();
    let cox_grimmett = cfg
        .cox_k
        .iter()
        .map(|&k| {
            let bs: Vec<f64> = boot_c.iter().map(|c| u_of(c, k)).collect();
            CoxGrimmettRow { k, u: u_of(&c_full, k), ci: percentile_interval(&bs) }
        })
        .collect();
    let mu_v: Vec<f64> = (0..m).map(|s| data.iter().map(|d| d.v_cells[s]).sum::<f64>() / reps).collect();
    let mut negative_pairs = 0;
    for a in 0..m {
        for b in (a + 1)..m {
            let prods: Vec<f64> = data.iter().map(|d| (d.v_cells[a] - mu_v[a]) * (d.v_cells[b] - mu_v[b])).collect();
            let se = (variance(&prods) / reps).sqrt();
            if c_full[a * m + b] < -3.0 * se {
                negative_pairs += 1;
            }
        }
    }

    // Continuity of the lag covariance along the second axis.
    let flips: u64 = data.iter().map(|d| d.flips).sum();
    let flip_len: u64 = data.iter().map(|d| d.flip_len).sum();
    let crossing_rate = flips as f64 / (flip_len as f64 * h);
    let width = (2 * lmax + 1) as usize;
    let mut continuity_excess = f64::NEG_INFINITY;
    for k in 0..lag_table.len() {
        if (k % width) + 1 < width {
            let (a, b) = (&lag_table[k], &lag_table[k + 1]);
            let slack = crossing_rate * 0.5 + 4.0 * (a.se.powi(2) + b.se.powi(2)).sqrt();
            continuity_excess = continuity_excess.max((a.covariance - b.covariance).abs() - slack);
        }
    }

    let mut warnings = Vec::new();
    if cfg.level >= 0.0 {
        warnings.push("level outside the supercritical regime ℓ < 0".to_string());
    }
    Ok(VolumeReport {
        level: cfg.level,
        theta,
        theta_base,
        cov_zero,
        bernoulli_variance,
        lag_table,
        sigma2,
        rows,
        lil_scales: cfg.lil_scales.clone(),
        lil_max,
        lil_band,
        cox_grimmett,
        negative_pairs,
        non_positive_covariance: negative_pairs > 0,
        crossing_rate,
        continuity_excess,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(level: f64) -> VolumeConfig {
        VolumeConfig {
            level,
            scales: vec![8.0, 16.0],
            lil_scales: vec![8.0, 16.0],
            replicates: 12,
            lil_runs: 10,
            spacing: 0.5,
            buffer: 6.0,
            lag_max: 2.0,
            base_window: 4.0,
            cox_window: 2.0,
            cox_k: vec![2, 4],
        }
    }

    #[test]
    fn bernoulli_identity_and_full_excursion() {
        let m = CovarianceModel::bargmann_fock(2);
        let r = volume_suite(&m, &small(-6.0), 5).unwrap();
        assert_eq!(r.cov_zero, r.bernoulli_variance);
        assert!(r.theta.value > 0.99);
        assert!(r.lag_association_holds());
    }

    #[test]
    fn short_buffer_rejected() {
        let m = CovarianceModel::bargmann_fock(2);
        let mut c = small(-1.0);
        c.buffer = 2.0;
        assert!(matches!(volume_suite(&m, &c, 1), Err(Error::BufferTooSmall { .. })));
    }

    #[test]
    fn counts_covariance_exact() {
        assert_eq!(cov_from_counts(3, 3, 3, 4), 3.0 / 16.0);
    }
}
