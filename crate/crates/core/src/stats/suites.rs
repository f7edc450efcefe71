//! Scale curves, Kolmogorov-distance CLT checks, log-averages and arm decay.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dist::{
    bootstrap_indices, kolmogorov_distance, ks_critical, linear_fit, mean, mean_estimate, normal_cdf,
    percentile_interval, variance, variance_estimate, wilson_interval, EmpiricalDistribution, Estimate,
    BOOTSTRAP_RESAMPLES, Z95,
};
use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::field::{FieldSample, FieldSampler};
use crate::grid::GridSpec;
use crate::pivotal::LipschitzMap;
use crate::quadrature::gauss_hermite_normal;
use crate::rng::derive_seed;
use crate::topology::{evaluate, one_arm_event, truncated_arm_event, FunctionalSpec};

/// One CSV row: `scale,statistic,value,ci_lo,ci_hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scale: f64,
    pub statistic: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl CsvRow {
    pub fn new(scale: f64, statistic: &str, value: f64, ci: (f64, f64)) -> Self {
        CsvRow { scale, statistic: statistic.to_string(), value, ci_lo: ci.0, ci_hi: ci.1 }
    }

    pub fn from_estimate(scale: f64, statistic: &str, e: &Estimate) -> Self {
        Self::new(scale, statistic, e.value, (e.lo, e.hi))
    }
}

/// Runs `f` on replicates `0..n` in parallel; results come back in replicate order.
pub fn replicate_map<T, F>(sampler: &FieldSampler, master: u64, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &FieldSample) -> Result<T> + Sync,
{
    let pairs: Vec<Vec<T>> = (0..n.div_ceil(2) as u64)
        .into_par_iter()
        .map(|p| -> Result<Vec<T>> {
            let (a, b) = sampler.sample_replicate_pair(master, p);
            let mut out = vec![f(2 * p, &a)?];
            if 2 * p + 1 < n as u64 {
                out.push(f(2 * p + 1, &b)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().flatten().collect())
}

/// Shared sampling parameters for scale suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteGrid {
    pub spacing: f64,
    #[serde(default)]
    pub buffer: f64,
}

/// `Φ(Λ_R)` for each scale, one nested realization per replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSamples {
    pub dim: usize,
    pub scales: Vec<f64>,
    /// `values[k][i]`: scale `k`, replicate `i`.
    pub values: Vec<Vec<f64>>,
}

impl ScaleSamples {
    pub fn replicates(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    fn volume(&self, k: usize) -> f64 {
        self.scales[k].powi(self.dim as i32)
    }
}

fn check_increasing(scales: &[f64]) -> Result<()> {
    if scales.is_empty() || scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("scale list must be non-empty and increasing".into()));
    }
    Ok(())
}

pub fn functional_samples(
    model: &CovarianceModel,
    spec: &FunctionalSpec,
    scales: &[f64],
    replicates: usize,
    grid: SuiteGrid,
    master: u64,
) -> Result<ScaleSamples> {
    check_increasing(scales)?;
    spec.validate(model.dim())?;
    let d = model.dim();
    let gs = GridSpec::new(d, *scales.last().unwrap(), grid.spacing, grid.buffer)?;
    let boxes = scales.iter().map(|&r| gs.centered_box(r)).collect::<Result<Vec<_>>>()?;
    let sampler = FieldSampler::new(model, &gs)?;
    let per_rep = replicate_map(&sampler, master, replicates, |_, fs| {
        boxes.iter().map(|b| evaluate(fs, spec, b)).collect::<Result<Vec<f64>>>()
    })?;
    let values = (0..scales.len()).map(|k| per_rep.iter().map(|v| v[k]).collect()).collect();
    Ok(ScaleSamples { dim: d, scales: scales.to_vec(), values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub scale: f64,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    /// `Φ(Λ_R)/R^d` per scale.
    pub rows: Vec<ScaleEstimate>,
    /// `|m_{R_{k+1}} - m_{R_k}|`.
    pub differences: Vec<f64>,
}

impl LlnReport {
    pub fn differences_decreasing(&self) -> bool {
        self.differences.windows(2).all(|w| w[1] < w[0])
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut out: Vec<CsvRow> =
            self.rows.iter().map(|r| CsvRow::from_estimate(r.scale, "mean_density", &r.estimate)).collect();
        for (i, d) in self.differences.iter().enumerate() {
            out.push(CsvRow::new(self.rows[i + 1].scale, "mean_difference", *d, (f64::NAN, f64::NAN)));
        }
        out
    }
}

pub fn lln_from(samples: &ScaleSamples) -> LlnReport {
    let rows: Vec<ScaleEstimate> = (0..samples.scales.len())
        .map(|k| {
            let v: Vec<f64> = samples.values[k].iter().map(|x| x / samples.volume(k)).collect();
            ScaleEstimate { scale: samples.scales[k], estimate: mean_estimate(&v) }
        })
        .collect();
    let differences = rows.windows(2).map(|w| (w[1].estimate.value - w[0].estimate.value).abs()).collect();
    LlnReport { rows, differences }
}

pub fn lln_curve(
    model: &CovarianceModel,
    spec: &FunctionalSpec,
    scales: &[f64],
    replicates: usize,
    grid: SuiteGrid,
    master: u64,
) -> Result<LlnReport> {
    Ok(lln_from(&functional_samples(model, spec, scales, replicates, grid, master)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// `Var[Φ(Λ_R)]/R^d` per scale.
    pub rows: Vec<ScaleEstimate>,
    pub differences: Vec<f64>,
}

impl VarianceReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.rows.iter().map(|r| CsvRow::from_estimate(r.scale, "variance_density", &r.estimate)).collect()
    }

    /// `|Var/R^d - σ²|` in units of the combined standard error, at the largest scale.
    pub fn z_against(&self, sigma2: f64, sigma2_se: f64) -> f64 {
        let last = self.rows.last().expect("non-empty").estimate;
        (last.value - sigma2).abs() / (last.se.powi(2) + sigma2_se.powi(2)).sqrt()
    }
}

pub fn variance_from(samples: &ScaleSamples) -> Result<VarianceReport> {
    if samples.replicates() < 2 {
        return Err(Error::InvalidInput("variance needs at least two replicates".into()));
    }
    let rows: Vec<ScaleEstimate> = (0..samples.scales.len())
        .map(|k| {
            let v: Vec<f64> = samples.values[k].iter().map(|x| x / samples.volume(k).sqrt()).collect();
            ScaleEstimate { scale: samples.scales[k], estimate: variance_estimate(&v) }
        })
        .collect();
    let differences = rows.windows(2).map(|w| w[1].estimate.value - w[0].estimate.value).collect();
    Ok(VarianceReport { rows, differences })
}

pub fn variance_curve(
    model: &CovarianceModel,
    spec: &FunctionalSpec,
    scales: &[f64],
    replicates: usize,
    grid: SuiteGrid,
    master: u64,
) -> Result<VarianceReport> {
    variance_from(&functional_samples(model, spec, scales, replicates, grid, master)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub scale: f64,
    pub mean_density: Estimate,
    pub variance_density: Estimate,
    pub d_kol: f64,
    pub d_kol_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    /// Reference variance `σ̂²`, from the largest scale.
    pub sigma2: f64,
    pub replicates: usize,
    pub rows: Vec<CltRow>,
    /// Fitted rate `η̂` from `log d_Kol ~ -η log R`.
    pub eta: f64,
    pub eta_ci: (f64, f64),
    /// Asymptotic 1% Kolmogorov-Smirnov critical value for this sample size.
    pub ks_critical_1pct: f64,
}

impl CltReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut out = Vec::new();
        for r in &self.rows {
            out.push(CsvRow::from_estimate(r.scale, "mean_density", &r.mean_density));
            out.push(CsvRow::from_estimate(r.scale, "variance_density", &r.variance_density));
            out.push(CsvRow::new(r.scale, "d_kol", r.d_kol, r.d_kol_ci));
        }
        let last = self.rows.last().map_or(f64::NAN, |r| r.scale);
        out.push(CsvRow::new(last, "eta", self.eta, self.eta_ci));
        out
    }
}

/// `d_Kol` per scale for `(Φ - mean)/R^{d/2}` against `N(0, σ̂²)`, `σ̂²` from the last scale.
fn kol_curve(samples: &ScaleSamples, idx: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
    let pick = |k: usize| -> Vec<f64> {
        match idx {
            Some(ix) => ix.iter().map(|&i| samples.values[k][i]).collect(),
            None => samples.values[k].clone(),
        }
    };
    let last = samples.scales.len() - 1;
    let sigma2 = variance(&pick(last)) / samples.volume(last);
    if !(sigma2 > 1e-12) {
        return Err(Error::DegenerateVariance);
    }
    let cdf = normal_cdf(sigma2.sqrt());
    let mut out = Vec::new();
    for k in 0..samples.scales.len() {
        let v = pick(k);
        let m = mean(&v);
        let norm = samples.volume(k).sqrt();
        let e = EmpiricalDistribution::new(v.iter().map(|x| (x - m) / norm).collect())?;
        out.push(kolmogorov_distance(&e, &cdf));
    }
    Ok((sigma2, out))
}

fn rate(scales: &[f64], d: &[f64]) -> f64 {
    let x: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let y: Vec<f64> = d.iter().map(|v| v.max(1e-300).ln()).collect();
    -linear_fit(&x, &y).1
}

pub fn clt_from(samples: &ScaleSamples, bootstrap_seed: u64) -> Result<CltReport> {
    let n = samples.replicates();
    if n < 2 {
        return Err(Error::InvalidInput("CLT check needs replicates".into()));
    }
    let (sigma2, dk) = kol_curve(samples, None)?;
    let boot: Vec<Option<(Vec<f64>, f64)>> = bootstrap_indices(n, BOOTSTRAP_RESAMPLES, bootstrap_seed)
        .par_iter()
        .map(|ix| {
            kol_curve(samples, Some(ix)).ok().map(|(_, d)| {
                let eta = rate(&samples.scales, &d);
                (d, eta)
            })
        })
        .collect();
    let boot: Vec<(Vec<f64>, f64)> = boot.into_iter().flatten().collect();
    let rows = (0..samples.scales.len())
        .map(|k| {
            let vol = samples.volume(k);
            let dens: Vec<f64> = samples.values[k].iter().map(|x| x / vol).collect();
            let scaled: Vec<f64> = samples.values[k].iter().map(|x| x / vol.sqrt()).collect();
            let bd: Vec<f64> = boot.iter().map(|b| b.0[k]).collect();
            CltRow {
                scale: samples.scales[k],
                mean_density: mean_estimate(&dens),
                variance_density: variance_estimate(&scaled),
                d_kol: dk[k],
                d_kol_ci: percentile_interval(&bd),
            }
        })
        .collect();
    let etas: Vec<f64> = boot.iter().map(|b| b.1).collect();
    let eta = if samples.scales.len() >= 2 { rate(&samples.scales, &dk) } else { f64::NAN };
    Ok(CltReport {
        sigma2,
        replicates: n,
        rows,
        eta,
        eta_ci: percentile_interval(&etas),
        ks_critical_1pct: ks_critical(n, 0.01),
    })
}

pub fn clt_suite(
    model: &CovarianceModel,
    spec: &FunctionalSpec,
    scales: &[f64],
    replicates: usize,
    grid: SuiteGrid,
    master: u64,
) -> Result<CltReport> {
    let samples = functional_samples(model, spec, scales, replicates, grid, master)?;
    clt_from(&samples, derive_seed(master, 0xb007))
}

/// Ratio of the geometric radius grid.
pub fn asclt_ratio() -> f64 {
    2f64.powf(0.25)
}

/// `(1/log R_max) Σ_k log(q) F(x_k)` over a midpoint geometric grid from 1 to `R_max`.
pub fn log_average(values: &[f64], q: f64, r_max: f64, f: &LipschitzMap) -> f64 {
    values.iter().map(|&v| q.ln() * f.apply(v)).sum::<f64>() / r_max.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscltConfig {
    pub r_max: f64,
    pub spacing: f64,
    /// Replicates used to estimate the per-radius means and `σ̂²`.
    pub calibration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscltCalibration {
    /// Box sides actually used (even cell counts).
    pub radii: Vec<f64>,
    pub means: Vec<f64>,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscltRow {
    pub map: LipschitzMap,
    pub statistic: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscltReport {
    pub seed: u64,
    pub sigma2: f64,
    pub rows: Vec<AscltRow>,
}

impl AscltReport {
    pub fn csv_rows(&self, r_max: f64) -> Vec<CsvRow> {
        let mut out = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            out.push(CsvRow::new(r_max, &format!("log_average_{i}"), r.statistic, (f64::NAN, f64::NAN)));
            out.push(CsvRow::new(r_max, &format!("target_{i}"), r.target, (f64::NAN, f64::NAN)));
        }
        out
    }
}

/// Midpoint geometric radii `q^{k+1/2}` below `R_max`, snapped to even cell counts.
pub fn asclt_radii(r_max: f64, spacing: f64) -> Result<Vec<f64>> {
    let q = asclt_ratio();
    let k = (r_max.ln() / q.ln()).round() as usize;
    if k == 0 || ((q.powi(k as i32) - r_max) / r_max).abs() > 1e-9 {
        return Err(Error::BadScale(format!("R_max = {r_max} is not a power of 2^(1/4)")));
    }
    Ok((0..k)
        .map(|i| {
            let r = q.powf(i as f64 + 0.5);
            (2.0 * spacing) * (r / (2.0 * spacing)).round().max(1.0)
        })
        .collect())
}

fn nested_values(
    sampler: &FieldSampler,
    spec: &FunctionalSpec,
    radii: &[f64],
    master: u64,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    let g = *sampler.grid();
    let boxes = radii.iter().map(|&r| g.centered_box(r)).collect::<Result<Vec<_>>>()?;
    replicate_map(sampler, master, n, |_, fs| boxes.iter().map(|b| evaluate(fs, spec, b)).collect())
}

pub fn asclt_calibrate(
    model: &CovarianceModel,
    spec: &FunctionalSpec,
    cfg: &AscltConfig,
    master: u64,
) -> Result<AscltCalibration> {
    spec.validate(model.dim())?;
    let d = model.dim() as i32;
    let radii = asclt_radii(cfg.r_max, cfg.spacing)?;
    let sampler = FieldSampler::new(model, &GridSpec::new(model.dim(), cfg.r_max, cfg.spacing, 0.0)?)?;
    let vals = nested_values(&sampler, spec, &[radii.clone(), vec![cfg.r_max]].concat(), master, cfg.calibration)?;
    let col = |k: usize| -> Vec<f64> { vals.iter().map(|v| v[k]).collect() };
    let means = (0..radii.len()).map(|k| mean(&col(k))).collect();
    let sigma2 = variance(&col(radii.len())) / cfg.r_max.powi(d);
    if !(sigma2 > 1e-12) {
        return Err(Error::DegenerateVariance);
    }
    Ok(AscltCalibration { radii, means, sigma2 })
}

/// Log-average of `F(Φ̃_r)` over one nested realization, with target `E[F(σ̂Z)]`.
pub fn asclt_statistic(
    model: &CovarianceModel,
    spec: &FunctionalSpec,
    cfg: &AscltConfig,
    cal: &AscltCalibration,
    maps: &[LipschitzMap],
    seed: u64,
) -> Result<AscltReport> {
    let d = model.dim() as i32;
    let sampler = FieldSampler::new(model, &GridSpec::new(model.dim(), cfg.r_max, cfg.spacing, 0.0)?)?;
    let fs = sampler.sample(seed, 0);
    let tilde: Vec<f64> = cal
        .radii
        .iter()
        .zip(&cal.means)
        .map(|(&r, &m)| Ok((evaluate(&fs, spec, &fs.grid.centered_box(r)?)? - m) / r.powi(d).sqrt()))
        .collect::<Result<_>>()?;
    let (x, w) = gauss_hermite_normal(64);
    let sigma = cal.sigma2.sqrt();
    let rows = maps
        .iter()
        .map(|f| AscltRow {
            map: *f,
            statistic: log_average(&tilde, asclt_ratio(), cfg.r_max, f),
            target: x.iter().zip(&w).map(|(x, w)| w * f.apply(sigma * x)).sum(),
        })
        .collect();
    Ok(AscltReport { seed, sigma2: cal.sigma2, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub scale: f64,
    pub trials: usize,
    pub one_arm: usize,
    pub one_arm_p: f64,
    pub one_arm_ci: (f64, f64),
    pub truncated_arm: usize,
    pub truncated_arm_p: f64,
    pub truncated_arm_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub level: f64,
    pub rows: Vec<ArmRow>,
}

impl ArmReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.rows
            .iter()
            .flat_map(|r| {
                [
                    CsvRow::new(r.scale, "one_arm", r.one_arm_p, r.one_arm_ci),
                    CsvRow::new(r.scale, "truncated_arm", r.truncated_arm_p, r.truncated_arm_ci),
                ]
            })
            .collect()
    }

    /// One-arm estimates never increase with scale.
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].one_arm <= w[0].one_arm)
    }
}

/// One-arm frequency from `Λ_1` to `∂Λ_R` and truncated-arm frequency from `B(0,1)` to radius `R/2`.
pub fn arm_decay_curve(
    model: &CovarianceModel,
    level: f64,
    scales: &[f64],
    replicates: usize,
    spacing: f64,
    master: u64,
) -> Result<ArmReport> {
    check_increasing(scales)?;
    let d = model.dim();
    let side = *scales.last().unwrap() + 4.0 * spacing.max(0.5);
    let side = 2.0 * spacing * (side / (2.0 * spacing)).ceil();
    let sampler = FieldSampler::new(model, &GridSpec::new(d, side, spacing, 0.0)?)?;
    let zero = vec![0.0; d];
    let hits = replicate_map(&sampler, master, replicates, |_, fs| {
        scales
            .iter()
            .map(|&r| Ok((one_arm_event(fs, level, &zero, r)?, truncated_arm_event(fs, level, &zero, 0.5 * r)?)))
            .collect::<Result<Vec<(bool, bool)>>>()
    })?;
    let rows = scales
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let one = hits.iter().filter(|h| h[k].0).count();
            let tr = hits.iter().filter(|h| h[k].1).count();
            let n = replicates;
            ArmRow {
                scale: r,
                trials: n,
                one_arm: one,
                one_arm_p: one as f64 / n as f64,
                one_arm_ci: wilson_interval(one, n, Z95),
                truncated_arm: tr,
                truncated_arm_p: tr as f64 / n as f64,
                truncated_arm_ci: wilson_interval(tr, n, Z95),
            }
        })
        .collect();
    Ok(ArmReport { level, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_log_average() {
        let vals = vec![0.3; 32];
        let s = log_average(&vals, asclt_ratio(), 256.0, &LipschitzMap::Clamp { lo: 2.0, hi: 2.0 });
        assert!((s - 2.0).abs() < 0.02 * 2.0);
    }

    #[test]
    fn radii_cover_log_range() {
        let r = asclt_radii(256.0, 0.25).unwrap();
        assert_eq!(r.len(), 32);
        assert!(r.iter().all(|x| ((x / 0.5) - (x / 0.5).round()).abs() < 1e-9));
        assert!(asclt_radii(200.0, 0.25).is_err());
    }

    #[test]
    fn zero_weight_functional_has_zero_variance() {
        let m = CovarianceModel::bargmann_fock(2);
        let spec = FunctionalSpec::weighted(0.0, crate::topology::WeightMap::Zero);
        let g = SuiteGrid { spacing: 0.5, buffer: 0.0 };
        let v = variance_curve(&m, &spec, &[4.0, 8.0], 6, g, 1).unwrap();
        assert!(v.rows.iter().all(|r| r.estimate.value == 0.0));
        let s = functional_samples(&m, &spec, &[4.0, 8.0], 6, g, 1).unwrap();
        assert_eq!(clt_from(&s, 2).unwrap_err(), Error::DegenerateVariance);
    }

    #[test]
    fn high_level_is_empty() {
        let m = CovarianceModel::bargmann_fock(2);
        let r = lln_curve(&m, &FunctionalSpec::count(6.0), &[8.0, 16.0], 8, SuiteGrid { spacing: 0.5, buffer: 0.0 }, 3)
            .unwrap();
        assert!(r.rows.iter().all(|x| x.estimate.value < 1e-4));
    }

    #[test]
    fn arm_extremes() {
        let m = CovarianceModel::bargmann_fock(2);
        let hi = arm_decay_curve(&m, 6.0, &[4.0, 8.0], 10, 0.5, 4).unwrap();
        assert!(hi.rows.iter().all(|r| r.one_arm == 0 && r.truncated_arm == 0));
        let lo = arm_decay_curve(&m, -6.0, &[4.0, 8.0], 10, 0.5, 4).unwrap();
        assert!(lo.rows.iter().all(|r| r.one_arm == 10));
    }
}
