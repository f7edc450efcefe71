//! Suite dispatch and output writing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use excursion_core::pivotal::{estimate_sigma2, quasi_association_check, Sigma2Report};
use excursion_core::rng::derive_seed;
use excursion_core::stats::dist::{mean_estimate, Z95};
use excursion_core::stats::suites::replicate_map;
use excursion_core::stats::{
    arm_decay_curve, asclt_calibrate, asclt_statistic, clt_from, functional_samples, gkf_euler_density, lln_from,
    variance_from, volume_suite, AscltConfig, CsvRow, SuiteGrid,
};
use excursion_core::topology::{
    critical_census, euler_split, evaluate, extract_excursion, multiscale_decompose, FunctionalKind, SetType,
};
use excursion_core::{FieldSampler, GridSpec};
use serde::Serialize;

use crate::config::{ExperimentConfig, Suite};
use crate::error::{HarnessError, Result};
use crate::output::{content_version, svg_plot, write_csv, RunManifest};

pub const MANIFEST: &str = "manifest.json";

/// Derived seeds for auxiliary streams of a run.
mod label {
    pub const PIVOTAL: u64 = 0x5167;
    pub const BOOTSTRAP: u64 = 0xb007;
    pub const CALIBRATION: u64 = 0xca1;
    pub const RUNS: u64 = 0x7275;
}

struct SuiteOutput {
    rows: Vec<CsvRow>,
    report: serde_json::Value,
    plot: Vec<&'static str>,
    warnings: Vec<String>,
    extra: Vec<(String, Vec<u8>)>,
}

impl SuiteOutput {
    fn new(rows: Vec<CsvRow>, report: impl Serialize) -> Result<Self> {
        Ok(SuiteOutput { rows, report: serde_json::to_value(report)?, plot: vec![], warnings: vec![], extra: vec![] })
    }
}

fn ci(value: f64, se: f64) -> (f64, f64) {
    (value - Z95 * se, value + Z95 * se)
}

fn nan() -> (f64, f64) {
    (f64::NAN, f64::NAN)
}

fn sigma2_rows(r: &Sigma2Report, scale: f64) -> Vec<CsvRow> {
    let t = &r.truncation_sensitivity;
    vec![
        CsvRow::new(scale, "pivotal_sigma2", r.sigma2, ci(r.sigma2, r.se)),
        CsvRow::new(scale, "sigma2_rho_max_halved", t.rho_max_halved, nan()),
        CsvRow::new(scale, "sigma2_t_cap_doubled", t.t_cap_doubled, nan()),
        CsvRow::new(scale, "sigma2_omitted_ball", t.omitted_ball, nan()),
        CsvRow::new(scale, "dropped_nodes", r.dropped_nodes as f64, nan()),
        CsvRow::new(scale, "not_stabilized", r.not_stabilized as f64, nan()),
    ]
}

fn sigma2_warnings(r: &Sigma2Report) -> Vec<String> {
    let mut w = Vec::new();
    if r.dropped_nodes > 0 {
        w.push(format!("{} pivotal nodes dropped", r.dropped_nodes));
    }
    if r.not_stabilized > 0 {
        w.push(format!("{} pivotal draws not stabilized", r.not_stabilized));
    }
    w
}

fn clipping_warning(sampler: &FieldSampler) -> Vec<String> {
    let m = sampler.clipped_mass();
    if m > 0.0 {
        vec![format!("circulant embedding clipped spectral mass {m:.3e}")]
    } else {
        vec![]
    }
}

fn run_sample(cfg: &ExperimentConfig, seed: u64) -> Result<SuiteOutput> {
    let model = cfg.covariance_model()?;
    let grid = GridSpec::new(model.dim(), cfg.scales[0], cfg.spacing, cfg.buffer)?;
    let sampler = FieldSampler::new(&model, &grid)?;
    let shape = grid.shape();
    let lags = [0.0, 1.0, 2.0];
    let lag_cells: Vec<usize> = lags.iter().map(|l| (l / cfg.spacing).round() as usize).collect();
    let per_rep = replicate_map(&sampler, seed, cfg.replicates, |_, fs| {
        Ok(lag_cells
            .iter()
            .map(|&k| {
                let (mut s, mut n) = (0.0, 0usize);
                for i in 0..shape.len() {
                    let p = shape.coords(i);
                    if p[0] + k < shape.dims[0] {
                        s += fs.values[i] * fs.at([p[0] + k, p[1], p[2]]);
                        n += 1;
                    }
                }
                s / n as f64
            })
            .collect::<Vec<f64>>())
    })?;
    let mut rows = Vec::new();
    let mut report = Vec::new();
    for (j, &l) in lags.iter().enumerate() {
        let v: Vec<f64> = per_rep.iter().map(|r| r[j]).collect();
        let e = mean_estimate(&v);
        let mut x = vec![0.0; model.dim()];
        x[0] = lag_cells[j] as f64 * cfg.spacing;
        let oracle = model.eval(&x);
        rows.push(CsvRow::from_estimate(l, "covariance", &e));
        rows.push(CsvRow::new(l, "covariance_oracle", oracle, nan()));
        report.push(serde_json::json!({ "lag": l, "estimate": e, "oracle": oracle }));
    }
    rows.push(CsvRow::new(0.0, "clipped_mass", sampler.clipped_mass(), nan()));
    let mut dump = Vec::new();
    sampler.sample(seed, 0).write_dump(&mut dump)?;
    let mut out = SuiteOutput::new(rows, report)?;
    out.warnings = clipping_warning(&sampler);
    out.extra.push(("field.bin".into(), dump));
    Ok(out)
}

fn run_functional(cfg: &ExperimentConfig, seed: u64) -> Result<SuiteOutput> {
    let model = cfg.covariance_model()?;
    let spec = cfg.functional_spec()?;
    let grid = SuiteGrid { spacing: cfg.spacing, buffer: cfg.buffer };
    let samples = functional_samples(&model, &spec, &cfg.scales, cfg.replicates, grid, seed)?;
    let lln = lln_from(&samples);
    let mut rows: Vec<CsvRow> = lln.rows.iter().map(|r| CsvRow::from_estimate(r.scale, "mean_density", &r.estimate)).collect();
    if samples.replicates() >= 2 {
        rows.extend(variance_from(&samples)?.csv_rows());
    }

    // Per-replicate structural checks on the largest box.
    let r_max = *cfg.scales.last().expect("validated");
    let gs = GridSpec::new(model.dim(), r_max, cfg.spacing, cfg.buffer)?;
    let sampler = FieldSampler::new(&model, &gs)?;
    let outer = gs.centered_box(r_max)?;
    let is_ec = matches!(spec.functional, FunctionalKind::EulerCharacteristic);
    let checks = replicate_map(&sampler, seed, cfg.replicates, |_, fs| {
        let phi = evaluate(fs, &spec, &outer)?;
        let n_crit = critical_census(fs, &outer)?.total_multiplicity() as f64;
        let bound_ok = phi.abs() <= spec.lipschitz_norm() * n_crit;
        let identity = match (cfg.mesoscales, spec.is_component_sum()) {
            (Some(m), true) => Some(multiscale_decompose(fs, &spec, r_max, m.r, m.a)?.identity_holds()),
            _ => None,
        };
        let interior = if is_ec {
            Some(euler_split(&extract_excursion(fs, &spec), &outer)?.interior_corrected())
        } else {
            None
        };
        Ok((bound_ok, identity, interior))
    })?;
    let n = checks.len() as f64;
    rows.push(CsvRow::new(r_max, "lipschitz_bound_fraction", checks.iter().filter(|c| c.0).count() as f64 / n, nan()));
    if cfg.mesoscales.is_some() && spec.is_component_sum() {
        let ok = checks.iter().filter(|c| c.1 == Some(true)).count() as f64 / n;
        rows.push(CsvRow::new(r_max, "partition_identity_fraction", ok, nan()));
    }
    if is_ec && spec.set == SetType::Excursion {
        let v: Vec<f64> = checks.iter().map(|c| c.2.unwrap() / r_max.powi(model.dim() as i32)).collect();
        rows.push(CsvRow::from_estimate(r_max, "ec_interior_density", &mean_estimate(&v)));
        rows.push(CsvRow::new(r_max, "gkf_oracle", gkf_euler_density(&model, spec.level), nan()));
    }
    let mut out = SuiteOutput::new(rows, &lln)?;
    out.plot = vec!["mean_density"];
    out.warnings = clipping_warning(&sampler);
    Ok(out)
}

fn run_scale_suite(cfg: &ExperimentConfig, suite: Suite, seed: u64) -> Result<SuiteOutput> {
    let model = cfg.covariance_model()?;
    let spec = cfg.functional_spec()?;
    let grid = SuiteGrid { spacing: cfg.spacing, buffer: cfg.buffer };
    let samples = functional_samples(&model, &spec, &cfg.scales, cfg.replicates, grid, seed)?;
    match suite {
        Suite::Lln => {
            let r = lln_from(&samples);
            let mut out = SuiteOutput::new(r.csv_rows(), &r)?;
            out.plot = vec!["mean_density"];
            Ok(out)
        }
        Suite::Var => {
            let r = variance_from(&samples)?;
            let mut rows = r.csv_rows();
            let mut warnings = Vec::new();
            let mut pivotal = None;
            if let Some(p) = &cfg.pivotal {
                let s = estimate_sigma2(&model, p, derive_seed(seed, label::PIVOTAL))?;
                rows.extend(sigma2_rows(&s, *cfg.scales.last().unwrap()));
                warnings = sigma2_warnings(&s);
                pivotal = Some(s);
            }
            let mut out = SuiteOutput::new(rows, serde_json::json!({ "variance": r, "pivotal": pivotal }))?;
            out.plot = vec!["variance_density"];
            out.warnings = warnings;
            Ok(out)
        }
        _ => {
            let r = clt_from(&samples, derive_seed(seed, label::BOOTSTRAP))?;
            let mut rows = r.csv_rows();
            rows.push(CsvRow::new(*cfg.scales.last().unwrap(), "ks_critical_1pct", r.ks_critical_1pct, nan()));
            let mut out = SuiteOutput::new(rows, &r)?;
            out.plot = vec!["d_kol"];
            Ok(out)
        }
    }
}

fn run_asclt(cfg: &ExperimentConfig, seed: u64) -> Result<SuiteOutput> {
    let model = cfg.covariance_model()?;
    let spec = cfg.functional_spec()?;
    let s = cfg.asclt.as_ref().expect("validated");
    let acfg = AscltConfig { r_max: s.r_max, spacing: cfg.spacing, calibration: s.calibration };
    let cal = asclt_calibrate(&model, &spec, &acfg, derive_seed(seed, label::CALIBRATION))?;
    let mut rows = vec![CsvRow::new(s.r_max, "sigma2", cal.sigma2, nan())];
    let mut reports = Vec::new();
    for i in 0..s.runs {
        let run_seed = derive_seed(derive_seed(seed, label::RUNS), i as u64);
        let r = asclt_statistic(&model, &spec, &acfg, &cal, &s.maps, run_seed)?;
        for (j, row) in r.rows.iter().enumerate() {
            rows.push(CsvRow::new(i as f64, &format!("log_average_{j}"), row.statistic, nan()));
            rows.push(CsvRow::new(i as f64, &format!("target_{j}"), row.target, nan()));
        }
        reports.push(r);
    }
    SuiteOutput::new(rows, serde_json::json!({ "calibration": cal, "runs": reports }))
}

fn run_arm(cfg: &ExperimentConfig, seed: u64) -> Result<SuiteOutput> {
    let model = cfg.covariance_model()?;
    let level = cfg.level.or(cfg.functional.as_ref().map(|f| f.level)).expect("validated");
    let r = arm_decay_curve(&model, level, &cfg.scales, cfg.replicates, cfg.spacing, seed)?;
    let mut out = SuiteOutput::new(r.csv_rows(), &r)?;
    out.plot = vec!["one_arm", "truncated_arm"];
    Ok(out)
}

fn run_sigma2(cfg: &ExperimentConfig, seed: u64) -> Result<SuiteOutput> {
    let model = cfg.covariance_model()?;
    let p = cfg.pivotal.as_ref().expect("validated");
    let r = estimate_sigma2(&model, p, seed)?;
    let mut out = SuiteOutput::new(sigma2_rows(&r, 0.0), &r)?;
    out.warnings = sigma2_warnings(&r);
    Ok(out)
}

fn run_volume(cfg: &ExperimentConfig, seed: u64) -> Result<SuiteOutput> {
    let model = cfg.covariance_model()?;
    let v = cfg.volume.as_ref().expect("validated");
    let r = volume_suite(&model, v, seed)?;
    let mut rows = r.csv_rows();
    rows.push(CsvRow::new(0.0, "lil_fraction_within", r.lil_fraction_within(), nan()));
    rows.push(CsvRow::new(0.0, "lil_band", r.lil_band, nan()));
    rows.push(CsvRow::new(0.0, "negative_v_pairs", r.negative_pairs as f64, nan()));
    rows.push(CsvRow::new(0.0, "continuity_excess", r.continuity_excess, nan()));
    let mut out = SuiteOutput::new(rows, &r)?;
    out.warnings = r.warnings.clone();
    if r.non_positive_covariance {
        out.warnings.push(format!("NonPositiveCovariance: {} V-pairs below -3 SE", r.negative_pairs));
    }
    out.plot = vec!["variance_density", "d_kol"];
    Ok(out)
}

fn run_quasi(cfg: &ExperimentConfig, seed: u64) -> Result<SuiteOutput> {
    let model = cfg.covariance_model()?;
    let q = cfg.quasi.as_ref().expect("validated");
    let r = quasi_association_check(&model, q, seed)?;
    let mut rows = Vec::new();
    for x in &r {
        rows.push(CsvRow::new(x.separation, "covariance", x.covariance, ci(x.covariance, x.se)));
        rows.push(CsvRow::new(x.separation, "bound", x.bound, nan()));
        rows.push(CsvRow::new(x.separation, "ratio", x.ratio, nan()));
    }
    SuiteOutput::new(rows, &r)
}

/// Worker count: explicit value, else `EXCURSION_LAB_WORKERS`, else the config, else available cores.
pub fn resolve_workers(flag: Option<usize>, cfg: &ExperimentConfig) -> usize {
    flag.or_else(|| std::env::var("EXCURSION_LAB_WORKERS").ok().and_then(|v| v.parse().ok()))
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Runs the configured suite and writes its outputs into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<RunManifest> {
    cfg.validate()?;
    let suite = cfg.suite()?;
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    let seed = cfg.seed;
    let out = pool.install(|| match suite {
        Suite::Sample => run_sample(cfg, seed),
        Suite::Functional => run_functional(cfg, seed),
        Suite::Lln | Suite::Var | Suite::Clt | Suite::QcltRate => run_scale_suite(cfg, suite, seed),
        Suite::Asclt => run_asclt(cfg, seed),
        Suite::Arm => run_arm(cfg, seed),
        Suite::Sigma2 => run_sigma2(cfg, seed),
        Suite::Volume => run_volume(cfg, seed),
        Suite::Quasi => run_quasi(cfg, seed),
    })?;

    let name = suite.name();
    let mut outputs = BTreeMap::new();
    let csv_name = format!("{name}.csv");
    write_csv(&out_dir.join(&csv_name), &out.rows)?;
    let csv_bytes = std::fs::read(out_dir.join(&csv_name))?;
    outputs.insert("csv".to_string(), PathBuf::from(&csv_name));
    let json_name = format!("{name}.json");
    std::fs::write(out_dir.join(&json_name), serde_json::to_vec_pretty(&out.report)?)?;
    outputs.insert("report".to_string(), PathBuf::from(json_name));
    if cfg.plots && !out.plot.is_empty() {
        if let Some(svg) = svg_plot(name, &out.rows, &out.plot) {
            let svg_name = format!("{name}.svg");
            std::fs::write(out_dir.join(&svg_name), svg)?;
            outputs.insert("plot".to_string(), PathBuf::from(svg_name));
        }
    }
    for (file, bytes) in &out.extra {
        std::fs::write(out_dir.join(file), bytes)?;
        outputs.insert(file.clone(), PathBuf::from(file));
    }
    let mut warnings = out.warnings;
    if suite == Suite::Volume && cfg.volume.as_ref().is_some_and(|v| v.level >= 0.0) {
        // Already reported by the suite; keep a single copy.
        warnings.dedup();
    }
    let mut config = cfg.clone();
    config.out = Some(out_dir.to_path_buf());
    let manifest = RunManifest {
        suite: name.to_string(),
        config_hash: cfg.hash(),
        content_version: content_version(&csv_bytes),
        config,
        seed,
        workers,
        outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
        module_versions: RunManifest::module_versions(),
        warnings,
    };
    std::fs::write(out_dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
