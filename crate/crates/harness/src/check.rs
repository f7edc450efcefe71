//! Post-run verdicts computed from a manifest and the CSV it points to.

use std::path::Path;

use excursion_core::stats::dist::Z95;
use excursion_core::stats::CsvRow;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::output::{read_csv, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub suite: String,
    pub criteria: Vec<CriterionVerdict>,
    pub passed: bool,
}

impl Verdict {
    fn new(suite: &str, criteria: Vec<CriterionVerdict>) -> Self {
        let passed = criteria.iter().all(|c| c.passed);
        Verdict { suite: suite.to_string(), criteria, passed }
    }

    pub fn failed(&self) -> impl Iterator<Item = &CriterionVerdict> {
        self.criteria.iter().filter(|c| !c.passed)
    }
}

fn verdict(name: &str, passed: bool, detail: String) -> CriterionVerdict {
    CriterionVerdict { name: name.to_string(), passed, detail }
}

/// Standard error recovered from a symmetric 95% interval.
fn se(r: &CsvRow) -> f64 {
    (r.ci_hi - r.ci_lo) / (2.0 * Z95)
}

fn rows<'a>(all: &'a [CsvRow], stat: &str) -> Vec<&'a CsvRow> {
    let mut v: Vec<&CsvRow> = all.iter().filter(|r| r.statistic == stat).collect();
    v.sort_by(|a, b| a.scale.total_cmp(&b.scale));
    v
}

fn single(all: &[CsvRow], stat: &str) -> Option<f64> {
    all.iter().find(|r| r.statistic == stat).map(|r| r.value)
}

fn missing(name: &str, stat: &str) -> CriterionVerdict {
    verdict(name, false, format!("no '{stat}' rows in output"))
}

fn check_sample(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let est = rows(all, "covariance");
    let oracle = rows(all, "covariance_oracle");
    if est.is_empty() || est.len() != oracle.len() {
        return vec![missing("sampler_covariance", "covariance")];
    }
    est.iter()
        .zip(&oracle)
        .map(|(e, o)| {
            let z = (e.value - o.value).abs() / se(e);
            verdict(
                &format!("sampler_covariance_lag_{}", e.scale),
                z <= 4.0,
                format!("estimate {:.6} oracle {:.6} |z| {:.2} (limit 4)", e.value, o.value, z),
            )
        })
        .collect()
}

fn check_functional(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let mut out = Vec::new();
    if let Some(f) = single(all, "lipschitz_bound_fraction") {
        out.push(verdict("pathwise_bound", f == 1.0, format!("fraction satisfying bound {f}")));
    }
    if let Some(f) = single(all, "partition_identity_fraction") {
        out.push(verdict("partition_identity", f == 1.0, format!("fraction exact {f}")));
    }
    if let (Some(e), Some(o)) = (single(all, "ec_interior_density"), single(all, "gkf_oracle")) {
        let rel = (e - o).abs() / o.abs();
        out.push(verdict("euler_density", rel <= 0.1, format!("estimate {e:.6} oracle {o:.6} relative error {rel:.3}")));
    }
    if out.is_empty() {
        out.push(missing("functional", "lipschitz_bound_fraction"));
    }
    out
}

fn check_lln(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let means = rows(all, "mean_density");
    if means.len() < 2 {
        return vec![missing("lln", "mean_density")];
    }
    let diffs: Vec<f64> = means.windows(2).map(|w| (w[1].value - w[0].value).abs()).collect();
    let decreasing = diffs.windows(2).all(|w| w[1] < w[0]);
    let (a, b) = (means[means.len() - 2], means[means.len() - 1]);
    let overlap = a.ci_lo <= b.ci_hi && b.ci_lo <= a.ci_hi;
    vec![
        verdict("lln_differences_decreasing", decreasing, format!("successive differences {diffs:?}")),
        verdict(
            "lln_ci_overlap",
            overlap,
            format!("R={} [{:.6}, {:.6}] vs R={} [{:.6}, {:.6}]", a.scale, a.ci_lo, a.ci_hi, b.scale, b.ci_lo, b.ci_hi),
        ),
    ]
}

fn check_var(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let var = rows(all, "variance_density");
    let Some(v) = var.last() else {
        return vec![missing("variance", "variance_density")];
    };
    let mut out = vec![verdict(
        "variance_finite",
        var.iter().all(|r| r.value.is_finite() && r.value >= 0.0),
        format!("{} scales", var.len()),
    )];
    if let Some(p) = all.iter().find(|r| r.statistic == "pivotal_sigma2") {
        let combined = (se(v).powi(2) + se(p).powi(2)).sqrt();
        let diff = (v.value - p.value).abs();
        out.push(verdict(
            "variance_pivotal_agreement",
            diff <= 5.0 * combined,
            format!("Var/R {:.6} pivotal {:.6} diff {:.6} limit {:.6}", v.value, p.value, diff, 5.0 * combined),
        ));
    }
    out
}

fn check_clt(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let d = rows(all, "d_kol");
    let (Some(first), Some(last)) = (d.first(), d.last()) else {
        return vec![missing("clt", "d_kol")];
    };
    let mut out = vec![verdict(
        "clt_dkol_decreasing",
        d.len() >= 2 && last.ci_hi < first.ci_lo,
        format!("R={} {:.4} [{:.4}, {:.4}] vs R={} {:.4} [{:.4}, {:.4}]", first.scale, first.value, first.ci_lo, first.ci_hi, last.scale, last.value, last.ci_lo, last.ci_hi),
    )];
    match single(all, "ks_critical_1pct") {
        Some(c) => out.push(verdict("clt_ks_band", last.value < c, format!("d_Kol {:.4} critical {:.4}", last.value, c))),
        None => out.push(missing("clt_ks_band", "ks_critical_1pct")),
    }
    match all.iter().find(|r| r.statistic == "eta") {
        Some(e) => out.push(verdict(
            "clt_eta_positive",
            e.value > 0.0 && e.ci_lo > 0.0,
            format!("eta {:.3} [{:.3}, {:.3}]", e.value, e.ci_lo, e.ci_hi),
        )),
        None => out.push(missing("clt_eta_positive", "eta")),
    }
    out
}

fn check_asclt(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let stats = rows(all, "log_average_0");
    let targets = rows(all, "target_0");
    if stats.is_empty() || stats.len() != targets.len() {
        return vec![missing("asclt", "log_average_0")];
    }
    let within = stats.iter().zip(&targets).filter(|(s, t)| (s.value - t.value).abs() <= 0.15).count();
    let needed = (0.8 * stats.len() as f64).ceil() as usize;
    vec![verdict("asclt_log_average", within >= needed, format!("{within} of {} runs within 0.15", stats.len()))]
}

fn check_arm(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let p = rows(all, "one_arm");
    let (Some(a), Some(b)) = (p.first(), p.last()) else {
        return vec![missing("arm", "one_arm")];
    };
    vec![
        verdict("arm_decay", p.len() >= 2 && b.value < 0.5 * a.value, format!("P(R={})={:.4} P(R={})={:.4}", a.scale, a.value, b.scale, b.value)),
        verdict(
            "arm_ci_disjoint",
            b.ci_hi < a.ci_lo,
            format!("[{:.4}, {:.4}] vs [{:.4}, {:.4}]", a.ci_lo, a.ci_hi, b.ci_lo, b.ci_hi),
        ),
    ]
}

fn check_sigma2(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    match all.iter().find(|r| r.statistic == "pivotal_sigma2") {
        Some(p) => vec![verdict(
            "sigma2_finite",
            p.value.is_finite() && p.value >= 0.0 && se(p).is_finite(),
            format!("sigma2 {:.6} se {:.6}", p.value, se(p)),
        )],
        None => vec![missing("sigma2", "pivotal_sigma2")],
    }
}

fn check_volume(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let mut out = Vec::new();
    let lags = rows(all, "lag_covariance");
    let worst = lags.iter().map(|r| r.value / se(r)).filter(|z| z.is_finite()).fold(f64::INFINITY, f64::min);
    out.push(verdict("volume_association", !lags.is_empty() && worst >= -3.0, format!("smallest covariance z {worst:.2}")));
    match (single(all, "cov_zero"), single(all, "bernoulli_variance")) {
        (Some(c), Some(b)) => out.push(verdict("volume_bernoulli_identity", c == b, format!("cov {c} theta(1-theta) {b}"))),
        _ => out.push(missing("volume_bernoulli_identity", "cov_zero")),
    }
    let d = rows(all, "d_kol");
    match (d.first(), d.last()) {
        (Some(a), Some(b)) if d.len() >= 2 => out.push(verdict(
            "volume_dkol_decreasing",
            b.value < a.value,
            format!("R={} {:.4} vs R={} {:.4}", a.scale, a.value, b.scale, b.value),
        )),
        _ => out.push(missing("volume_dkol_decreasing", "d_kol")),
    }
    match single(all, "lil_fraction_within") {
        Some(f) => out.push(verdict("volume_lil_band", f >= 0.95, format!("fraction of runs within band {f:.3}"))),
        None => out.push(missing("volume_lil_band", "lil_fraction_within")),
    }
    let u = rows(all, "cox_grimmett_u");
    let nonincreasing = u.windows(2).all(|w| w[1].value <= w[0].value || w[1].ci_lo <= w[0].ci_hi);
    out.push(verdict(
        "volume_cox_grimmett",
        !u.is_empty() && nonincreasing,
        format!("u(k) {:?}", u.iter().map(|r| r.value).collect::<Vec<_>>()),
    ));
    out
}

fn check_quasi(all: &[CsvRow]) -> Vec<CriterionVerdict> {
    let ratio = rows(all, "ratio");
    let cov = rows(all, "covariance");
    let bound = rows(all, "bound");
    if ratio.is_empty() || cov.len() != ratio.len() || bound.len() != ratio.len() {
        return vec![missing("quasi", "ratio")];
    }
    let r0 = ratio[0].value;
    let bounded = ratio.iter().all(|r| r.value.is_finite() && r.value <= 10.0 * r0);
    let cov_decay = cov.first().unwrap().value.abs() > cov.last().unwrap().value.abs();
    let bound_decay = bound.windows(2).all(|w| w[1].value < w[0].value);
    vec![
        verdict("quasi_ratio_bounded", bounded, format!("ratios {:?}", ratio.iter().map(|r| r.value).collect::<Vec<_>>())),
        verdict(
            "quasi_decay",
            cov_decay && bound_decay,
            format!(
                "|cov| {:?} bound {:?}",
                cov.iter().map(|r| r.value.abs()).collect::<Vec<_>>(),
                bound.iter().map(|r| r.value).collect::<Vec<_>>()
            ),
        ),
    ]
}

/// Evaluates the criteria that apply to `rows` produced by `suite`.
pub fn check_rows(suite: &str, all: &[CsvRow]) -> Verdict {
    let criteria = match suite {
        "sample" => check_sample(all),
        "functional" => check_functional(all),
        "lln" => check_lln(all),
        "var" => check_var(all),
        "clt" | "qclt-rate" => check_clt(all),
        "asclt" => check_asclt(all),
        "arm" => check_arm(all),
        "sigma2" => check_sigma2(all),
        "volume" => check_volume(all),
        "quasi" => check_quasi(all),
        other => vec![verdict("suite", false, format!("unknown suite '{other}'"))],
    };
    Verdict::new(suite, criteria)
}

/// Loads a manifest, reads its CSV and evaluates the suite's criteria.
pub fn check(manifest_path: &Path) -> Result<Verdict> {
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let absent: Vec<String> = manifest
        .outputs
        .values()
        .map(|p| dir.join(p))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !absent.is_empty() {
        return Err(HarnessError::MissingOutputs(absent));
    }
    let csv = manifest.outputs.get("csv").ok_or_else(|| HarnessError::MissingOutputs(vec!["csv".into()]))?;
    let all = read_csv(&dir.join(csv))?;
    Ok(check_rows(&manifest.suite, &all))
}
