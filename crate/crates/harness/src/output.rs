//! CSV tables, SVG plots and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use excursion_core::stats::CsvRow;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::Result;

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>()?)
}

/// Content hash in the style of a git blob id, over SHA-256.
pub fn content_version(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// One line per statistic, value against scale; log-log axes when every point is positive.
pub fn svg_plot(title: &str, rows: &[CsvRow], statistics: &[&str]) -> Option<String> {
    let series: Vec<(&str, Vec<(f64, f64)>)> = statistics
        .iter()
        .map(|s| {
            let pts = rows
                .iter()
                .filter(|r| r.statistic == *s && r.value.is_finite() && r.scale.is_finite())
                .map(|r| (r.scale, r.value))
                .collect::<Vec<_>>();
            (*s, pts)
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if series.is_empty() {
        return None;
    }
    let log = series.iter().all(|(_, p)| p.iter().all(|&(x, y)| x > 0.0 && y > 0.0));
    let tf = |v: f64| if log { v.log10() } else { v };
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().map(|&(x, y)| (tf(x), tf(y)))).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let (w, h, m) = (640.0, 400.0, 50.0);
    let px = |x: f64| m + (tf(x) - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (tf(y) - y0) / (y1 - y0) * (h - 2.0 * m);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{m}" y="24" font-family="sans-serif" font-size="14">{title}{}</text>"#, if log { " (log-log)" } else { "" });
    let _ = writeln!(
        s,
        r#"<polyline points="{m},{m} {m},{b} {r},{b}" fill="none" stroke="black"/>"#,
        b = h - m,
        r = w - m
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let p: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, p.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, px(x), py(y));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{c}">{name}</text>"#,
            w - m - 120.0,
            m + 16.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub suite: String,
    pub config_hash: String,
    /// Blob-style hash of the CSV table.
    pub content_version: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub workers: usize,
    /// Output name to path relative to the manifest.
    pub outputs: BTreeMap<String, PathBuf>,
    pub wall_time_s: f64,
    pub module_versions: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn module_versions() -> BTreeMap<String, String> {
        BTreeMap::from([
            ("excursion-core".to_string(), excursion_core::VERSION.to_string()),
            ("excursion-lab".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ])
    }
}
