use std::path::Path;

use excursion_core::stats::CsvRow;
use excursion_lab::output::{read_csv, write_csv};
use excursion_lab::{check, run, ExperimentConfig, HarnessError, MANIFEST};
use proptest::prelude::*;

fn config(json: &str) -> ExperimentConfig {
    serde_json::from_str(json).unwrap()
}

fn sample_config() -> ExperimentConfig {
    config(
        r#"{"suite":"sample","model":{"family":"BargmannFock","d":2},
            "scales":[16.0],"spacing":0.25,"replicates":40,"seed":7}"#,
    )
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn sample_rerun_is_byte_identical() {
    let cfg = sample_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run(&cfg, a.path(), 2).unwrap();
    let mb = run(&cfg, b.path(), 2).unwrap();
    for f in ["sample.csv", "field.bin", "sample.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    assert_eq!(ma.content_version, mb.content_version);
    assert_eq!(ma.config_hash, mb.config_hash);
    assert!(ma.outputs.contains_key("field.bin"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let cfg = sample_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&cfg, a.path(), 1).unwrap();
    run(&cfg, b.path(), 3).unwrap();
    assert_eq!(read(a.path(), "sample.csv"), read(b.path(), "sample.csv"));
}

#[test]
fn fresh_sample_manifest_checks_covariance() {
    let dir = tempfile::tempdir().unwrap();
    run(&sample_config(), dir.path(), 2).unwrap();
    let v = check(&dir.path().join(MANIFEST)).unwrap();
    assert_eq!(v.suite, "sample");
    assert_eq!(v.criteria.len(), 3);
    assert!(v.criteria.iter().all(|c| c.name.starts_with("sampler_covariance")));
    let text = serde_json::to_string(&v).unwrap();
    let back: excursion_lab::Verdict = serde_json::from_str(&text).unwrap();
    assert_eq!(back, v);
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}

#[test]
fn tampered_csv_fails_named_criterion() {
    let dir = tempfile::tempdir().unwrap();
    run(&sample_config(), dir.path(), 2).unwrap();
    let path = dir.path().join("sample.csv");
    let mut rows: Vec<CsvRow> = read_csv(&path).unwrap();
    let i = rows.iter().position(|r| r.statistic == "covariance" && r.scale == 1.0).unwrap();
    let se = (rows[i].ci_hi - rows[i].ci_lo) / (2.0 * 1.959963984540054);
    rows[i].value += 10.0 * se;
    write_csv(&path, &rows).unwrap();
    let v = check(&dir.path().join(MANIFEST)).unwrap();
    assert!(!v.passed);
    let failed: Vec<&str> = v.failed().map(|c| c.name.as_str()).collect();
    assert_eq!(failed, ["sampler_covariance_lag_1"]);
}

#[test]
fn missing_outputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    run(&sample_config(), dir.path(), 1).unwrap();
    std::fs::remove_file(dir.path().join("sample.csv")).unwrap();
    match check(&dir.path().join(MANIFEST)) {
        Err(HarnessError::MissingOutputs(v)) => assert!(v[0].ends_with("sample.csv")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_scales_rejected_before_sampling() {
    let cfg = config(
        r#"{"suite":"clt","model":{"family":"BargmannFock","d":2},
            "functional":{"set":"excursion","level":0.0,"functional":{"kind":"count"}},
            "scales":[12.0],"mesoscales":{"r":4.0,"a":1.0},"replicates":1000}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    match run(&cfg, &dir.path().join("out"), 1) {
        Err(HarnessError::ConfigInvalid(m)) => assert!(m.contains("R/(r+4a)") && m.contains("not even"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_fields_rejected() {
    let r: Result<ExperimentConfig, _> =
        serde_json::from_str(r#"{"suite":"sample","model":{"family":"BargmannFock","d":2},"bogus":1}"#);
    assert!(r.is_err());
}

#[test]
fn volume_above_critical_level_warns() {
    let cfg = config(
        r#"{"suite":"volume","model":{"family":"BargmannFock","d":2},"seed":3,
            "volume":{"level":1.0,"scales":[8.0,16.0],"lil_scales":[8.0,16.0],"replicates":6,"lil_runs":4,
                      "spacing":0.25,"buffer":6.0,"lag_max":2.0,"base_window":4.0,"cox_window":4.0,"cox_k":[2,4]}}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let m = run(&cfg, dir.path(), 2).unwrap();
    assert!(m.warnings.iter().any(|w| w.contains("level outside")), "{:?}", m.warnings);
    let on_disk: serde_json::Value = serde_json::from_slice(&read(dir.path(), MANIFEST)).unwrap();
    assert!(on_disk["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("level outside")));
}

#[test]
fn manifest_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = run(&sample_config(), dir.path(), 1).unwrap();
    let mut cfg = m.config.clone();
    cfg.out = None;
    assert_eq!(cfg.hash(), m.config_hash);
    let again = tempfile::tempdir().unwrap();
    let m2 = run(&cfg, again.path(), 1).unwrap();
    assert_eq!(m2.content_version, m.content_version);
}

fn scale_config(big: f64, r: f64, a: f64) -> ExperimentConfig {
    let mut c = config(
        r#"{"suite":"lln","model":{"family":"BargmannFock","d":2},
            "functional":{"set":"excursion","level":0.0,"functional":{"kind":"count"}},
            "scales":[16.0],"replicates":2}"#,
    );
    c.scales = vec![big];
    c.mesoscales = Some(excursion_lab::config::MesoScales { r, a });
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scale_matrix_matches_constraints(a in 1u32..4, ra in 1u32..7, m in 1u32..7) {
        let (a, r) = (a as f64, (a * ra) as f64);
        let big = m as f64 * (r + 4.0 * a);
        let conforming = ra % 2 == 0 && m % 2 == 0;
        let ok = scale_config(big, r, a).validate().is_ok();
        prop_assert_eq!(ok, conforming, "R={} r={} a={}", big, r, a);
    }
}
