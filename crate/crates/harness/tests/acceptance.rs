//! One line per acceptance criterion. Set `ACCEPTANCE_STRICT=1` to turn any FAIL into a test failure.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use excursion_core::pivotal::{covariance_determinant, ConditionedSampler, DEFAULT_KAPPA_MAX};
use excursion_core::rng::derive_seed;
use excursion_core::stats::suites::replicate_map;
use excursion_core::stats::dist::mean_estimate;
use excursion_core::stats::gkf_euler_density;
use excursion_core::topology::{
    critical_census, euler_characteristic_cubical, euler_split, evaluate, extract_excursion, multiscale_decompose,
    BinaryGrid, FunctionalSpec,
};
use excursion_core::{CellBox, CovarianceModel, FieldSampler, GridSpec};
use excursion_lab::{check, run, ExperimentConfig, MANIFEST};

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: usize, name: &str, started: Instant, o: &Outcome) {
    let line = format!(
        "criterion {id:>2} {} {name} ({:.0} s): {}\n",
        if o.passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        o.detail
    );
    // Bypass libtest capture so the lines appear in plain `cargo test` output.
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

/// Runs a suite through the harness and evaluates its verdict.
fn suite(json: &str, dir: &Path) -> Outcome {
    let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    run(&cfg, dir, workers).unwrap();
    let v = check(&dir.join(MANIFEST)).unwrap();
    let detail = v
        .criteria
        .iter()
        .map(|c| format!("[{} {}: {}]", if c.passed { "ok" } else { "x" }, c.name, c.detail))
        .collect::<Vec<_>>()
        .join(" ");
    Outcome { passed: v.passed, detail }
}

fn euler_oracle() -> Outcome {
    let model = CovarianceModel::bargmann_fock(2);
    let grid = GridSpec::new(2, 64.0, 0.25, 0.0).unwrap();
    let sampler = FieldSampler::new(&model, &grid).unwrap();
    let d = grid.centered_box(64.0).unwrap();
    let spec = FunctionalSpec::euler(1.0);
    let v = replicate_map(&sampler, 2002, 500, |_, fs| {
        Ok(euler_split(&extract_excursion(fs, &spec), &d)?.interior_corrected() / (64.0 * 64.0))
    })
    .unwrap();
    let e = mean_estimate(&v);
    let oracle = gkf_euler_density(&model, 1.0);
    let rel = (e.value - oracle).abs() / oracle;
    Outcome { passed: rel <= 0.1, detail: format!("density {:.5} ± {:.5}, oracle {oracle:.5}, rel {rel:.3}", e.value, e.se) }
}

/// `χ(X_{D1} ∩ X_{D2})` on the shared face `axis = cut` of two planar boxes.
fn interface_euler(g: &BinaryGrid, lo: [usize; 3], hi: [usize; 3], axis: usize, cut: usize) -> i64 {
    let other = 1 - axis;
    let m = hi[other] - lo[other];
    let mut chi = 0;
    for c in 0..=2 * m {
        let span: Vec<usize> = if c % 2 == 1 {
            vec![(c - 1) / 2]
        } else {
            (c / 2).checked_sub(1).into_iter().chain((c / 2 < m).then_some(c / 2)).collect()
        };
        let side = |layer: usize| {
            span.iter().any(|&i| {
                let mut p = [0; 3];
                p[axis] = layer;
                p[other] = lo[other] + i;
                g.get(p)
            })
        };
        if side(cut - 1) && side(cut) {
            chi += if c % 2 == 0 { 1 } else { -1 };
        }
    }
    chi
}

fn exact_identities() -> Outcome {
    let model = CovarianceModel::bargmann_fock(2);
    let spec = FunctionalSpec::count(0.0);
    let mut failures = 0;
    let mut samples = 0;
    for (k, (big, r, a)) in [(12.0, 2.0, 1.0), (32.0, 4.0, 1.0), (24.0, 8.0, 1.0)].into_iter().enumerate() {
        let grid = GridSpec::new(2, big, 0.25, 2.0).unwrap();
        let sampler = FieldSampler::new(&model, &grid).unwrap();
        let n = if k < 2 { 67 } else { 66 };
        let ok = replicate_map(&sampler, derive_seed(3003, k as u64), n, |_, fs| {
            Ok(multiscale_decompose(fs, &spec, big, r, a)?.identity_holds())
        })
        .unwrap();
        samples += ok.len();
        failures += ok.iter().filter(|&&b| !b).count();
    }

    let grid = GridSpec::new(2, 16.0, 0.25, 0.0).unwrap();
    let sampler = FieldSampler::new(&model, &grid).unwrap();
    let n = grid.cells_per_side();
    let mut chi_fail = 0;
    for i in 0..100u64 {
        let fs = sampler.sample(3004, i);
        let g = extract_excursion(&fs, &FunctionalSpec::euler(0.5));
        let pick = |label: u64, lo: usize, hi: usize| lo + (derive_seed(i, label) % (hi - lo) as u64) as usize;
        let axis = pick(0, 0, 2);
        let (mut lo, mut hi) = ([0; 3], [1; 3]);
        for k in 0..2 {
            lo[k] = pick(1 + k as u64, 0, n / 2 - 2);
            hi[k] = pick(3 + k as u64, n / 2 + 2, n + 1);
        }
        let cut = pick(5, lo[axis] + 1, hi[axis]);
        let (mut hi1, mut lo2) = (hi, lo);
        hi1[axis] = cut;
        lo2[axis] = cut;
        let chi = |lo, hi| euler_characteristic_cubical(&g, &CellBox::new(2, lo, hi)).unwrap();
        if chi(lo, hi) != chi(lo, hi1) + chi(lo2, hi) - interface_euler(&g, lo, hi, axis, cut) {
            chi_fail += 1;
        }
    }
    Outcome {
        passed: failures == 0 && chi_fail == 0,
        detail: format!("partition identity failures {failures}/{samples}; χ additivity failures {chi_fail}/100"),
    }
}

fn pathwise_bound() -> Outcome {
    let model = CovarianceModel::bargmann_fock(2);
    let grid = GridSpec::new(2, 16.0, 0.25, 1.0).unwrap();
    let sampler = FieldSampler::new(&model, &grid).unwrap();
    let d = grid.centered_box(16.0).unwrap();
    let specs = [FunctionalSpec::count(0.5), FunctionalSpec::euler(0.5)];
    let violations = replicate_map(&sampler, 4004, 500, |_, fs| {
        let n = critical_census(fs, &d)?.total_multiplicity() as f64;
        let mut bad = 0usize;
        for s in &specs {
            if evaluate(fs, s, &d)?.abs() > s.lipschitz_norm() * n {
                bad += 1;
            }
        }
        Ok(bad)
    })
    .unwrap();
    let total: usize = violations.iter().sum();
    Outcome { passed: total == 0, detail: format!("{total} violations over 500 samples × 2 functionals") }
}

fn conditioning() -> Outcome {
    let model = CovarianceModel::bargmann_fock(2);
    let mut worst = 0.0f64;
    let mut halving = Vec::new();
    for t in [0.3, 0.7] {
        for r in [2.0, 4.0] {
            let mut norms = [0.0; 2];
            for (slot, h) in [0.25, 0.125].into_iter().enumerate() {
                let grid = GridSpec::new(2, 12.0, h, 0.0).unwrap();
                let sampler = Arc::new(FieldSampler::new(&model, &grid).unwrap());
                let cs = ConditionedSampler::new(&model, sampler, &[r, 0.0], &[0.0, 0.0], t, 1.0, DEFAULT_KAPPA_MAX)
                    .unwrap();
                for rep in 0..100 {
                    let pair = cs.draw(5005, rep).unwrap();
                    for (fs, p) in [(&pair.f, &cs.f_point), (&pair.ft, &cs.ft_point)] {
                        let cell = grid.cell_at(p).unwrap();
                        worst = worst.max((fs.at(cell) - 1.0).abs());
                        let g = fs.gradient(cell);
                        norms[slot] += (g[0] * g[0] + g[1] * g[1]).sqrt() / 200.0;
                    }
                }
            }
            halving.push((t, r, norms[1] / norms[0]));
        }
    }
    let halves = halving.iter().all(|h| h.2 <= 0.5);
    Outcome {
        passed: worst <= 1e-10 && halves,
        detail: format!("max value error {worst:.2e}; gradient norm ratio h/2 : h {halving:?}"),
    }
}

fn determinant_probe() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for dim in [1, 2] {
        let model = CovarianceModel::bargmann_fock(dim);
        for sep in [0.5, 2.0] {
            let mut y = vec![0.0; dim];
            y[0] = sep;
            let dets: Vec<f64> =
                [0.0, 0.5, 0.9, 0.99].iter().map(|&t| covariance_determinant(&model, &y, &vec![0.0; dim], t)).collect();
            ok &= dets.iter().all(|&v| v > 0.0) && dets.windows(2).all(|w| w[1] < w[0]);
            detail.push(format!("d={dim} |y-z|={sep}: {}", dets.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" ")));
        }
    }
    Outcome { passed: ok, detail: detail.join("; ") }
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name);
    let mut results = Vec::new();
    let mut record = |id: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(id, name, t, &o);
        results.push((id, o.passed));
    };

    record(1, "sampler fidelity", &|| {
        suite(
            r#"{"suite":"sample","model":{"family":"BargmannFock","d":2},"scales":[16.0],"spacing":0.25,
                "replicates":2000,"seed":1001}"#,
            &dir("sample"),
        )
    });
    record(2, "euler characteristic oracle", &euler_oracle);
    record(3, "exact identities", &exact_identities);
    record(4, "pathwise bound", &pathwise_bound);
    record(5, "law of large numbers", &|| {
        suite(
            r#"{"suite":"lln","model":{"family":"BargmannFock","d":2},
                "functional":{"set":"excursion","level":0.0,"functional":{"kind":"count"}},
                "scales":[32.0,64.0,128.0],"replicates":500,"spacing":0.25,"seed":1005}"#,
            &dir("lln"),
        )
    });
    record(6, "variance cross-check", &|| {
        suite(
            r#"{"suite":"var","model":{"family":"BargmannFock","d":1},
                "functional":{"set":"excursion","level":1.0,"functional":{"kind":"euler_characteristic"}},
                "scales":[256.0],"replicates":2000,"spacing":0.05,"seed":1006,
                "pivotal":{"replicates":8,"r_stab":13.0}}"#,
            &dir("var"),
        )
    });
    record(7, "central limit theorem", &|| {
        suite(
            r#"{"suite":"clt","model":{"family":"BargmannFock","d":2},
                "functional":{"set":"excursion","level":1.0,"functional":{"kind":"count"}},
                "scales":[24.0,48.0,96.0],"replicates":2000,"spacing":0.25,"seed":1007}"#,
            &dir("clt"),
        )
    });
    record(8, "almost-sure CLT", &|| {
        suite(
            r#"{"suite":"asclt","model":{"family":"BargmannFock","d":2},
                "functional":{"set":"excursion","level":0.0,"functional":{"kind":"count"}},
                "spacing":0.25,"seed":1008,
                "asclt":{"r_max":256.0,"calibration":100,"runs":10,"maps":[{"kind":"abs"}]}}"#,
            &dir("asclt"),
        )
    });
    record(9, "arm decay", &|| {
        suite(
            r#"{"suite":"arm","model":{"family":"BargmannFock","d":2},"level":1.0,
                "scales":[8.0,32.0],"replicates":4000,"spacing":0.25,"seed":1009}"#,
            &dir("arm"),
        )
    });
    record(10, "volume suite", &|| {
        suite(
            r#"{"suite":"volume","model":{"family":"BargmannFock","d":2},"seed":1010,
                "volume":{"level":-1.0,"scales":[32.0,64.0,128.0],"lil_scales":[8.0,16.0,32.0,64.0],
                          "replicates":500,"lil_runs":100,"spacing":0.25,"buffer":6.0,"lag_max":6.0,
                          "base_window":16.0,"cox_window":6.0,"cox_k":[2,4,8]}}"#,
            &dir("volume"),
        )
    });
    record(11, "conditioning", &conditioning);
    record(12, "determinant probe", &determinant_probe);
    record(13, "quasi-association", &|| {
        suite(
            r#"{"suite":"quasi","model":{"family":"BargmannFock","d":2},"seed":1013,
                "quasi":{"functional":{"set":"excursion","level":0.0,"functional":{"kind":"count"}},
                         "box_side":8.0,"separations":[0.0,4.0,8.0,16.0],
                         "f":{"kind":"identity"},"g":{"kind":"identity"},"replicates":4000,"spacing":0.25}}"#,
            &dir("quasi"),
        )
    });

    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    let summary = format!("acceptance: {} of {} criteria pass; failing {failed:?}\n", 13 - failed.len(), 13);
    std::io::stderr().write_all(summary.as_bytes()).unwrap();
    assert_eq!(results.len(), 13);
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        assert!(failed.is_empty(), "{summary}");
    }
}
