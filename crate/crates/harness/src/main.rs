use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use excursion_lab::{check, resolve_workers, run, ExperimentConfig, Suite, MANIFEST};

#[derive(Parser)]
#[command(name = "excursion-lab", version, about = "Run excursion-set experiment suites")]
struct Cli {
    suite: Suite,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides EXCURSION_LAB_WORKERS and the config.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate acceptance criteria after the run.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    cfg.suite = Some(cli.suite);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(cli.suite.name()));
    let workers = resolve_workers(cli.workers, &cfg);
    let manifest = match run(&cfg, &out, workers) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", out.join(MANIFEST).display());
    if !cli.check {
        return ExitCode::SUCCESS;
    }
    match check(&out.join(MANIFEST)) {
        Ok(v) => {
            for c in &v.criteria {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let path = out.join("verdict.json");
            if let Err(e) = serde_json::to_vec_pretty(&v).map_err(std::io::Error::other).and_then(|b| std::fs::write(&path, b)) {
                eprintln!("error: {e}");
            }
            if v.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
