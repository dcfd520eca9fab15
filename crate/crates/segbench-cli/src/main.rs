use std::path::PathBuf;

use segbench_cli::{config, report, runner};

use clap::{Parser, Subcommand};

use segbench::datagen::DataKind;
use segbench::gradcheck;
use segbench::metrics::fmt_rate;

#[derive(Parser)]
#[command(
    name = "segbench",
    version,
    about = "Segmentation benchmark: synthetic datasets, four architectures, k-fold evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cross-validated training run from a JSON config
    Run {
        /// JSON config file (missing fields take defaults)
        #[arg(long)]
        config: PathBuf,
        /// Result directory to create
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing result directory
        #[arg(long)]
        force: bool,
        /// Fold workers (default: SEGBENCH_THREADS or 1)
        #[arg(long)]
        threads: Option<usize>,
    },
    /// One cross-validation per SNR level in the config's "snrs" array
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check every autodiff op and architecture against finite differences
    Gradcheck,
    /// Write a synthetic dataset as PGM image/mask pairs
    Gen {
        /// Dataset family: airy, cells, or vessels
        #[arg(long, value_parser = parse_kind)]
        kind: DataKind,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Square image edge in pixels
        #[arg(long, default_value_t = 32)]
        extent: usize,
        /// Additive Gaussian noise level (omit for clean images)
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Re-render summary.md from a result directory's CSV files
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<DataKind, String> {
    DataKind::ALL
        .iter()
        .copied()
        .find(|k| k.name() == s)
        .ok_or_else(|| {
            format!(
                "unknown kind {s:?} (expected one of: {})",
                DataKind::ALL
                    .iter()
                    .map(|k| k.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        })
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("SEGBENCH_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn gradcheck_cmd() -> anyhow::Result<()> {
    let outcomes = gradcheck::suite()?;
    let mut failed = 0;
    for o in &outcomes {
        let status = if o.passed() {
            "PASS"
        } else {
            failed += 1;
            "FAIL"
        };
        println!(
            "{:<20} instances {:>2}  max rel err {:>10.3e}  {status}",
            o.name, o.instances, o.max_rel_err
        );
    }
    println!(
        "gradient check: {}/{} entries within {:.0e}",
        outcomes.len() - failed,
        outcomes.len(),
        gradcheck::GRAD_TOL
    );
    if failed > 0 {
        anyhow::bail!("{failed} gradient check entries failed");
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            config: path,
            out,
            force,
            threads,
        } => {
            let spec = config::load(&path)?;
            let (cv, dir) = runner::run(&spec, &out, force, resolve_threads(threads))?;
            println!("run complete: {}", dir.display());
            println!(
                "pooled: auc {} accuracy {} sensitivity {} specificity {}",
                fmt_rate(Some(cv.pooled_auc)),
                fmt_rate(cv.pooled.accuracy()),
                fmt_rate(cv.pooled.sensitivity()),
                fmt_rate(cv.pooled.specificity()),
            );
        }
        Cmd::Sweep {
            config: path,
            out,
            force,
            threads,
        } => {
            let spec = config::load(&path)?;
            let (rows, dir) = runner::sweep(&spec, &out, force, resolve_threads(threads))?;
            println!("sweep complete: {}", dir.display());
            for r in &rows {
                println!(
                    "snr {:>8}: pooled auc {}",
                    r.snr,
                    fmt_rate(Some(r.pooled_auc))
                );
            }
        }
        Cmd::Gradcheck => gradcheck_cmd()?,
        Cmd::Gen {
            kind,
            count,
            extent,
            snr,
            seed,
            out,
            force,
        } => {
            let dir = runner::gen_dataset(kind, count, extent, snr, seed, &out, force)?;
            println!(
                "wrote {count} {} image/mask pairs to {}",
                kind.name(),
                dir.display()
            );
        }
        Cmd::Report { dir } => {
            let summary = report::report(&dir)?;
            print!("{summary}");
        }
    }
    Ok(())
}
