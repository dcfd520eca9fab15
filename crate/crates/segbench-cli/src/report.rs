//! Re-render `summary.md` from a result directory's machine-readable files.

use std::fs;
use std::path::Path;

use segbench::{Error, Result};

use crate::config;
use crate::runner;

/// Rebuild and rewrite the summary from `config_echo.json` plus the CSVs,
/// returning the rendered text. Works on run and sweep directories alike.
pub fn report(dir: &Path) -> Result<String> {
    let spec = config::load(&dir.join("config_echo.json"))?;
    let sweep_path = dir.join("sweep.csv");
    let summary = if sweep_path.exists() {
        let text = fs::read_to_string(&sweep_path)?;
        let (seed, rows) = runner::parse_sweep_csv(&text)
            .map_err(|e| Error::format(format!("{}: {e}", sweep_path.display())))?;
        check_seed(&sweep_path, seed, spec.seed)?;
        runner::render_sweep_summary(&spec, &rows)
    } else {
        let metrics_path = dir.join("metrics.csv");
        let text = fs::read_to_string(&metrics_path)?;
        let (seed, rows) = runner::parse_metrics_csv(&text)
            .map_err(|e| Error::format(format!("{}: {e}", metrics_path.display())))?;
        check_seed(&metrics_path, seed, spec.seed)?;
        runner::render_run_summary(&spec, &rows)
    };
    fs::write(dir.join("summary.md"), &summary)?;
    Ok(summary)
}

fn check_seed(path: &Path, csv_seed: u64, config_seed: u64) -> Result<()> {
    if csv_seed != config_seed {
        return Err(Error::format(format!(
            "{}: seed {csv_seed} does not match config seed {config_seed}",
            path.display()
        )));
    }
    Ok(())
}
