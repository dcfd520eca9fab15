//! Executes runs and sweeps, writing a self-describing result directory.

use std::fs;
use std::path::{Path, PathBuf};

use segbench::datagen::{self, make_folds, save_pgm, Sample};
use segbench::eval::{cross_validate, snr_sweep, CvResult, SweepPoint};
use segbench::metrics::{fmt_rate, roc_curve, RocPoint};
use segbench::tensor::Tensor;
use segbench::{Error, Result};

use crate::config::{self, RunSpec};

pub const FORMAT_VERSION: &str = "v1";
/// Qualitative image/mask/prediction triplets written per run.
const SAMPLE_TRIPLETS: usize = 4;

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "n/a".to_string(),
    }
}

/// One `metrics.csv` row: a fold, or the pooled totals.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub fold: String,
    pub params: usize,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub test_loss: f64,
    pub best_epoch: Option<usize>,
    pub train_seconds: f64,
}

pub fn metrics_rows(cv: &CvResult) -> Vec<MetricsRow> {
    let mut rows: Vec<MetricsRow> = cv
        .folds
        .iter()
        .map(|f| MetricsRow {
            fold: f.fold.to_string(),
            params: cv.param_count,
            accuracy: f.confusion.accuracy(),
            sensitivity: f.confusion.sensitivity(),
            specificity: f.confusion.specificity(),
            auc: f.auc,
            test_loss: f.test_loss,
            best_epoch: Some(f.train.best_epoch),
            train_seconds: f.train.wall_seconds,
        })
        .collect();
    rows.push(MetricsRow {
        fold: "pooled".to_string(),
        params: cv.param_count,
        accuracy: cv.pooled.accuracy(),
        sensitivity: cv.pooled.sensitivity(),
        specificity: cv.pooled.specificity(),
        auc: Some(cv.pooled_auc),
        test_loss: cv.mean_test_loss(),
        best_epoch: None,
        train_seconds: cv.folds.iter().map(|f| f.train.wall_seconds).sum(),
    });
    rows
}

pub fn render_metrics_csv(rows: &[MetricsRow], seed: u64) -> String {
    let mut out = format!("# segbench metrics {FORMAT_VERSION}, seed {seed}\n");
    out.push_str(
        "fold,params,accuracy,sensitivity,specificity,auc,test_loss,best_epoch,train_seconds\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.fold,
            r.params,
            opt(r.accuracy),
            opt(r.sensitivity),
            opt(r.specificity),
            opt(r.auc),
            r.test_loss,
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.train_seconds,
        ));
    }
    out
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field == "n/a" {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::format(format!("bad numeric field {field:?}")))
}

fn parse_num(field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::format(format!("bad numeric field {field:?}")))
}

/// Split a CSV into its `# segbench <name> <version>, seed <seed>` comment,
/// checked header, and data rows.
fn csv_body<'a>(text: &'a str, name: &str, header: &str) -> Result<(u64, Vec<Vec<&'a str>>)> {
    let mut lines = text.lines();
    let comment = lines
        .next()
        .ok_or_else(|| Error::format(format!("{name}: empty file")))?;
    let tag = format!("# segbench {name} {FORMAT_VERSION}, seed ");
    let seed = comment
        .strip_prefix(&tag)
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| Error::format(format!("{name}: bad comment line {comment:?}")))?;
    let head = lines.next().unwrap_or_default();
    if head != header {
        return Err(Error::format(format!("{name}: unexpected header {head:?}")));
    }
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').collect())
        .collect();
    Ok((seed, rows))
}

pub fn parse_metrics_csv(text: &str) -> Result<(u64, Vec<MetricsRow>)> {
    let header =
        "fold,params,accuracy,sensitivity,specificity,auc,test_loss,best_epoch,train_seconds";
    let (seed, lines) = csv_body(text, "metrics", header)?;
    let mut rows = Vec::with_capacity(lines.len());
    for f in lines {
        if f.len() != 9 {
            return Err(Error::format(format!(
                "metrics: expected 9 fields, got {}",
                f.len()
            )));
        }
        rows.push(MetricsRow {
            fold: f[0].to_string(),
            params: f[1]
                .parse()
                .map_err(|_| Error::format(format!("bad params field {:?}", f[1])))?,
            accuracy: parse_opt(f[2])?,
            sensitivity: parse_opt(f[3])?,
            specificity: parse_opt(f[4])?,
            auc: parse_opt(f[5])?,
            test_loss: parse_num(f[6])?,
            best_epoch: if f[7].is_empty() {
                None
            } else {
                Some(
                    f[7].parse()
                        .map_err(|_| Error::format(format!("bad best_epoch field {:?}", f[7])))?,
                )
            },
            train_seconds: parse_num(f[8])?,
        });
    }
    Ok((seed, rows))
}

pub fn render_losses_csv(cv: &CvResult, seed: u64) -> String {
    let mut out = format!("# segbench losses {FORMAT_VERSION}, seed {seed}\n");
    out.push_str("fold,epoch,train_loss,val_loss\n");
    for f in &cv.folds {
        for e in &f.train.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                f.fold, e.epoch, e.train_loss, e.val_loss
            ));
        }
    }
    out
}

/// (fold, epoch, train_loss, val_loss) tuples.
pub type LossRow = (usize, usize, f64, f64);

pub fn parse_losses_csv(text: &str) -> Result<(u64, Vec<LossRow>)> {
    let (seed, lines) = csv_body(text, "losses", "fold,epoch,train_loss,val_loss")?;
    let mut rows = Vec::with_capacity(lines.len());
    for f in lines {
        if f.len() != 4 {
            return Err(Error::format(format!(
                "losses: expected 4 fields, got {}",
                f.len()
            )));
        }
        let fold = f[0]
            .parse()
            .map_err(|_| Error::format(format!("bad fold {:?}", f[0])))?;
        let epoch = f[1]
            .parse()
            .map_err(|_| Error::format(format!("bad epoch {:?}", f[1])))?;
        rows.push((fold, epoch, parse_num(f[2])?, parse_num(f[3])?));
    }
    Ok((seed, rows))
}

fn render_roc_rows(out: &mut String, prefix: &str, points: &[RocPoint]) {
    for p in points {
        out.push_str(&format!("{prefix}{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
}

pub fn render_roc_csv(points: &[RocPoint], seed: u64) -> String {
    let mut out = format!("# segbench roc {FORMAT_VERSION}, seed {seed}\n");
    out.push_str("threshold,fpr,tpr\n");
    render_roc_rows(&mut out, "", points);
    out
}

/// Per-fold curves; folds with one-class test labels contribute no rows.
pub fn render_roc_folds_csv(cv: &CvResult, seed: u64) -> Result<String> {
    let mut out = format!("# segbench roc_folds {FORMAT_VERSION}, seed {seed}\n");
    out.push_str("fold,threshold,fpr,tpr\n");
    for f in &cv.folds {
        if f.auc.is_none() {
            continue;
        }
        let points = roc_curve(&f.scores, &f.labels)?;
        render_roc_rows(&mut out, &format!("{},", f.fold), &points);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr: f64,
    pub pooled_auc: f64,
    pub mean_auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub test_loss: f64,
}

pub fn sweep_rows(points: &[SweepPoint]) -> Vec<SweepRow> {
    points
        .iter()
        .map(|p| SweepRow {
            snr: p.snr,
            pooled_auc: p.result.pooled_auc,
            mean_auc: p.result.mean_auc(),
            accuracy: p.result.mean_accuracy(),
            sensitivity: p.result.mean_sensitivity(),
            specificity: p.result.mean_specificity(),
            test_loss: p.result.mean_test_loss(),
        })
        .collect()
}

pub fn render_sweep_csv(rows: &[SweepRow], seed: u64) -> String {
    let mut out = format!("# segbench sweep {FORMAT_VERSION}, seed {seed}\n");
    out.push_str("snr,pooled_auc,mean_auc,accuracy,sensitivity,specificity,test_loss\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.snr,
            r.pooled_auc,
            opt(r.mean_auc),
            opt(r.accuracy),
            opt(r.sensitivity),
            opt(r.specificity),
            r.test_loss,
        ));
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<(u64, Vec<SweepRow>)> {
    let header = "snr,pooled_auc,mean_auc,accuracy,sensitivity,specificity,test_loss";
    let (seed, lines) = csv_body(text, "sweep", header)?;
    let mut rows = Vec::with_capacity(lines.len());
    for f in lines {
        if f.len() != 7 {
            return Err(Error::format(format!(
                "sweep: expected 7 fields, got {}",
                f.len()
            )));
        }
        rows.push(SweepRow {
            snr: parse_num(f[0])?,
            pooled_auc: parse_num(f[1])?,
            mean_auc: parse_opt(f[2])?,
            accuracy: parse_opt(f[3])?,
            sensitivity: parse_opt(f[4])?,
            specificity: parse_opt(f[5])?,
            test_loss: parse_num(f[6])?,
        });
    }
    Ok((seed, rows))
}

fn spec_lines(spec: &RunSpec) -> String {
    let snr = match spec.dataset.snr {
        Some(s) => format!("snr {s}"),
        None => "clean".to_string(),
    };
    let mut out = String::new();
    out.push_str(&format!("- format: {FORMAT_VERSION}\n"));
    out.push_str(&format!("- seed: {}\n", spec.seed));
    out.push_str(&format!(
        "- dataset: {}, {} images, {}x{}, {snr}\n",
        spec.dataset.kind.name(),
        spec.dataset.count,
        spec.dataset.extent,
        spec.dataset.extent
    ));
    out.push_str(&format!(
        "- model: {}, features {}, depth {}\n",
        spec.model.arch.name(),
        spec.model.features,
        spec.model.depth
    ));
    out.push_str(&format!(
        "- train: {} epochs, lr {}, batch {}, {} folds\n",
        spec.train.epochs, spec.train.lr, spec.train.batch, spec.folds
    ));
    out
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn render_run_summary(spec: &RunSpec, rows: &[MetricsRow]) -> String {
    let mut out = String::from("# segbench run summary\n\n");
    out.push_str(&spec_lines(spec));
    if let Some(r) = rows.first() {
        out.push_str(&format!("- parameters: {}\n", r.params));
    }
    out.push_str(
        "\n| fold | accuracy | sensitivity | specificity | auc | test loss | best epoch |\n",
    );
    out.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.fold,
            fmt_rate(r.accuracy),
            fmt_rate(r.sensitivity),
            fmt_rate(r.specificity),
            fmt_rate(r.auc),
            fmt4(r.test_loss),
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
        ));
    }
    if let Some(pooled) = rows.iter().find(|r| r.fold == "pooled") {
        out.push_str(&format!(
            "\nPooled AUC over all test pixels: {}\n",
            fmt_rate(pooled.auc)
        ));
    }
    out
}

pub fn render_sweep_summary(spec: &RunSpec, rows: &[SweepRow]) -> String {
    let mut out = String::from("# segbench sweep summary\n\n");
    out.push_str(&spec_lines(spec));
    out.push_str(&format!(
        "- levels: {}\n",
        rows.iter()
            .map(|r| r.snr.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    out.push_str(
        "\n| snr | pooled auc | mean auc | accuracy | sensitivity | specificity | test loss |\n",
    );
    out.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.snr,
            fmt4(r.pooled_auc),
            fmt_rate(r.mean_auc),
            fmt_rate(r.accuracy),
            fmt_rate(r.sensitivity),
            fmt_rate(r.specificity),
            fmt4(r.test_loss),
        ));
    }
    out
}

fn loss_curves_svg(cv: &CvResult) -> String {
    let series = |pick: fn(&segbench::train::EpochRecord) -> f64| {
        cv.folds
            .iter()
            .map(|f| crate::svg::Series {
                label: format!("fold {}", f.fold),
                points: f
                    .train
                    .epochs
                    .iter()
                    .map(|e| (e.epoch as f64, pick(e)))
                    .collect(),
            })
            .collect::<Vec<_>>()
    };
    crate::svg::render(&[
        crate::svg::Panel {
            title: "training loss".to_string(),
            x_label: "epoch".to_string(),
            y_label: "BCE".to_string(),
            series: series(|e| e.train_loss),
            x_range: None,
            y_range: None,
            diagonal: false,
        },
        crate::svg::Panel {
            title: "validation loss".to_string(),
            x_label: "epoch".to_string(),
            y_label: "BCE".to_string(),
            series: series(|e| e.val_loss),
            x_range: None,
            y_range: None,
            diagonal: false,
        },
    ])
}

fn roc_svg(cv: &CvResult) -> String {
    crate::svg::render(&[crate::svg::Panel {
        title: format!("pooled ROC (AUC {})", fmt4(cv.pooled_auc)),
        x_label: "false positive rate".to_string(),
        y_label: "true positive rate".to_string(),
        series: vec![crate::svg::Series {
            label: "pooled".to_string(),
            points: cv.pooled_roc.iter().map(|p| (p.fpr, p.tpr)).collect(),
        }],
        x_range: Some((0.0, 1.0)),
        y_range: Some((0.0, 1.0)),
        diagonal: true,
    }])
}

fn auc_vs_snr_svg(rows: &[SweepRow]) -> String {
    crate::svg::render(&[crate::svg::Panel {
        title: "AUC vs SNR".to_string(),
        x_label: "snr".to_string(),
        y_label: "pooled AUC".to_string(),
        series: vec![crate::svg::Series {
            label: "pooled".to_string(),
            points: rows.iter().map(|r| (r.snr, r.pooled_auc)).collect(),
        }],
        x_range: None,
        y_range: Some((0.0, 1.0)),
        diagonal: false,
    }])
}

/// Build results in `<out>.partial`, then swap it into place. Refuses an
/// existing `out` unless `force` is set.
struct Staging {
    tmp: PathBuf,
    out: PathBuf,
}

impl Staging {
    fn begin(out: &Path, force: bool) -> Result<Staging> {
        if out.exists() && !force {
            return Err(Error::OutputExists(out.to_path_buf()));
        }
        let name = out
            .file_name()
            .ok_or_else(|| Error::config(format!("bad output path {}", out.display())))?;
        let mut tmp_name = name.to_os_string();
        tmp_name.push(".partial");
        let tmp = out.with_file_name(tmp_name);
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Staging {
            tmp,
            out: out.to_path_buf(),
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.tmp.join(name), contents)?;
        Ok(())
    }

    fn commit(self) -> Result<PathBuf> {
        if self.out.exists() {
            fs::remove_dir_all(&self.out)?;
        }
        fs::rename(&self.tmp, &self.out)?;
        Ok(self.out)
    }
}

fn generate_samples(spec: &RunSpec) -> Result<Vec<Sample>> {
    let d = &spec.dataset;
    match d.snr {
        Some(snr) => datagen::generate_noisy(d.kind, d.count, d.extent, d.extent, snr, spec.seed),
        None => datagen::generate(d.kind, d.count, d.extent, d.extent, spec.seed),
    }
}

fn write_sample_triplets(
    staging: &Staging,
    spec: &RunSpec,
    samples: &[Sample],
    cv: &CvResult,
) -> Result<()> {
    let dir = staging.tmp.join("samples");
    fs::create_dir_all(&dir)?;
    let folds = make_folds(samples.len(), spec.folds, spec.seed)?;
    let fold0 = &cv.folds[0];
    let extent = spec.dataset.extent;
    let pixels = extent * extent;
    for (slot, &idx) in folds[0].test.iter().take(SAMPLE_TRIPLETS).enumerate() {
        let pred = Tensor::from_vec(
            &[1, extent, extent],
            fold0.scores[slot * pixels..(slot + 1) * pixels].to_vec(),
        )?;
        save_pgm(
            &dir.join(format!("image_{idx:03}.pgm")),
            &samples[idx].image,
        )?;
        save_pgm(&dir.join(format!("mask_{idx:03}.pgm")), &samples[idx].mask)?;
        save_pgm(&dir.join(format!("pred_{idx:03}.pgm")), &pred)?;
    }
    Ok(())
}

/// Execute a cross-validated run and write the result directory.
pub fn run(spec: &RunSpec, out: &Path, force: bool, threads: usize) -> Result<(CvResult, PathBuf)> {
    let staging = Staging::begin(out, force)?;
    let samples = generate_samples(spec)?;
    let cv = cross_validate(
        &spec.model,
        &samples,
        spec.folds,
        &spec.train,
        spec.seed,
        threads,
    )?;

    let rows = metrics_rows(&cv);
    staging.write("config_echo.json", &config::echo(spec))?;
    staging.write("metrics.csv", &render_metrics_csv(&rows, spec.seed))?;
    staging.write("losses.csv", &render_losses_csv(&cv, spec.seed))?;
    staging.write("roc.csv", &render_roc_csv(&cv.pooled_roc, spec.seed))?;
    staging.write("roc_folds.csv", &render_roc_folds_csv(&cv, spec.seed)?)?;
    staging.write("summary.md", &render_run_summary(spec, &rows))?;
    staging.write("loss_curves.svg", &loss_curves_svg(&cv))?;
    staging.write("roc.svg", &roc_svg(&cv))?;
    write_sample_triplets(&staging, spec, &samples, &cv)?;
    let path = staging.commit()?;
    Ok((cv, path))
}

/// Write a dataset to disk as PGM image/mask pairs plus a manifest.
pub fn gen_dataset(
    kind: datagen::DataKind,
    count: usize,
    extent: usize,
    snr: Option<f64>,
    seed: u64,
    out: &Path,
    force: bool,
) -> Result<PathBuf> {
    let staging = Staging::begin(out, force)?;
    let samples = match snr {
        Some(s) => datagen::generate_noisy(kind, count, extent, extent, s, seed)?,
        None => datagen::generate(kind, count, extent, extent, seed)?,
    };
    for (i, s) in samples.iter().enumerate() {
        save_pgm(&staging.tmp.join(format!("image_{i:03}.pgm")), &s.image)?;
        save_pgm(&staging.tmp.join(format!("mask_{i:03}.pgm")), &s.mask)?;
    }
    let manifest = serde_json::json!({
        "format": FORMAT_VERSION,
        "kind": kind.name(),
        "count": count,
        "extent": extent,
        "snr": snr,
        "seed": seed,
    });
    staging.write("manifest.json", &format!("{manifest:#}\n"))?;
    staging.commit()
}

/// Execute one cross-validation per SNR level and write the sweep directory.
pub fn sweep(
    spec: &RunSpec,
    out: &Path,
    force: bool,
    threads: usize,
) -> Result<(Vec<SweepRow>, PathBuf)> {
    if spec.snrs.is_empty() {
        return Err(Error::config(
            "sweep needs a non-empty \"snrs\" array in the config".to_string(),
        ));
    }
    let staging = Staging::begin(out, force)?;
    let points = snr_sweep(
        &spec.model,
        spec.dataset.kind,
        spec.dataset.count,
        spec.dataset.extent,
        &spec.snrs,
        spec.folds,
        &spec.train,
        spec.seed,
        threads,
    )?;
    let rows = sweep_rows(&points);
    staging.write("config_echo.json", &config::echo(spec))?;
    staging.write("sweep.csv", &render_sweep_csv(&rows, spec.seed))?;
    staging.write("summary.md", &render_sweep_summary(spec, &rows))?;
    staging.write("auc_vs_snr.svg", &auc_vs_snr_svg(&rows))?;
    let path = staging.commit()?;
    Ok((rows, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_rows() -> Vec<MetricsRow> {
        vec![
            MetricsRow {
                fold: "0".to_string(),
                params: 1321,
                accuracy: Some(0.975),
                sensitivity: None,
                specificity: Some(1.0),
                auc: Some(0.9875),
                test_loss: 0.0712,
                best_epoch: Some(17),
                train_seconds: 0.42,
            },
            MetricsRow {
                fold: "pooled".to_string(),
                params: 1321,
                accuracy: Some(0.98),
                sensitivity: Some(0.8),
                specificity: Some(0.99),
                auc: Some(0.99),
                test_loss: 0.07,
                best_epoch: None,
                train_seconds: 2.1,
            },
        ]
    }

    #[test]
    fn metrics_csv_round_trips() {
        let rows = demo_rows();
        let text = render_metrics_csv(&rows, 42);
        assert!(text.starts_with("# segbench metrics v1, seed 42\n"));
        assert!(text.contains("n/a"));
        let (seed, parsed) = parse_metrics_csv(&text).unwrap();
        assert_eq!(seed, 42);
        assert_eq!(parsed, rows);
    }

    #[test]
    fn sweep_csv_round_trips() {
        let rows = vec![SweepRow {
            snr: 2.0,
            pooled_auc: 0.81,
            mean_auc: Some(0.8),
            accuracy: Some(0.95),
            sensitivity: None,
            specificity: Some(0.99),
            test_loss: 0.2,
        }];
        let text = render_sweep_csv(&rows, 7);
        let (seed, parsed) = parse_sweep_csv(&text).unwrap();
        assert_eq!(seed, 7);
        assert_eq!(parsed, rows);
    }

    #[test]
    fn csv_parsers_reject_malformed_input() {
        assert!(parse_metrics_csv("").is_err());
        assert!(parse_metrics_csv("# wrong tag\nfold\n").is_err());
        let good = render_metrics_csv(&demo_rows(), 1);
        let bad_header = good.replace("fold,params", "fold;params");
        assert!(parse_metrics_csv(&bad_header).is_err());
        let bad_field = good.replace("0.975", "zzz");
        assert!(parse_metrics_csv(&bad_field).is_err());
    }

    #[test]
    fn summaries_render_tables_with_na_markers() {
        let spec = RunSpec::default();
        let text = render_run_summary(&spec, &demo_rows());
        assert!(text.contains("| 0 | 0.9750 | n/a | 1.0000 | 0.9875 | 0.0712 | 17 |"));
        assert!(text.contains("| pooled |"));
        assert!(text.contains("Pooled AUC over all test pixels: 0.9900"));
        assert!(text.contains("- dataset: airy, 25 images, 32x32, clean"));
    }
}
