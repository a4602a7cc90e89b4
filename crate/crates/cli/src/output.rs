//! Run artifacts: JSON-lines metrics, CSV summaries and the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use caipi_core::session::{CvResult, DatasetConfig, DecoyRow, ExperimentConfig, MeanStd};
use caipi_core::CaipiError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u128,
    pub wall_seconds: f64,
}

/// Everything needed to reproduce a run: re-running `config` gives
/// byte-identical metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub version: String,
    /// Resolved configuration (TOML) after command-line overrides.
    pub config: String,
    /// SHA-256 over the config snapshot and every input file it names.
    pub input_hash: String,
    pub outputs: BTreeMap<String, PathBuf>,
    pub timings: Timings,
}

pub struct Clock {
    started: SystemTime,
    timer: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Clock {
            started: SystemTime::now(),
            timer: Instant::now(),
        }
    }

    pub fn stop(&self) -> Timings {
        Timings {
            started_unix_ms: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
            wall_seconds: self.timer.elapsed().as_secs_f64(),
        }
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| CaipiError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Files read by the dataset loader, in a stable order.
pub fn input_files(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    match &config.dataset {
        DatasetConfig::Decoy { idx: Some(f), .. } => {
            out.extend([&f.train_images, &f.train_labels, &f.test_images, &f.test_labels].map(|p| p.to_path_buf()));
        }
        DatasetConfig::Text { corpus: Some(dir), .. } => collect_files(dir, &mut out)?,
        _ => {}
    }
    Ok(out)
}

pub fn input_hash(config: &ExperimentConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(config.to_toml().as_bytes());
    for path in input_files(config)? {
        h.update(path.display().to_string().as_bytes());
        h.update(fs::read(&path).map_err(|e| CaipiError::io(&path, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn manifest(command: &str, config: &ExperimentConfig, outputs: BTreeMap<String, PathBuf>, timings: Timings) -> Result<RunManifest> {
    let input_hash = input_hash(config)?;
    Ok(RunManifest {
        run_id: input_hash[..16].to_string(),
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.to_toml(),
        input_hash,
        outputs,
        timings,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CliError::write(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::write(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).expect("serializable");
        w.write_all(b"\n").map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |e: csv::Error| CliError::write(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

#[derive(Serialize)]
struct FoldLine<'a, T> {
    fold: usize,
    #[serde(flatten)]
    record: &'a T,
}

/// Final values of one fold (or their mean over folds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub fold: String,
    pub seed: String,
    pub status: String,
    pub iterations: f64,
    pub labeled: f64,
    pub counterexamples: f64,
    pub predictive_f1: f64,
    pub instantaneous_f1: f64,
    pub cumulative_f1: f64,
    pub test_explanation_f1: Option<f64>,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    pub residual: Option<f64>,
}

pub fn summary_rows(result: &CvResult) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = result
        .folds
        .iter()
        .filter_map(|f| {
            let last = f.history.last()?;
            Some(SummaryRow {
                fold: f.fold.to_string(),
                seed: f.seed.to_string(),
                status: serde_json::to_value(f.status).ok()?.as_str()?.to_string(),
                iterations: last.t as f64,
                labeled: last.labeled as f64,
                counterexamples: f.counterexamples.len() as f64,
                predictive_f1: last.predictive,
                instantaneous_f1: last.instantaneous_f1,
                cumulative_f1: last.cumulative_f1,
                test_explanation_f1: f.history.iter().rev().find_map(|r| r.test_explanation_f1),
                alpha0: last.decomposition.map(|d| d.alpha0),
                alpha1: last.decomposition.map(|d| d.alpha1),
                residual: last.decomposition.map(|d| d.residual),
            })
        })
        .collect();
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&SummaryRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean_opt = |f: &dyn Fn(&SummaryRow) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            MeanStd::of(&v).map(|m| m.mean)
        };
        let row = SummaryRow {
            fold: "mean".into(),
            seed: String::new(),
            status: String::new(),
            iterations: mean(&|r| r.iterations),
            labeled: mean(&|r| r.labeled),
            counterexamples: mean(&|r| r.counterexamples),
            predictive_f1: mean(&|r| r.predictive_f1),
            instantaneous_f1: mean(&|r| r.instantaneous_f1),
            cumulative_f1: mean(&|r| r.cumulative_f1),
            test_explanation_f1: mean_opt(&|r| r.test_explanation_f1),
            alpha0: mean_opt(&|r| r.alpha0),
            alpha1: mean_opt(&|r| r.alpha1),
            residual: mean_opt(&|r| r.residual),
        };
        rows.push(row);
    }
    rows
}

#[derive(Serialize)]
struct CurveRow {
    t: usize,
    folds: usize,
    predictive_mean: f64,
    predictive_std: f64,
    instantaneous_f1_mean: f64,
    instantaneous_f1_std: f64,
    cumulative_f1_mean: f64,
    cumulative_f1_std: f64,
    test_explanation_f1_mean: Option<f64>,
    test_explanation_f1_std: Option<f64>,
    alpha0_mean: Option<f64>,
    alpha0_std: Option<f64>,
    alpha1_mean: Option<f64>,
    alpha1_std: Option<f64>,
    counterexamples_mean: f64,
}

/// Writes metrics.jsonl, counterexamples.jsonl, curves.csv and summary.csv
/// under `out`; returns the paths by name.
pub fn write_run(out: &Path, result: &CvResult) -> Result<BTreeMap<String, PathBuf>> {
    fs::create_dir_all(out).map_err(|e| CliError::write(out, e))?;
    let mut paths = BTreeMap::new();
    let metrics = out.join("metrics.jsonl");
    write_jsonl(
        &metrics,
        result
            .folds
            .iter()
            .flat_map(|f| f.history.iter().map(move |r| FoldLine { fold: f.fold, record: r })),
    )?;
    paths.insert("metrics".into(), metrics);

    let counter = out.join("counterexamples.jsonl");
    write_jsonl(
        &counter,
        result
            .folds
            .iter()
            .flat_map(|f| f.counterexamples.iter().map(move |r| FoldLine { fold: f.fold, record: r })),
    )?;
    paths.insert("counterexamples".into(), counter);

    let curves = out.join("curves.csv");
    let split = |m: Option<MeanStd>| (m.map(|m| m.mean), m.map(|m| m.std));
    write_csv(
        &curves,
        result.curves.iter().map(|a| {
            let (te_m, te_s) = split(a.test_explanation_f1);
            let (a0_m, a0_s) = split(a.alpha0);
            let (a1_m, a1_s) = split(a.alpha1);
            CurveRow {
                t: a.t,
                folds: a.folds,
                predictive_mean: a.predictive.mean,
                predictive_std: a.predictive.std,
                instantaneous_f1_mean: a.instantaneous_f1.mean,
                instantaneous_f1_std: a.instantaneous_f1.std,
                cumulative_f1_mean: a.cumulative_f1.mean,
                cumulative_f1_std: a.cumulative_f1.std,
                test_explanation_f1_mean: te_m,
                test_explanation_f1_std: te_s,
                alpha0_mean: a0_m,
                alpha0_std: a0_s,
                alpha1_mean: a1_m,
                alpha1_std: a1_s,
                counterexamples_mean: a.counterexamples.mean,
            }
        }),
    )?;
    paths.insert("curves".into(), curves);

    let summary = out.join("summary.csv");
    write_csv(&summary, summary_rows(result))?;
    paths.insert("summary".into(), summary);
    Ok(paths)
}

pub fn write_decoy_table(out: &Path, rows: &[DecoyRow]) -> Result<BTreeMap<String, PathBuf>> {
    fs::create_dir_all(out).map_err(|e| CliError::write(out, e))?;
    let path = out.join("decoy_table.csv");
    write_csv(&path, rows)?;
    Ok(BTreeMap::from([("decoy_table".to_string(), path)]))
}

/// Accuracy table with one column per setting and train/test rows.
pub fn format_decoy_table(rows: &[DecoyRow]) -> String {
    let header = |r: &DecoyRow| {
        if r.copies == 0 {
            "no corrections".to_string()
        } else {
            format!("c = {}", r.copies)
        }
    };
    let width = rows.iter().map(|r| header(r).len()).max().unwrap_or(0).max(8);
    let mut s = format!("{:<16}", "");
    for r in rows {
        s += &format!(" {:>width$}", header(r));
    }
    s.push('\n');
    let line = |name: &str, f: &dyn Fn(&DecoyRow) -> f64| {
        let mut l = format!("{name:<16}");
        for r in rows {
            l += &format!(" {:>width$.3}", f(r));
        }
        l + "\n"
    };
    s += &line("train accuracy", &|r| r.train_accuracy);
    s += &line("test accuracy", &|r| r.test_accuracy);
    s += &line("clean accuracy", &|r| r.clean_accuracy);
    s
}
