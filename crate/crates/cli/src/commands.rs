//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use itemlab::config::{DataSource, Mode, RunConfig};
use itemlab::data::{self, LabeledDataset, NoiseSpec};
use itemlab::nn;
use itemlab::report;
use itemlab::trainer::{self, PreparedData, RunSummary};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{write_error, CliError};
use crate::json;
use crate::manifest::ExperimentManifest;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| write_error(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| write_error(path, e))
}

fn csv_bytes(ds: &LabeledDataset) -> Vec<u8> {
    let mut buf = Vec::new();
    data::write_csv(ds, &mut buf).expect("in-memory CSV");
    buf
}

/// SHA-256 of a dataset's CSV serialization, as lowercase hex.
pub fn dataset_hash(ds: &LabeledDataset) -> String {
    Sha256::digest(csv_bytes(ds)).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `train.csv` (clean labels) and `test.csv` for a blob config.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    if cfg.data.source != DataSource::Blobs {
        return Err(CliError::config("invalid data.source: gen-data needs \"blobs\""));
    }
    let spec = cfg.blob_spec();
    let train = data::generate_blobs(&spec)?;
    let test = data::generate_test_blobs(&spec, cfg.data.test_per_class, spec.seed)?;
    create_dir(out)?;
    let train_path = out.join("train.csv");
    let test_path = out.join("test.csv");
    write_file(&train_path, &csv_bytes(&train))?;
    write_file(&test_path, &csv_bytes(&test))?;
    log::info!(
        "wrote {} training rows and {} test rows to {}",
        train.len(),
        test.len(),
        out.display()
    );
    Ok((train_path, test_path))
}

/// Corrupts the labels of a dataset CSV into `<stem>_noisy.csv`.
pub fn inject_noise(
    input: &Path,
    class_count: Option<usize>,
    spec: &NoiseSpec,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let clean = match class_count {
        Some(k) => data::load_csv(input, k)?,
        None => data::load_csv_infer(input)?,
    };
    let noisy = data::inject_noise(&clean, spec)?;
    create_dir(out)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let path = out.join(format!("{stem}_noisy.csv"));
    write_file(&path, &csv_bytes(&noisy))?;
    log::info!(
        "{} noise at ratio {}: {} of {} labels changed",
        spec.kind,
        spec.ratio,
        (noisy.corruption_rate() * noisy.len() as f64).round(),
        noisy.len()
    );
    Ok(path)
}

/// Files written by one training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub metrics: PathBuf,
    pub summary_path: PathBuf,
    pub checkpoint: PathBuf,
    pub summary: RunSummary,
}

/// Trains once and writes `metrics.csv`, `summary.json`, `checkpoint.bin`
/// and the resolved `config.toml` under `out`.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainOutput, CliError> {
    cfg.validate()?;
    let prepared = trainer::prepare_data(cfg)?;
    train_prepared(cfg, &prepared, out)
}

fn train_prepared(cfg: &RunConfig, prepared: &PreparedData, out: &Path) -> Result<TrainOutput, CliError> {
    let hash = dataset_hash(&prepared.train);
    log::info!(
        "{} seed {}: {} training rows, {} classes, dataset {}",
        cfg.run.mode,
        cfg.run.seed,
        prepared.train.len(),
        prepared.train.class_count(),
        &hash[..12]
    );
    let result = trainer::run_with(cfg, prepared, |r| {
        log::info!(
            "{} seed {} epoch {}: loss {:.4}, test accuracy {:.4}, selected {}",
            cfg.run.mode,
            cfg.run.seed,
            r.epoch,
            r.train_loss,
            r.test_accuracy,
            r.selected_count
        );
    })?;
    let mut summary = result.log.summary().ok_or_else(|| CliError::runtime("no epochs ran"))?;
    summary.dataset_sha256 = Some(hash);
    create_dir(out)?;
    let metrics = out.join("metrics.csv");
    let summary_path = out.join("summary.json");
    let checkpoint = out.join("checkpoint.bin");
    write_file(&metrics, report::metrics_csv_string(&result.log).as_bytes())?;
    write_file(&summary_path, json::to_string(&summary).as_bytes())?;
    nn::save_checkpoint(&result.net, &result.optimizer, &checkpoint).map_err(|e| write_error(&checkpoint, e))?;
    write_file(&out.join("config.toml"), cfg.to_toml_string().as_bytes())?;
    Ok(TrainOutput {
        metrics,
        summary_path,
        checkpoint,
        summary,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmRow {
    pub arm: Mode,
    pub runs: usize,
    pub final_accuracy: Stat,
    pub best_accuracy: Stat,
    pub macro_fscore: Stat,
    pub min_fscore: Stat,
    pub imbalance_ratio: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<ArmRow>,
    /// Training-set hash per seed, shared by every arm.
    pub dataset_sha256: BTreeMap<u64, String>,
    pub runs: Vec<RunSummary>,
}

pub const ABLATION_COLUMNS: &str = "arm,runs,final_accuracy_mean,final_accuracy_std,best_accuracy_mean,best_accuracy_std,macro_fscore_mean,macro_fscore_std,min_fscore_mean,min_fscore_std,imbalance_ratio_mean,imbalance_ratio_std";

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(ABLATION_COLUMNS);
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = [
                r.final_accuracy,
                r.best_accuracy,
                r.macro_fscore,
                r.min_fscore,
                r.imbalance_ratio,
            ]
            .iter()
            .flat_map(|st| [data::fmt_f64(st.mean), data::fmt_f64(st.std)])
            .collect();
            s.push_str(&format!("{},{},{}\n", r.arm, r.runs, cells.join(",")));
        }
        s
    }

    pub fn row(&self, arm: Mode) -> Option<&ArmRow> {
        self.rows.iter().find(|r| r.arm == arm)
    }
}

/// Runs every arm for every seed and writes per-run outputs under
/// `out/runs/<arm>/seed_<seed>/` plus `ablation.csv` and `ablation.json`.
pub fn ablate(manifest: &ExperimentManifest, out: &Path) -> Result<AblationTable, CliError> {
    use rayon::prelude::*;

    manifest.validate()?;
    let configs = manifest.expand();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.jobs)
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let results: Vec<Result<RunSummary, CliError>> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let dir = out.join("runs").join(cfg.run.mode.as_str()).join(format!("seed_{}", cfg.run.seed));
                train(cfg, &dir).map(|o| o.summary)
            })
            .collect()
    });
    let runs: Vec<RunSummary> = results.into_iter().collect::<Result<_, _>>()?;

    let mut hashes: BTreeMap<u64, String> = BTreeMap::new();
    for s in &runs {
        let h = s.dataset_sha256.clone().expect("train sets the hash");
        match hashes.get(&s.seed) {
            Some(prev) if *prev != h => {
                return Err(CliError::runtime(format!(
                    "seed {}: arm {} trained on a different dataset ({} vs {})",
                    s.seed, s.mode, h, prev
                )))
            }
            Some(_) => {}
            None => {
                hashes.insert(s.seed, h);
            }
        }
    }

    let rows = manifest
        .arms
        .iter()
        .map(|&arm| {
            let of = |f: fn(&RunSummary) -> f64| {
                Stat::of(&runs.iter().filter(|s| s.mode == arm).map(f).collect::<Vec<_>>())
            };
            ArmRow {
                arm,
                runs: manifest.seeds.len(),
                final_accuracy: of(|s| s.final_test_accuracy),
                best_accuracy: of(|s| s.best_test_accuracy),
                macro_fscore: of(|s| s.final_macro_fscore),
                min_fscore: of(|s| s.final_min_fscore),
                imbalance_ratio: of(|s| s.final_imbalance_ratio),
            }
        })
        .collect();
    let table = AblationTable {
        seeds: manifest.seeds.clone(),
        rows,
        dataset_sha256: hashes,
        runs,
    };
    create_dir(out)?;
    write_file(&out.join("ablation.csv"), table.to_csv().as_bytes())?;
    write_file(&out.join("ablation.json"), json::to_string(&table).as_bytes())?;
    for r in &table.rows {
        log::info!(
            "{:<22} accuracy {:.4} ± {:.4}",
            r.arm.as_str(),
            r.final_accuracy.mean,
            r.final_accuracy.std
        );
    }
    Ok(table)
}

pub const REPORT_COLUMNS: &str = "run_id,epoch,metric,class,value";

/// Run id for a metrics file: the parent directory for `metrics.csv`,
/// otherwise the file stem.
pub fn run_id(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    if stem == "metrics" {
        if let Some(parent) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return parent.to_string();
        }
    }
    stem.to_string()
}

/// Merges metrics files into one long-format series in `out/report.csv`.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<PathBuf, CliError> {
    if inputs.is_empty() {
        return Err(CliError::config("report needs at least one metrics file"));
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut text = String::from(REPORT_COLUMNS);
    text.push('\n');
    for path in inputs {
        let body = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cells = report::parse_metrics_csv(&body, &path.display().to_string())
            .map_err(|e| CliError::config(e.to_string()))?;
        let base = run_id(path);
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        let id = if *n == 1 { base } else { format!("{base}#{n}") };
        for c in cells {
            text.push_str(&format!("{id},{},{},{},{}\n", c.epoch, c.metric, c.class, data::fmt_f64(c.value)));
        }
    }
    create_dir(out)?;
    let path = out.join("report.csv");
    write_file(&path, text.as_bytes())?;
    Ok(path)
}
