//! Files written into a run directory.

use std::path::Path;

use serde::Serialize;

use crate::config::Config;
use crate::error::{IoContext, Result};
use crate::train::{DrawLog, EpochReport, EvalReport, StepRecord};

pub const EPOCHS_CSV: &str = "epochs.csv";
pub const STEPS_CSV: &str = "steps.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const WINDOWS_CSV: &str = "windows.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const CONFIG_TOML: &str = "config.toml";
pub const MODEL_CKPT: &str = "model.ckpt";
pub const RESUME_CKPT: &str = "resume.ckpt";

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).at(path)?;
    Ok(csv::Writer::from_writer(f))
}

/// One row per epoch. Deterministic runs write 0 for `seconds` so the file
/// depends on the seed alone; wall-clock times go to `timings.csv`.
pub fn write_epochs(path: &Path, history: &[EpochReport], deterministic: bool) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "train_loss", "train_acc", "val_acc", "seconds"])?;
    for r in history {
        let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
        let secs = if deterministic { 0.0 } else { r.seconds };
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.train_acc.to_string(), val, secs.to_string()])?;
    }
    w.flush().at(path)
}

pub fn write_timings(path: &Path, history: &[EpochReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "seconds"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.seconds.to_string()])?;
    }
    w.flush().at(path)
}

pub fn write_steps(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let mut w = writer(path)?;
    for s in steps {
        w.serialize(s)?;
    }
    w.flush().at(path)
}

pub fn write_windows(path: &Path, draws: &[DrawLog]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "sample", "flipped", "indices"])?;
    for d in draws {
        let idx: Vec<String> = d.indices.iter().map(usize::to_string).collect();
        w.write_record([d.epoch.to_string(), d.sample.clone(), d.flipped.to_string(), idx.join(" ")])?;
    }
    w.flush().at(path)
}

/// Read back `windows.csv` as `(epoch, sample, flipped, indices)`.
pub fn read_windows(path: &Path) -> Result<Vec<DrawLog>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || crate::error::Error::data(format!("{}: malformed row {:?}", path.display(), rec));
        out.push(DrawLog {
            epoch: rec[0].parse().map_err(|_| bad())?,
            sample: rec[1].to_string(),
            flipped: rec[2].parse().map_err(|_| bad())?,
            indices: rec[3].split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Confusion matrix with a header of predicted class names.
pub fn write_confusion(path: &Path, report: &EvalReport, class_names: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["true\\pred".to_string()];
    header.extend(class_names.iter().cloned());
    w.write_record(&header)?;
    for (c, row) in report.confusion.iter().enumerate() {
        let mut rec = vec![class_names.get(c).cloned().unwrap_or_else(|| c.to_string())];
        rec.extend(row.iter().map(usize::to_string));
        w.write_record(&rec)?;
    }
    w.flush().at(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").at(path)
}

/// Reproducibility record: enough to rerun the command that produced a directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config_file: &'static str,
    pub config: Config,
    pub outputs: Vec<String>,
}

pub fn write_run_manifest(dir: &Path, command: &str, config: &Config) -> Result<()> {
    let cfg_path = dir.join(CONFIG_TOML);
    std::fs::write(&cfg_path, config.to_toml()).at(&cfg_path)?;
    let mut outputs: Vec<String> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n != RUN_MANIFEST)
        .collect();
    outputs.sort();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        seed: config.seed,
        deterministic: config.deterministic,
        config_file: CONFIG_TOML,
        config: config.clone(),
        outputs,
    };
    write_json(&dir.join(RUN_MANIFEST), &manifest)
}
