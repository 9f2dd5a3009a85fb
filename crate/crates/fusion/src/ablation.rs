//! Stream and clip-length ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fusion_core::model::Streams;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::LoadedData;
use crate::error::{Error, IoContext, Result};
use crate::run::train_and_test;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub mode: Streams,
    pub clip_length: usize,
    pub seed: u64,
    pub pose_feature_dim: Option<usize>,
    pub ir_feature_dim: Option<usize>,
    pub head_input_dim: usize,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: f64,
    pub epochs_run: usize,
}

/// Train one model per (mode, T, seed) and score it on the test split.
/// Pose-only networks never see the IR clip, so one run per seed is shared
/// by every T column.
pub fn run_ablation(
    base: &Config,
    data: &LoadedData,
    modes: &[Streams],
    lengths: &[usize],
    seeds: &[u64],
    progress: &mut dyn FnMut(&AblationCell),
) -> Result<Vec<AblationCell>> {
    if modes.is_empty() || lengths.is_empty() || seeds.is_empty() {
        return Err(Error::Usage("ablation grid is empty".into()));
    }
    if data.plan.test.is_empty() {
        return Err(Error::data("ablation needs a held-out test split"));
    }
    let mut pose_cache: BTreeMap<u64, AblationCell> = BTreeMap::new();
    let mut cells = Vec::new();
    for &mode in modes {
        for &t in lengths {
            for &seed in seeds {
                if mode == Streams::PoseOnly {
                    if let Some(c) = pose_cache.get(&seed) {
                        let cell = AblationCell { clip_length: t, ..c.clone() };
                        progress(&cell);
                        cells.push(cell);
                        continue;
                    }
                }
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.train.mode = mode;
                cfg.model.clip_length = t;
                let (trainer, test) = train_and_test(&cfg, data)?;
                let m = &trainer.config.model;
                let last = trainer.history.last();
                let cell = AblationCell {
                    mode,
                    clip_length: t,
                    seed,
                    pose_feature_dim: mode.uses_pose().then(|| m.pose_feature_dim()),
                    ir_feature_dim: mode.uses_ir().then(|| m.ir_feature_dim()),
                    head_input_dim: m.head_input_dim(mode),
                    train_acc: last.map_or(0.0, |h| h.train_acc),
                    val_acc: trainer.best.as_ref().map(|b| b.val_acc),
                    test_acc: test.map_or(0.0, |r| r.accuracy),
                    epochs_run: trainer.history.len(),
                };
                if mode == Streams::PoseOnly {
                    pose_cache.insert(seed, cell.clone());
                }
                progress(&cell);
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

fn label(mode: Streams) -> &'static str {
    match mode {
        Streams::Fusion => "Fusion",
        Streams::PoseOnly => "Pose only",
        Streams::IrOnly => "IR only",
    }
}

fn dim(d: Option<usize>) -> String {
    d.map_or_else(|| "-".into(), |d| d.to_string())
}

/// Markdown table: one row per mode, one column per clip length, cells are
/// mean test accuracy over seeds in percent.
pub fn ablation_table(cells: &[AblationCell]) -> String {
    let mut modes: Vec<Streams> = Vec::new();
    let mut lengths: Vec<usize> = Vec::new();
    for c in cells {
        if !modes.contains(&c.mode) {
            modes.push(c.mode);
        }
        if !lengths.contains(&c.clip_length) {
            lengths.push(c.clip_length);
        }
    }
    let mut s = String::from("| Method | Pose features | IR features | Fused |");
    for t in &lengths {
        let _ = write!(s, " T={t} |");
    }
    s.push_str("\n|---|---|---|---|");
    s.push_str(&"---|".repeat(lengths.len()));
    s.push('\n');
    for mode in modes {
        let first = cells.iter().find(|c| c.mode == mode).expect("mode present");
        let _ = write!(
            s,
            "| {} | {} | {} | {} |",
            label(mode),
            dim(first.pose_feature_dim),
            dim(first.ir_feature_dim),
            first.head_input_dim
        );
        for &t in &lengths {
            let accs: Vec<f64> = cells.iter().filter(|c| c.mode == mode && c.clip_length == t).map(|c| c.test_acc).collect();
            if accs.is_empty() {
                s.push_str(" - |");
            } else {
                let _ = write!(s, " {:.1} |", 100.0 * accs.iter().sum::<f64>() / accs.len() as f64);
            }
        }
        s.push('\n');
    }
    s
}

/// `ablation.csv` (one row per cell) and `ablation.md` (the summary table).
pub fn write_ablation(dir: &Path, cells: &[AblationCell]) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let p = dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&p)?;
    for c in cells {
        w.serialize(CsvRow::from(c))?;
    }
    w.flush().at(&p)?;
    let md = dir.join("ablation.md");
    std::fs::write(&md, ablation_table(cells)).at(&md)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    mode: &'a str,
    clip_length: usize,
    seed: u64,
    pose_feature_dim: String,
    ir_feature_dim: String,
    head_input_dim: usize,
    train_acc: f64,
    val_acc: String,
    test_acc: f64,
    epochs_run: usize,
}

impl<'a> From<&'a AblationCell> for CsvRow<'a> {
    fn from(c: &'a AblationCell) -> Self {
        CsvRow {
            mode: c.mode.name(),
            clip_length: c.clip_length,
            seed: c.seed,
            pose_feature_dim: dim(c.pose_feature_dim),
            ir_feature_dim: dim(c.ir_feature_dim),
            head_input_dim: c.head_input_dim,
            train_acc: c.train_acc,
            val_acc: c.val_acc.map(|v| v.to_string()).unwrap_or_default(),
            test_acc: c.test_acc,
            epochs_run: c.epochs_run,
        }
    }
}
