//! Orchestration shared by the CLI verbs and the end-to-end tests.

use std::path::{Path, PathBuf};

use fusion_core::model::{FusionNetwork, Streams};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::config::Config;
use crate::dataset::{load_data, LoadedData};
use crate::error::{Error, IoContext, Result};
use crate::report::*;
use crate::train::{evaluate, load_model, model_archive, EvalReport, Progress, Trainer};

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: Streams,
    pub clip_length: usize,
    pub seed: u64,
    pub split: String,
    pub evaluated_on: String,
    pub class_count: usize,
    pub pose_feature_dim: Option<usize>,
    pub ir_feature_dim: Option<usize>,
    pub head_dims: Vec<usize>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub final_train_acc: Option<f64>,
    /// Accuracy on the evaluated split; `None` when it is empty.
    pub accuracy: Option<f64>,
    pub sample_count: usize,
    pub per_class_accuracy: Vec<Option<f64>>,
}

fn base_metrics(net: &FusionNetwork<f32>, config: &Config, split: &str) -> Metrics {
    Metrics {
        mode: net.streams,
        clip_length: net.config.clip_length,
        seed: config.seed,
        split: crate::dataset::split_id(&config.data),
        evaluated_on: split.to_string(),
        class_count: net.config.class_count,
        pose_feature_dim: net.streams.uses_pose().then(|| net.config.pose_feature_dim()),
        ir_feature_dim: net.streams.uses_ir().then(|| net.config.ir_feature_dim()),
        head_dims: net.head.dims(),
        epochs_run: 0,
        stopped_early: false,
        best_epoch: None,
        best_val_acc: None,
        final_train_loss: None,
        final_train_acc: None,
        accuracy: None,
        sample_count: 0,
        per_class_accuracy: Vec::new(),
    }
}

fn fill_eval(m: &mut Metrics, report: Option<&EvalReport>) {
    if let Some(r) = report {
        m.accuracy = Some(r.accuracy);
        m.sample_count = r.count;
        m.per_class_accuracy = r.per_class.clone();
    }
}

pub fn load_for(config: &Config) -> Result<LoadedData> {
    load_data(&config.data, config.train.validation_fraction, config.seed, config.model.clip_size)
}

/// Train in memory and evaluate the resulting model on the test split.
pub fn train_and_test(config: &Config, data: &LoadedData) -> Result<(Trainer, Option<EvalReport>)> {
    let mut t = Trainer::new(config, data)?;
    t.run(data, None, &mut |_| Ok(()))?;
    let test = if data.plan.test.is_empty() { None } else { Some(evaluate(&t.net, data, &data.plan.test, &t.config)?) };
    Ok((t, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub progress: Progress,
    pub metrics: Option<Metrics>,
    pub out: PathBuf,
}

/// The `train` verb: train (optionally resuming and optionally stopping
/// after `step_budget` steps), then write the run directory.
pub fn train_command(
    config: &Config,
    out: &Path,
    resume: Option<&Path>,
    step_budget: Option<usize>,
    command: &str,
    verbose: bool,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out).at(out)?;
    let data = load_for(config)?;
    let mut trainer = match resume {
        Some(p) => Trainer::from_archive(config, &data, &Archive::read(p)?)?,
        None => Trainer::new(config, &data)?,
    };
    trainer.verbose = verbose;
    let every = trainer.config.train.checkpoint_every;
    let resume_path = out.join(RESUME_CKPT);
    let progress = trainer.run(&data, step_budget, &mut |t| {
        if every > 0 && t.adam.step_count % every as u64 == 0 {
            t.to_archive()?.write(&resume_path)?;
        }
        Ok(())
    })?;
    let cfg = trainer.config.clone();
    write_epochs(&out.join(EPOCHS_CSV), &trainer.history, cfg.deterministic)?;
    write_timings(&out.join(TIMINGS_CSV), &trainer.history)?;
    write_steps(&out.join(STEPS_CSV), &trainer.steps)?;
    write_windows(&out.join(WINDOWS_CSV), &trainer.draws)?;
    if progress == Progress::Paused {
        trainer.to_archive()?.write(&resume_path)?;
        write_run_manifest(out, command, &cfg)?;
        return Ok(TrainOutcome { progress, metrics: None, out: out.to_path_buf() });
    }
    model_archive(&trainer.net, &cfg)?.write(&out.join(MODEL_CKPT))?;
    let test = if data.plan.test.is_empty() { None } else { Some(evaluate(&trainer.net, &data, &data.plan.test, &cfg)?) };
    let mut m = base_metrics(&trainer.net, &cfg, "test");
    m.epochs_run = trainer.history.len();
    m.stopped_early = trainer.stopped_early;
    m.best_epoch = trainer.best.as_ref().map(|b| b.epoch);
    m.best_val_acc = trainer.best.as_ref().map(|b| b.val_acc);
    m.final_train_loss = trainer.history.last().map(|h| h.train_loss);
    m.final_train_acc = trainer.history.last().map(|h| h.train_acc);
    fill_eval(&mut m, test.as_ref());
    if let Some(r) = &test {
        write_confusion(&out.join(CONFUSION_CSV), r, &data.manifest.class_names)?;
    }
    write_json(&out.join(METRICS_JSON), &m)?;
    write_run_manifest(out, command, &cfg)?;
    Ok(TrainOutcome { progress, metrics: Some(m), out: out.to_path_buf() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Validation,
    Test,
}

impl EvalSplit {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "validation" | "val" => Ok(EvalSplit::Validation),
            "test" => Ok(EvalSplit::Test),
            other => Err(Error::Usage(format!("unknown split `{other}` (train, validation, test)"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Validation => "validation",
            EvalSplit::Test => "test",
        }
    }
}

/// The `eval` verb: score a saved model on one split of its dataset.
/// `data_path` replaces the dataset recorded in the checkpoint when given.
pub fn eval_command(checkpoint: &Path, data_path: Option<&str>, split: EvalSplit, out: &Path, command: &str) -> Result<Metrics> {
    std::fs::create_dir_all(out).at(out)?;
    let (net, mut cfg) = load_model(&Archive::read(checkpoint)?)?;
    if let Some(p) = data_path {
        cfg.data.path = p.to_string();
    }
    let data = load_for(&cfg)?;
    if data.manifest.class_count != net.config.class_count {
        return Err(Error::data(format!(
            "model has {} classes, dataset {}",
            net.config.class_count, data.manifest.class_count
        )));
    }
    let indices = match split {
        EvalSplit::Train => &data.plan.train,
        EvalSplit::Validation => &data.plan.validation,
        EvalSplit::Test => &data.plan.test,
    };
    let report = evaluate(&net, &data, indices, &cfg)?;
    let mut m = base_metrics(&net, &cfg, split.name());
    fill_eval(&mut m, Some(&report));
    write_confusion(&out.join(CONFUSION_CSV), &report, &data.manifest.class_names)?;
    write_json(&out.join(METRICS_JSON), &m)?;
    write_run_manifest(out, command, &cfg)?;
    Ok(m)
}
