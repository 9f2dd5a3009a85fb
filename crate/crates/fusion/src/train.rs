//! Training and evaluation loops.
//!
//! Every random choice is keyed by the root seed: the shuffle of epoch `e`,
//! the augmentation of sample `i` in epoch `e` (separately for the skeleton
//! and IR streams) and the dropout masks of each batch. Batch composition and
//! the float operation order are therefore fixed by the seed alone, which is
//! what makes resumed runs reproduce uninterrupted ones.

use std::time::Instant;

use fusion_core::layers::Mode;
use fusion_core::model::{FusionNetwork, Inputs, ModelConfig, Streams};
use fusion_core::optim::{clip_gradients, AdamConfig, AdamState, DEFAULT_CLIP_NORM, DEFAULT_LEARNING_RATE};
use fusion_core::rng::{derive_path, rng_for, stream};
use fusion_core::{ParamStore, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Archive, Dtype, EntryKind};
use crate::config::Config;
use crate::dataset::{augment_seed, ir_clip, skeleton_map, skeleton_rotation, Augment, LoadedData, Sampling};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub mode: Streams,
    pub eval_sampling: Sampling,
    /// Share of the training split held out for model selection; 0 disables it.
    pub validation_fraction: f64,
    /// Stop once an epoch's training accuracy reaches this; 0 never stops early.
    pub target_train_accuracy: f64,
    /// Write a resumable checkpoint every this many optimizer steps; 0 is off.
    pub checkpoint_every: usize,
    pub augment: bool,
    /// Keep the weights of the best validation epoch as the final model.
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: DEFAULT_CLIP_NORM,
            epochs: 50,
            mode: Streams::Fusion,
            eval_sampling: Sampling::Midpoint,
            validation_fraction: 0.05,
            target_train_accuracy: 0.0,
            checkpoint_every: 0,
            augment: true,
            select_best: true,
        }
    }
}

impl TrainConfig {
    /// Draw policy of training batches; with augmentation off, frames are
    /// still sampled at random but nothing is rotated or mirrored.
    pub fn train_augment(&self) -> Augment {
        if self.augment {
            Augment::TRAIN
        } else {
            Augment { sampling: Sampling::Random, ..Augment::EVAL }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.batch_size < 2 {
            return bad(format!("train.batch_size must be >= 2 for batch norm, got {}", self.batch_size));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("train.learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("train.clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.epochs == 0 {
            return bad("train.epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("train.validation_fraction must be in [0, 1), got {}", self.validation_fraction));
        }
        if !(0.0..=1.0).contains(&self.target_train_accuracy) {
            return bad(format!("train.target_train_accuracy must be in [0, 1], got {}", self.target_train_accuracy));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub seconds: f64,
    pub steps: u64,
    /// Seed the epoch's shuffle was drawn from.
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

/// IR frame choice made for one sample in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawLog {
    pub epoch: usize,
    pub sample: String,
    pub flipped: bool,
    pub indices: Vec<usize>,
}

/// Position inside the run plus the accumulators of the current epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cursor {
    pub epoch: usize,
    pub batch: usize,
    pub loss_sum: f64,
    pub correct: usize,
    pub seen: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Best {
    pub epoch: usize,
    pub val_acc: f64,
    pub params: ParamStore<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Finished,
    /// The step budget ran out before the run completed.
    Paused,
}

/// One preprocessed batch.
pub struct Batch {
    pub inputs: Inputs<f32>,
    pub labels: Vec<usize>,
    pub draws: Vec<(usize, Vec<usize>, bool)>,
}

/// Epoch key used for evaluation-time draws.
const EVAL_EPOCH: usize = usize::MAX;

/// Preprocess the samples `indices` (manifest positions) into network inputs.
pub fn build_batch(
    data: &LoadedData,
    indices: &[usize],
    model: &ModelConfig,
    streams: Streams,
    root: u64,
    epoch: usize,
    augment: Augment,
) -> Result<Batch> {
    let extrema = data.prep.extrema.extrema()?;
    let (mut maps, mut clips, mut labels, mut draws) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &i in indices {
        let s = data.sample(i);
        labels.push(s.label);
        if streams.uses_pose() {
            let rot = skeleton_rotation(augment, augment_seed(root, epoch, i, stream::SKELETON));
            maps.push(skeleton_map(s, &extrema, model.map_size, rot.as_ref())?.to_tensor::<f32>());
        }
        if streams.uses_ir() {
            if s.frames.width != model.clip_size {
                return Err(Error::data(format!("{}: frames cached at {} px, model wants {}", s.id, s.frames.width, model.clip_size)));
            }
            let (clip, flipped) = ir_clip(s, model.clip_length, augment, augment_seed(root, epoch, i, stream::INFRARED))?;
            draws.push((i, clip.source_indices.clone(), flipped));
            clips.push(clip.to_tensor::<f32>());
        }
    }
    let stack = |v: Vec<Tensor<f32>>| -> Result<Option<Tensor<f32>>> {
        if v.is_empty() {
            Ok(None)
        } else {
            Ok(Some(Tensor::stack(&v)?))
        }
    };
    Ok(Batch { inputs: Inputs { maps: stack(maps)?, clips: stack(clips)? }, labels, draws })
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the split.
    pub per_class: Vec<Option<f64>>,
    /// Row = true class, column = predicted class.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(class_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::data("cannot evaluate an empty split"));
        }
        let mut confusion = vec![vec![0; class_count]; class_count];
        for &(truth, pred) in pairs {
            if truth >= class_count || pred >= class_count {
                return Err(Error::data(format!("class {} outside {class_count} classes", truth.max(pred))));
            }
            confusion[truth][pred] += 1;
        }
        let correct = (0..class_count).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(EvalReport { count: pairs.len(), correct, accuracy: correct as f64 / pairs.len() as f64, per_class, confusion })
    }
}

/// Eval-mode accuracy over `indices`. Takes the network by shared
/// reference, so parameters and running statistics cannot change.
pub fn evaluate(net: &FusionNetwork<f32>, data: &LoadedData, indices: &[usize], config: &Config) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::data("cannot evaluate an empty split"));
    }
    let augment = Augment { rotate: false, flip: false, sampling: config.train.eval_sampling };
    let mut pairs = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(config.train.batch_size) {
        let batch = build_batch(data, chunk, &net.config, net.streams, config.seed, EVAL_EPOCH, augment)?;
        let probs = net.predict(&batch.inputs)?;
        let c = net.config.class_count;
        for (row, &label) in probs.data().chunks(c).zip(&batch.labels) {
            pairs.push((label, argmax(row)));
        }
    }
    EvalReport::from_predictions(net.config.class_count, &pairs)
}

/// Training indices of epoch `epoch` in visiting order.
pub fn epoch_order(train: &[usize], root: u64, epoch: usize) -> (Vec<usize>, u64) {
    let seed = derive_path(root, &[stream::SHUFFLE, epoch as u64]);
    let mut order = train.to_vec();
    order.shuffle(&mut rng_for(seed));
    (order, seed)
}

/// Split an epoch into batches. A trailing batch of one sample is dropped
/// because training-mode batch norm needs two.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
    }
    out
}

pub struct Trainer {
    pub config: Config,
    pub net: FusionNetwork<f32>,
    pub adam: AdamState<f32>,
    pub cursor: Cursor,
    pub history: Vec<EpochReport>,
    pub steps: Vec<StepRecord>,
    pub draws: Vec<DrawLog>,
    pub best: Option<Best>,
    pub stopped_early: bool,
    pub finished: bool,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

impl Trainer {
    /// Fresh trainer; the class count follows the dataset.
    pub fn new(config: &Config, data: &LoadedData) -> Result<Self> {
        let mut config = config.clone();
        config.model.class_count = data.manifest.class_count;
        config.train.validate()?;
        config.model.validate().map_err(|e| Error::Usage(e.to_string()))?;
        let net = FusionNetwork::new(&config.model, config.train.mode, config.seed)?;
        let adam = AdamState::new(net.params(), AdamConfig { learning_rate: config.train.learning_rate, ..AdamConfig::default() });
        Ok(Trainer {
            config,
            net,
            adam,
            cursor: Cursor::default(),
            history: Vec::new(),
            steps: Vec::new(),
            draws: Vec::new(),
            best: None,
            stopped_early: false,
            finished: false,
            verbose: false,
        })
    }

    fn step(&mut self, data: &LoadedData, batch_ids: &[usize]) -> Result<()> {
        let cfg = &self.config;
        let augment = cfg.train.train_augment();
        let epoch = self.cursor.epoch;
        let batch = build_batch(data, batch_ids, &cfg.model, cfg.train.mode, cfg.seed, epoch, augment)?;
        let dropout_seed = derive_path(cfg.seed, &[stream::DROPOUT, epoch as u64, self.cursor.batch as u64]);

        let (loss, preds, mut grads, updates) = {
            let mut g = self.net.graph();
            let logits = self.net.logits(&mut g, &batch.inputs, Mode::Train, dropout_seed)?;
            let c = self.net.config.class_count;
            let preds: Vec<usize> = g.value(logits).chunks(c).map(argmax).collect();
            let loss_var = g.softmax_cross_entropy(logits, &batch.labels)?;
            let loss = g.value(loss_var)[0] as f64;
            if !loss.is_finite() {
                return Err(self.numerical_failure(data, batch_ids, format!("loss is {loss}")));
            }
            let grads = g.backward(loss_var)?;
            (loss, preds, grads, g.into_stat_updates())
        };
        let clip = clip_gradients(&mut grads, cfg.train.clip_norm);
        if !clip.norm.is_finite() {
            return Err(self.numerical_failure(data, batch_ids, format!("gradient norm is {}", clip.norm)));
        }
        self.adam.step(self.net.params_mut(), &grads)?;
        self.net.params_mut().apply_stat_updates(updates);

        let n = batch_ids.len();
        self.cursor.loss_sum += loss * n as f64;
        self.cursor.seen += n;
        self.cursor.correct += preds.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
        self.steps.push(StepRecord {
            step: self.adam.step_count,
            epoch,
            batch: self.cursor.batch,
            loss,
            grad_norm: clip.norm,
            clipped_norm: clip.norm * clip.scale,
        });
        for (i, indices, flipped) in batch.draws {
            self.draws.push(DrawLog { epoch, sample: data.sample(i).id.clone(), flipped, indices });
        }
        Ok(())
    }

    fn numerical_failure(&self, data: &LoadedData, batch_ids: &[usize], what: String) -> Error {
        let ids: Vec<&str> = batch_ids.iter().map(|&i| data.sample(i).id.as_str()).collect();
        let norms: Vec<String> = self.steps.iter().rev().take(5).map(|s| format!("{:.4e}", s.grad_norm)).collect();
        Error::Numerical(format!(
            "{what} at epoch {} batch {}; batch samples [{}]; gradient norms of the last steps (newest first) [{}]",
            self.cursor.epoch,
            self.cursor.batch,
            ids.join(", "),
            norms.join(", ")
        ))
    }

    fn finish_epoch(&mut self, data: &LoadedData, shuffle_seed: u64) -> Result<()> {
        let c = std::mem::take(&mut self.cursor);
        let val_acc = if data.plan.validation.is_empty() {
            None
        } else {
            Some(evaluate(&self.net, data, &data.plan.validation, &self.config)?.accuracy)
        };
        let seen = c.seen.max(1) as f64;
        let report = EpochReport {
            epoch: c.epoch,
            train_loss: c.loss_sum / seen,
            train_acc: c.correct as f64 / seen,
            val_acc,
            seconds: c.seconds,
            steps: self.adam.step_count,
            shuffle_seed,
        };
        if let Some(v) = val_acc {
            if self.best.as_ref().is_none_or(|b| v > b.val_acc) {
                self.best = Some(Best { epoch: c.epoch, val_acc: v, params: self.net.params().clone() });
            }
        }
        let target = self.config.train.target_train_accuracy;
        self.stopped_early = target > 0.0 && report.train_acc >= target;
        if self.verbose {
            let val = report.val_acc.map_or_else(String::new, |v| format!(" val_acc {v:.4}"));
            eprintln!(
                "epoch {:3} loss {:.4} train_acc {:.4}{val} ({:.1} s)",
                report.epoch, report.train_loss, report.train_acc, report.seconds
            );
        }
        self.history.push(report);
        self.cursor = Cursor { epoch: c.epoch + 1, ..Cursor::default() };
        Ok(())
    }

    /// Train until done or until `budget` optimizer steps have been taken in
    /// this call. `on_step` runs after every step (checkpoint hook).
    pub fn run(
        &mut self,
        data: &LoadedData,
        budget: Option<usize>,
        on_step: &mut dyn FnMut(&Trainer) -> Result<()>,
    ) -> Result<Progress> {
        let mut taken = 0;
        while !self.finished && !self.stopped_early && self.cursor.epoch < self.config.train.epochs {
            let (order, shuffle_seed) = epoch_order(&data.plan.train, self.config.seed, self.cursor.epoch);
            let plan = batches(&order, self.config.train.batch_size);
            if plan.is_empty() {
                return Err(Error::data("training split is too small for one batch of two samples"));
            }
            while self.cursor.batch < plan.len() {
                if budget.is_some_and(|b| taken >= b) {
                    return Ok(Progress::Paused);
                }
                let t0 = Instant::now();
                self.step(data, &plan[self.cursor.batch])?;
                self.cursor.batch += 1;
                self.cursor.seconds += t0.elapsed().as_secs_f64();
                taken += 1;
                on_step(self)?;
            }
            let t0 = Instant::now();
            self.finish_epoch(data, shuffle_seed)?;
            if let Some(last) = self.history.last_mut() {
                last.seconds += t0.elapsed().as_secs_f64();
            }
        }
        if !self.finished {
            self.finished = true;
            if self.config.train.select_best {
                if let Some(b) = &self.best {
                    *self.net.params_mut() = b.params.clone();
                }
            }
        }
        Ok(Progress::Finished)
    }

    /// Everything needed to continue this run bit-exactly.
    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new(Dtype::F32);
        a.add_store(self.net.params(), "")?;
        for (id, e) in self.net.params().entries() {
            if !self.adam.first_moment[id.index()].is_empty() {
                a.push_vec(&format!("adam.m.{}", e.name), EntryKind::State, &self.adam.first_moment[id.index()])?;
                a.push_vec(&format!("adam.v.{}", e.name), EntryKind::State, &self.adam.second_moment[id.index()])?;
            }
        }
        if let Some(b) = &self.best {
            for (_, e) in b.params.entries() {
                let data = e.tensor.data().iter().map(|&v| v as f64).collect();
                a.push(&format!("best.{}", e.name), e.tensor.shape(), EntryKind::State, data)?;
            }
        }
        a.metadata = serde_json::json!({
            "kind": "trainer",
            "config": self.config.to_toml(),
            "adam_step": self.adam.step_count,
            "cursor": self.cursor,
            "history": self.history,
            "steps": self.steps,
            "draws": self.draws,
            "best": self.best.as_ref().map(|b| serde_json::json!({"epoch": b.epoch, "val_acc": b.val_acc})),
            "stopped_early": self.stopped_early,
            "finished": self.finished,
        });
        Ok(a)
    }

    /// Rebuild a trainer from [`Trainer::to_archive`] output. The network is
    /// constructed from `config`; any tensor name or shape disagreement with
    /// the archive is reported in full.
    pub fn from_archive(config: &Config, data: &LoadedData, archive: &Archive) -> Result<Self> {
        let mut t = Trainer::new(config, data)?;
        archive.load_into(t.net.params_mut(), "")?;
        let meta = &archive.metadata;
        if meta["kind"] != "trainer" {
            return Err(Error::data("archive holds weights only, not a resumable trainer state"));
        }
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::data(format!("checkpoint metadata lacks `{k}`")));
        t.adam.step_count = serde_json::from_value(field("adam_step")?)?;
        let names: Vec<(usize, String)> = t.net.params().entries().map(|(id, e)| (id.index(), e.name.clone())).collect();
        for (i, name) in names {
            if !t.adam.first_moment[i].is_empty() {
                t.adam.first_moment[i] = archive.vec(&format!("adam.m.{name}"))?;
                t.adam.second_moment[i] = archive.vec(&format!("adam.v.{name}"))?;
            }
        }
        t.cursor = serde_json::from_value(field("cursor")?)?;
        t.history = serde_json::from_value(field("history")?)?;
        t.steps = serde_json::from_value(field("steps")?)?;
        t.draws = serde_json::from_value(field("draws")?)?;
        t.stopped_early = serde_json::from_value(field("stopped_early")?)?;
        t.finished = serde_json::from_value(field("finished")?)?;
        if let Some(b) = meta.get("best").filter(|b| !b.is_null()) {
            let mut params = t.net.params().clone();
            archive.load_into(&mut params, "best.")?;
            t.best = Some(Best {
                epoch: serde_json::from_value(b["epoch"].clone())?,
                val_acc: serde_json::from_value(b["val_acc"].clone())?,
                params,
            });
        }
        Ok(t)
    }
}

/// Weights-only archive of a network plus its configuration.
pub fn model_archive(net: &FusionNetwork<f32>, config: &Config) -> Result<Archive> {
    let mut a = Archive::from_store(net.params())?;
    a.metadata = serde_json::json!({ "kind": "model", "streams": net.streams.name(), "config": config.to_toml() });
    Ok(a)
}

/// Rebuild a network from [`model_archive`] output.
pub fn load_model(archive: &Archive) -> Result<(FusionNetwork<f32>, Config)> {
    let text = archive.metadata["config"]
        .as_str()
        .ok_or_else(|| Error::data("model archive lacks its configuration"))?;
    let config = Config::from_toml(text, std::path::Path::new("checkpoint metadata"))?;
    let mut net = FusionNetwork::new(&config.model, config.train.mode, config.seed)?;
    archive.load_into(net.params_mut(), "")?;
    Ok((net, config))
}
