//! Dataset manifests, benchmark splits and the in-memory preprocessed
//! samples the trainer draws from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fusion_core::infrared::{
    assemble_clip, compute_crop_box, crop_sequence, midpoint_windows, resize_frames, sample_windows, CropBox, IrClip,
    IrSequence, CROP_OFFSET_PX,
};
use fusion_core::rng::{derive_path, derive_seed, rng_for, stream};
use fusion_core::skeleton::{
    compute_extrema, encode_skeleton_map, normalize_sequence, resize_map, rotate_sequence, CoordinateExtrema, Rotation,
    SkeletonMap, SkeletonSequence, MAX_ROTATION_DEG,
};
use fusion_core::splits::{split_cross_subject, split_cross_view, validation_split, Assignment, SampleMeta};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, SplitKind};
use crate::error::{Error, IoContext, Result};
use crate::irio::load_ir;
use crate::ntu::load_skeleton;
use crate::synth::{Intrinsics, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EXTREMA_FILE: &str = "extrema.json";
pub const CROPS_FILE: &str = "crops.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Paths relative to the dataset directory.
    pub skeleton: String,
    pub ir: String,
    pub meta: SampleMeta,
}

/// Generator provenance recorded with synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInfo {
    pub seed: u64,
    pub config: SynthConfig,
    pub intrinsics: Intrinsics,
    pub camera_height_m: f64,
    pub camera_yaw_deg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticInfo>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").at(path)
    }

    /// Read `dir/manifest.json`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).at(&path)?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(&s.id) {
                return Err(Error::data(format!("duplicate sample id {}", s.id)));
            }
            if s.meta.label() >= self.class_count {
                return Err(Error::data(format!("{}: class {} outside {} classes", s.id, s.meta.action_class, self.class_count)));
            }
        }
        Ok(())
    }

    /// Build a manifest for an NTU-style directory: `skeletons/<id>.skeleton`
    /// with IR under `ir/<id>.ir`, `ir/<id>.raw` or a frame directory `ir/<id>/`.
    pub fn scan_ntu(dir: &Path) -> Result<Self> {
        let sk_dir = dir.join("skeletons");
        let mut samples = Vec::new();
        for entry in std::fs::read_dir(&sk_dir).at(&sk_dir)? {
            let path = entry.at(&sk_dir)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("skeleton") {
                continue;
            }
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let meta = SampleMeta::parse(&name).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
            let ir = ["ir", "raw", ""]
                .iter()
                .map(|ext| if ext.is_empty() { format!("ir/{name}") } else { format!("ir/{name}.{ext}") })
                .find(|p| dir.join(p).exists())
                .ok_or_else(|| Error::data(format!("no IR data for {name} under {}", dir.join("ir").display())))?;
            samples.push(SampleEntry { id: name.clone(), skeleton: format!("skeletons/{name}.skeleton"), ir, meta });
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let class_count = samples.iter().map(|s| s.meta.action_class as usize).max().unwrap_or(0);
        let m = DatasetManifest {
            class_count,
            class_names: (1..=class_count).map(|c| format!("A{c:03}")).collect(),
            samples,
            synthetic: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }
}

/// Sample indices per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Identifies the benchmark split the training set came from.
    pub split_id: String,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_id(data: &DataConfig) -> String {
    match data.split {
        SplitKind::CrossView => "cross_view".into(),
        SplitKind::CrossSubject => {
            let ids: Vec<String> = data.train_subjects.iter().map(|i| i.to_string()).collect();
            format!("cross_subject[{}]", ids.join(","))
        }
        SplitKind::All => "all".into(),
    }
}

/// Benchmark train/test split (before any validation carve-out).
pub fn benchmark_split(manifest: &DatasetManifest, data: &DataConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let metas: Vec<SampleMeta> = manifest.samples.iter().map(|s| s.meta).collect();
    let assignment = match data.split {
        SplitKind::CrossView => split_cross_view(&metas)?,
        SplitKind::CrossSubject => split_cross_subject(&metas, &data.train_subjects)?,
        SplitKind::All => vec![Assignment::Train; metas.len()],
    };
    let pick = |a| assignment.iter().enumerate().filter(|(_, &x)| x == a).map(|(i, _)| i).collect();
    Ok((pick(Assignment::Train), pick(Assignment::Test)))
}

/// Benchmark split plus a seeded validation subset of the training part;
/// a fraction of 0 disables validation.
pub fn plan_split(manifest: &DatasetManifest, data: &DataConfig, validation_fraction: f64, seed: u64) -> Result<SplitPlan> {
    let (train, test) = benchmark_split(manifest, data)?;
    if train.is_empty() {
        return Err(Error::data(format!("split {} leaves no training samples", split_id(data))));
    }
    let (train, validation) = if validation_fraction == 0.0 {
        (train, Vec::new())
    } else {
        validation_split(&train, validation_fraction, derive_seed(seed, stream::VALIDATION))?
    };
    Ok(SplitPlan { split_id: split_id(data), train, validation, test })
}

/// Persisted coordinate range for the map encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremaFile {
    pub c_min: f64,
    pub c_max: f64,
    pub train_split_id: String,
}

impl ExtremaFile {
    pub fn extrema(&self) -> Result<CoordinateExtrema> {
        Ok(CoordinateExtrema::new(self.c_min, self.c_max)?)
    }
}

/// Output of the `prep` stage: train-split extrema and one crop box per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepArtifacts {
    pub extrema: ExtremaFile,
    pub boxes: BTreeMap<String, CropBox>,
}

impl PrepArtifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let e = dir.join(EXTREMA_FILE);
        std::fs::write(&e, serde_json::to_string_pretty(&self.extrema)? + "\n").at(&e)?;
        let c = dir.join(CROPS_FILE);
        std::fs::write(&c, serde_json::to_string_pretty(&self.boxes)? + "\n").at(&c)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            std::fs::read_to_string(&p).at(&p)
        };
        let extrema: ExtremaFile = serde_json::from_str(&read(EXTREMA_FILE)?)?;
        extrema.extrema()?;
        let boxes = serde_json::from_str(&read(CROPS_FILE)?)?;
        Ok(PrepArtifacts { extrema, boxes })
    }
}

/// A decoded sample: normalized skeleton, its raw IR and crop box.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub index: usize,
    pub id: String,
    pub label: usize,
    /// Translation-normalized; 2D projections kept in image pixels.
    pub sequence: SkeletonSequence,
    pub ir: IrSequence,
    pub crop: CropBox,
}

pub fn load_raw_sample(dir: &Path, manifest: &DatasetManifest, index: usize) -> Result<RawSample> {
    let entry = &manifest.samples[index];
    let parsed = load_skeleton(&dir.join(&entry.skeleton))?;
    let sequence = normalize_sequence(&parsed.sequence)?;
    let ir = load_ir(&dir.join(&entry.ir))?;
    let crop = compute_crop_box(parsed.sequence.projections(), CROP_OFFSET_PX)
        .map_err(|e| Error::data(format!("{}: {e}", entry.id)))?;
    Ok(RawSample { index, id: entry.id.clone(), label: entry.meta.label(), sequence, ir, crop })
}

fn load_or_skip(dir: &Path, manifest: &DatasetManifest, index: usize, skip: bool) -> Result<Option<RawSample>> {
    match load_raw_sample(dir, manifest, index) {
        Ok(s) => Ok(Some(s)),
        Err(e) if skip => {
            eprintln!("skipping sample {}: {e}", manifest.samples[index].id);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Compute extrema over the benchmark training split and every sample's crop box.
pub fn prepare(dir: &Path, manifest: &DatasetManifest, data: &DataConfig) -> Result<PrepArtifacts> {
    let (train, _) = benchmark_split(manifest, data)?;
    let mut boxes = BTreeMap::new();
    let mut train_seqs = Vec::new();
    for i in 0..manifest.samples.len() {
        let Some(s) = load_or_skip(dir, manifest, i, data.skip_corrupt)? else { continue };
        boxes.insert(s.id.clone(), s.crop);
        if train.binary_search(&i).is_ok() {
            train_seqs.push(s.sequence);
        }
    }
    let e = compute_extrema(&train_seqs)?;
    Ok(PrepArtifacts { extrema: ExtremaFile { c_min: e.c_min, c_max: e.c_max, train_split_id: split_id(data) }, boxes })
}

/// Sample held in memory for training: normalized skeleton and the cropped
/// IR frames already resized to the network's clip size. Resizing is per
/// frame, so resizing before frame selection gives the same clip as after.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub index: usize,
    pub id: String,
    pub label: usize,
    pub sequence: SkeletonSequence,
    pub frames: IrSequence,
}

pub fn prepare_sample(raw: RawSample, clip_size: usize, crop: Option<&CropBox>) -> PreparedSample {
    let cropped = crop_sequence(&raw.ir, crop.unwrap_or(&raw.crop));
    PreparedSample {
        index: raw.index,
        id: raw.id,
        label: raw.label,
        sequence: raw.sequence,
        frames: resize_frames(&cropped, clip_size, clip_size),
    }
}

/// Random (training) or window-midpoint (evaluation) frame choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Random,
    Midpoint,
}

/// Augmentation switches for one draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    pub rotate: bool,
    pub flip: bool,
    pub sampling: Sampling,
}

impl Augment {
    pub const TRAIN: Augment = Augment { rotate: true, flip: true, sampling: Sampling::Random };
    pub const EVAL: Augment = Augment { rotate: false, flip: false, sampling: Sampling::Midpoint };
}

/// What one preprocessing draw produced, for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawRecord {
    pub rotation_deg: [f64; 3],
    pub flipped: bool,
    pub indices: Vec<usize>,
}

/// Seed of the skeleton (or IR) augmentation stream for one sample in one epoch.
pub fn augment_seed(root: u64, epoch: usize, sample: usize, modality: u64) -> u64 {
    derive_path(root, &[stream::AUGMENT, epoch as u64, sample as u64, modality])
}

pub fn skeleton_map(sample: &PreparedSample, extrema: &CoordinateExtrema, size: usize, rotation: Option<&Rotation>) -> Result<SkeletonMap> {
    let seq = match rotation {
        Some(r) => rotate_sequence(&sample.sequence, r),
        None => sample.sequence.clone(),
    };
    Ok(resize_map(&encode_skeleton_map(&seq, extrema)?, size, size))
}

/// Frame indices and flip decision for the IR stream of one draw.
pub fn ir_draw(frames: usize, t: usize, augment: Augment, seed: u64) -> (Vec<usize>, bool) {
    let mut rng = rng_for(seed);
    let indices = match augment.sampling {
        Sampling::Random => sample_windows(frames, t, &mut rng),
        Sampling::Midpoint => midpoint_windows(frames, t),
    };
    let flip = augment.flip && rng.random_bool(0.5);
    (indices, flip)
}

/// The clip and whether it was mirrored.
pub fn ir_clip(sample: &PreparedSample, t: usize, augment: Augment, seed: u64) -> Result<(IrClip, bool)> {
    let (indices, flip) = ir_draw(sample.frames.frames, t, augment, seed);
    let size = sample.frames.width;
    Ok((assemble_clip(&sample.frames, &indices, size, flip)?, flip))
}

pub fn skeleton_rotation(augment: Augment, seed: u64) -> Option<Rotation> {
    augment.rotate.then(|| Rotation::sample(&mut rng_for(seed), MAX_ROTATION_DEG))
}

/// Dataset directory plus everything loaded from it for one run.
pub struct LoadedData {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub prep: PrepArtifacts,
    pub plan: SplitPlan,
    /// Indexed by manifest position; only samples in the plan are loaded.
    pub samples: BTreeMap<usize, PreparedSample>,
}

impl LoadedData {
    pub fn sample(&self, index: usize) -> &PreparedSample {
        &self.samples[&index]
    }
}

/// Load the manifest, prep artifacts (computed if `data.prep` is empty),
/// the split plan and every sample the plan references.
pub fn load_data(data: &DataConfig, validation_fraction: f64, seed: u64, clip_size: usize) -> Result<LoadedData> {
    if data.path.is_empty() {
        return Err(Error::Usage("no dataset: set data.path or pass --data".into()));
    }
    let dir = PathBuf::from(&data.path);
    let manifest = DatasetManifest::load(&dir)?;
    let prep = if data.prep.is_empty() { prepare(&dir, &manifest, data)? } else { PrepArtifacts::load(Path::new(&data.prep))? };
    if prep.extrema.train_split_id != split_id(data) {
        return Err(Error::data(format!(
            "extrema were computed on split `{}`, run uses `{}`",
            prep.extrema.train_split_id,
            split_id(data)
        )));
    }
    let mut plan = plan_split(&manifest, data, validation_fraction, seed)?;
    let mut samples = BTreeMap::new();
    for &i in plan.train.iter().chain(&plan.validation).chain(&plan.test) {
        let Some(raw) = load_or_skip(&dir, &manifest, i, data.skip_corrupt)? else { continue };
        let crop = prep.boxes.get(&raw.id).copied();
        samples.insert(i, prepare_sample(raw, clip_size, crop.as_ref()));
    }
    for part in [&mut plan.train, &mut plan.validation, &mut plan.test] {
        part.retain(|i| samples.contains_key(i));
    }
    Ok(LoadedData { dir, manifest, prep, plan, samples })
}
