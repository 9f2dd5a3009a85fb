//! Debug artifacts for one sample: its skeleton map, the crop box drawn on
//! the frames a clip would use, and the window indices behind that clip.

use std::path::{Path, PathBuf};

use fusion_core::infrared::{window_frames, CropBox, IrSequence};
use fusion_core::rng::stream;
use fusion_core::skeleton::{encode_skeleton_map, resize_map, SkeletonMap};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{augment_seed, ir_draw, load_raw_sample, prepare, Augment, DatasetManifest, PrepArtifacts};
use crate::error::{Error, IoContext, Result};
use crate::irio::save_png;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub sample: String,
    /// `None` for evaluation-time (midpoint) sampling.
    pub epoch: Option<usize>,
    pub seed: u64,
    pub clip_length: usize,
    pub frames: usize,
    /// Integer frame range `[lo, hi)` of each window.
    pub windows: Vec<(usize, usize)>,
    pub indices: Vec<usize>,
    pub flipped: bool,
    pub crop_box: CropBox,
}

#[derive(Debug, Clone)]
pub struct InspectOutput {
    pub dir: PathBuf,
    pub map_png: PathBuf,
    pub map_resized_png: PathBuf,
    pub overlays: Vec<PathBuf>,
    pub windows_json: PathBuf,
    pub report: WindowReport,
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn map_png(path: &Path, map: &SkeletonMap) -> Result<()> {
    let mut bytes = Vec::with_capacity(map.rows * map.cols * 3);
    for r in 0..map.rows {
        for c in 0..map.cols {
            for k in 0..3 {
                bytes.push(to_byte(map.pixel(k, r, c)));
            }
        }
    }
    save_png(path, map.cols, map.rows, 3, bytes)
}

/// Grayscale frame as RGB with the box outline in red (clipped to the frame).
pub fn overlay_frame(seq: &IrSequence, t: usize, b: &CropBox) -> Vec<u8> {
    let (w, h) = (seq.width as i64, seq.height as i64);
    let mut bytes = Vec::with_capacity(seq.width * seq.height * 3);
    for y in 0..h {
        for x in 0..w {
            let on_x = (x == b.x_min || x == b.x_max - 1) && (b.y_min..b.y_max).contains(&y);
            let on_y = (y == b.y_min || y == b.y_max - 1) && (b.x_min..b.x_max).contains(&x);
            if on_x || on_y {
                bytes.extend_from_slice(&[255, 0, 0]);
            } else {
                let g = to_byte(seq.pixel(t, y as usize, x as usize) as f64);
                bytes.extend_from_slice(&[g, g, g]);
            }
        }
    }
    bytes
}

/// Write the artifacts for `sample_id` under `out/inspect/`. With `epoch`,
/// the windows are those the training run drew in that epoch.
pub fn inspect(config: &Config, sample_id: &str, epoch: Option<usize>, out: &Path) -> Result<InspectOutput> {
    let dir = PathBuf::from(&config.data.path);
    let manifest = DatasetManifest::load(&dir)?;
    let index = manifest
        .index_of(sample_id)
        .ok_or_else(|| Error::data(format!("no sample `{sample_id}` in {}", dir.display())))?;
    let prep = if config.data.prep.is_empty() {
        prepare(&dir, &manifest, &config.data)?
    } else {
        PrepArtifacts::load(Path::new(&config.data.prep))?
    };
    let raw = load_raw_sample(&dir, &manifest, index)?;
    let crop = prep.boxes.get(sample_id).copied().unwrap_or(raw.crop);
    let extrema = prep.extrema.extrema()?;

    let dest = out.join("inspect");
    std::fs::create_dir_all(&dest).at(&dest)?;
    let map = encode_skeleton_map(&raw.sequence, &extrema)?;
    let map_path = dest.join(format!("{sample_id}_map.png"));
    map_png(&map_path, &map)?;
    let resized_path = dest.join(format!("{sample_id}_map_{}.png", config.model.map_size));
    map_png(&resized_path, &resize_map(&map, config.model.map_size, config.model.map_size))?;

    let t = config.model.clip_length;
    let frames = raw.ir.frames;
    let (indices, flipped) = match epoch {
        Some(e) => ir_draw(frames, t, config.train.train_augment(), augment_seed(config.seed, e, index, stream::INFRARED)),
        None => {
            let eval = Augment { sampling: config.train.eval_sampling, ..Augment::EVAL };
            ir_draw(frames, t, eval, augment_seed(config.seed, usize::MAX, index, stream::INFRARED))
        }
    };
    let mut overlays = Vec::new();
    for (k, &f) in indices.iter().enumerate() {
        let p = dest.join(format!("{sample_id}_crop_{k:02}_f{f:04}.png"));
        save_png(&p, raw.ir.width, raw.ir.height, 3, overlay_frame(&raw.ir, f, &crop))?;
        overlays.push(p);
    }
    let report = WindowReport {
        sample: sample_id.to_string(),
        epoch,
        seed: config.seed,
        clip_length: t,
        frames,
        windows: (0..t).map(|w| window_frames(frames, t, w)).collect(),
        indices,
        flipped,
        crop_box: crop,
    };
    let windows_json = dest.join(format!("{sample_id}_windows.json"));
    crate::report::write_json(&windows_json, &report)?;
    Ok(InspectOutput { dir: dest, map_png: map_path, map_resized_png: resized_path, overlays, windows_json, report })
}
