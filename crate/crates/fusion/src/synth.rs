//! Synthetic desk-scale dataset: a 25-joint stick figure animated per class,
//! written as NTU skeleton files plus IR clips rendered under a pinhole camera.

use std::f64::consts::PI;
use std::path::Path;

use fusion_core::infrared::IrSequence;
use fusion_core::rng::{derive_path, rng_for, stream};
use fusion_core::skeleton::{SkeletonSequence, SubjectTrack, JOINTS};
use fusion_core::splits::SampleMeta;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, SampleEntry, SyntheticInfo, MANIFEST_FILE};
use crate::error::{Error, IoContext, Result};
use crate::irio::{write_raw, BitDepth};
use crate::ntu::{from_sequence, write_skeleton_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// IR frame extents in pixels.
    pub width: usize,
    pub height: usize,
    /// Standard deviation of the additive Gaussian noise on [0,1] intensities.
    pub noise_sigma: f64,
    /// Camera ids cycle 1..=cameras; each views the scene from its own yaw.
    pub cameras: usize,
    pub performers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            per_class: 32,
            frames_min: 24,
            frames_max: 40,
            width: 128,
            height: 104,
            noise_sigma: 0.02,
            cameras: 3,
            performers: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Usage(format!("synth: {m}")));
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.per_class == 0 || self.cameras == 0 || self.performers == 0 {
            return bad("per_class, cameras and performers must be >= 1");
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return bad("need 1 <= frames_min <= frames_max");
        }
        if self.width < 16 || self.height < 16 {
            return bad("frames must be at least 16x16");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if self.classes > 999 || self.cameras > 999 || self.performers > 999 {
            return bad("ids are limited to three digits");
        }
        Ok(())
    }
}

/// Pinhole camera: `u = cx + fx·X/Z`, `v = cy − fy·Y/Z` (Y up, Z away from the camera).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn for_frame(width: usize, height: usize) -> Self {
        let f = 0.9 * width as f64;
        Intrinsics { fx: f, fy: f, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }

    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.cx + self.fx * p[0] / p[2], self.cy - self.fy * p[1] / p[2]]
    }
}

/// Camera height above the floor, meters.
const CAMERA_HEIGHT: f64 = 1.0;
/// Yaw of camera `k` (1-based) around the scene's vertical axis, degrees.
fn camera_yaw(camera_id: u32) -> f64 {
    match camera_id % 3 {
        1 => 0.0,
        2 => 30.0,
        _ => -30.0,
    }
}

pub const MOTIONS: [&str; 8] =
    ["raise_right_arm", "squat", "wave_left_hand", "approach", "kick_right", "bow", "jump", "raise_both_arms"];

pub fn class_name(c: usize) -> String {
    let base = MOTIONS[c % MOTIONS.len()];
    match c / MOTIONS.len() {
        0 => base.to_string(),
        v => format!("{base}_x{}", v + 1),
    }
}

/// Kinect v2 bone list (child, parent).
pub const BONES: [(usize, usize); 24] = [
    (1, 0), (20, 1), (2, 20), (3, 2), (4, 20), (5, 4), (6, 5), (7, 6), (21, 7), (22, 6), (8, 20), (9, 8),
    (10, 9), (11, 10), (23, 11), (24, 10), (12, 0), (13, 12), (14, 13), (15, 14), (16, 0), (17, 16), (18, 17), (19, 18),
];

const LEFT_ARM: [usize; 5] = [5, 6, 7, 21, 22];
const RIGHT_ARM: [usize; 5] = [9, 10, 11, 23, 24];
const LEFT_FOREARM: [usize; 4] = [6, 7, 21, 22];
const RIGHT_LEG: [usize; 3] = [17, 18, 19];
const LEFT_LEG: [usize; 3] = [13, 14, 15];
const UPPER_BODY: [usize; 19] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 20, 21, 22, 23, 24, 12, 16, 0];

/// Rest pose in the body frame (meters): x to the figure's left, y up from
/// the floor, z forward.
fn rest_pose() -> [[f64; 3]; JOINTS] {
    let mut p = [[0.0; 3]; JOINTS];
    p[0] = [0.0, 0.95, 0.0];
    p[1] = [0.0, 1.20, 0.0];
    p[20] = [0.0, 1.42, 0.0];
    p[2] = [0.0, 1.50, 0.0];
    p[3] = [0.0, 1.65, 0.0];
    p[4] = [0.18, 1.40, 0.0];
    p[5] = [0.22, 1.12, 0.0];
    p[6] = [0.24, 0.88, 0.0];
    p[7] = [0.24, 0.80, 0.0];
    p[21] = [0.24, 0.72, 0.0];
    p[22] = [0.21, 0.79, 0.04];
    p[12] = [0.09, 0.92, 0.0];
    p[13] = [0.10, 0.50, 0.0];
    p[14] = [0.10, 0.08, 0.0];
    p[15] = [0.10, 0.03, 0.10];
    for (r, l) in [(8, 4), (9, 5), (10, 6), (11, 7), (23, 21), (24, 22), (16, 12), (17, 13), (18, 14), (19, 15)] {
        p[r] = [-p[l][0], p[l][1], p[l][2]];
    }
    p
}

/// Rotate `joints` about `pivot` by `angle` radians around a unit axis.
fn rotate_about(pose: &mut [[f64; 3]; JOINTS], joints: &[usize], pivot: [f64; 3], axis: [f64; 3], angle: f64) {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let m = [
        [c + x * x * (1.0 - c), x * y * (1.0 - c) - z * s, x * z * (1.0 - c) + y * s],
        [y * x * (1.0 - c) + z * s, c + y * y * (1.0 - c), y * z * (1.0 - c) - x * s],
        [z * x * (1.0 - c) - y * s, z * y * (1.0 - c) + x * s, c + z * z * (1.0 - c)],
    ];
    for &j in joints {
        let d = [pose[j][0] - pivot[0], pose[j][1] - pivot[1], pose[j][2] - pivot[2]];
        for k in 0..3 {
            pose[j][k] = pivot[k] + m[k][0] * d[0] + m[k][1] * d[1] + m[k][2] * d[2];
        }
    }
}

fn shift(pose: &mut [[f64; 3]; JOINTS], joints: &[usize], d: [f64; 3]) {
    for &j in joints {
        for k in 0..3 {
            pose[j][k] += d[k];
        }
    }
}

const X: [f64; 3] = [1.0, 0.0, 0.0];
const Z: [f64; 3] = [0.0, 0.0, 1.0];

/// Per-sample variation of one performer.
#[derive(Debug, Clone, Copy)]
struct Performer {
    scale: f64,
    amplitude: f64,
    /// Exponent of the time warp `u ↦ u^γ`.
    warp: f64,
    position: [f64; 2],
    facing_deg: f64,
}

impl Performer {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Performer {
            scale: rng.random_range(0.9..1.1),
            amplitude: rng.random_range(0.8..1.1),
            warp: rng.random_range(0.8..1.25),
            position: [rng.random_range(-0.3..0.3), rng.random_range(2.7..3.3)],
            facing_deg: rng.random_range(-15.0..15.0),
        }
    }
}

/// Pose at normalized time `u ∈ [0,1]` in the body frame.
fn animate(motion: usize, reps: usize, u: f64, a: f64) -> [[f64; 3]; JOINTS] {
    let mut p = rest_pose();
    let cycles = reps as f64;
    match motion {
        0 => {
            let pivot = p[8];
            rotate_about(&mut p, &RIGHT_ARM, pivot, Z, -0.9 * PI * a * (PI * u * cycles).sin().abs());
        }
        1 => {
            let d = 0.35 * a * (PI * u * cycles).sin().abs();
            let pelvis_and_up: Vec<usize> = (0..JOINTS).filter(|j| ![13, 14, 15, 17, 18, 19].contains(j)).collect();
            shift(&mut p, &pelvis_and_up, [0.0, -d, -0.1 * d]);
            shift(&mut p, &[13, 17], [0.0, -0.5 * d, 0.7 * d]);
            let (l, r) = (p[4], p[8]);
            rotate_about(&mut p, &LEFT_ARM, l, X, -1.2 * d / 0.35);
            rotate_about(&mut p, &RIGHT_ARM, r, X, -1.2 * d / 0.35);
        }
        2 => {
            let ramp = (u / 0.2).min(1.0);
            let shoulder = p[4];
            rotate_about(&mut p, &LEFT_ARM, shoulder, Z, 0.8 * PI * ramp);
            let elbow = p[5];
            rotate_about(&mut p, &LEFT_FOREARM, elbow, Z, 0.6 * a * ramp * (2.0 * PI * 3.0 * cycles * u).sin());
        }
        3 => {
            // Walking in place; the approach itself is a translation applied by the caller.
            let swing = 0.4 * a * (2.0 * PI * 2.0 * cycles * u).sin();
            let (hl, hr) = (p[12], p[16]);
            rotate_about(&mut p, &LEFT_LEG, hl, X, swing);
            rotate_about(&mut p, &RIGHT_LEG, hr, X, -swing);
            let (sl, sr) = (p[4], p[8]);
            rotate_about(&mut p, &LEFT_ARM, sl, X, -swing);
            rotate_about(&mut p, &RIGHT_ARM, sr, X, swing);
        }
        4 => {
            let hip = p[16];
            rotate_about(&mut p, &RIGHT_LEG, hip, X, -1.2 * a * (PI * u * cycles).sin().abs());
        }
        5 => {
            let base = p[0];
            let upper: Vec<usize> = UPPER_BODY.iter().copied().filter(|&j| ![0, 12, 16].contains(&j)).collect();
            rotate_about(&mut p, &upper, base, X, 0.9 * a * (PI * u * cycles).sin().abs());
        }
        6 => {
            let h = 0.3 * a * (2.0 * PI * cycles * u).sin().max(0.0);
            let crouch = 0.12 * a * (2.0 * PI * cycles * u).sin().min(0.0).abs();
            shift(&mut p, &(0..JOINTS).collect::<Vec<_>>(), [0.0, h - crouch, 0.0]);
            let (l, r) = (p[4], p[8]);
            rotate_about(&mut p, &LEFT_ARM, l, Z, 2.0 * h / 0.3);
            rotate_about(&mut p, &RIGHT_ARM, r, Z, -2.0 * h / 0.3);
        }
        _ => {
            let angle = 0.9 * PI * a * (PI * u * cycles).sin().abs();
            let (l, r) = (p[4], p[8]);
            rotate_about(&mut p, &LEFT_ARM, l, Z, angle);
            rotate_about(&mut p, &RIGHT_ARM, r, Z, -angle);
        }
    }
    p
}

/// Body frame → camera coordinates for a performer seen from `camera_yaw_deg`.
fn place(p: [f64; 3], who: &Performer, offset: [f64; 2], camera_yaw_deg: f64) -> [f64; 3] {
    let s = who.scale;
    // Face the camera (body +z toward camera = camera −Z), then turn by the facing angle.
    let (sf, cf) = (who.facing_deg.to_radians() + PI).sin_cos();
    let (x, z) = (s * p[0], s * p[2]);
    let (wx, wz) = (cf * x + sf * z, -sf * x + cf * z);
    let world = [wx + who.position[0] + offset[0], s * p[1] - CAMERA_HEIGHT, wz + offset[1]];
    // Camera yaw: rotate the scene about the vertical axis through the scene centre.
    let centre = who.position[1];
    let (sy, cy) = camera_yaw_deg.to_radians().sin_cos();
    let rz = world[2];
    let (rx, rz2) = (cy * world[0] + sy * rz, -sy * world[0] + cy * rz);
    [rx, world[1], centre + rz2]
}

/// Smallest distance from `q` to the segment `a`–`b`.
fn segment_distance(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (px, py) = (a[0] + t * dx - q[0], a[1] + t * dy - q[1]);
    (px * px + py * py).sqrt()
}

const BACKGROUND: f32 = 0.08;
const FIGURE: f32 = 0.85;

/// Draw one frame: anti-aliased thick bones (coverage falls off linearly
/// over one pixel at the stroke edge) and a disc for the head.
fn render_frame(width: usize, height: usize, figures: &[Vec<[f64; 2]>], radii: &[(f64, f64)], out: &mut [f32]) {
    out.fill(BACKGROUND);
    let mut stamp = |a: [f64; 2], b: [f64; 2], r: f64| {
        let x0 = (a[0].min(b[0]) - r - 1.0).floor().max(0.0) as usize;
        let y0 = (a[1].min(b[1]) - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + r + 1.0).ceil().max(0.0) as usize).min(width);
        let y1 = ((a[1].max(b[1]) + r + 1.0).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = segment_distance([x as f64 + 0.5, y as f64 + 0.5], a, b);
                let cover = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
                let v = BACKGROUND + (FIGURE - BACKGROUND) * cover;
                let px = &mut out[y * width + x];
                *px = px.max(v);
            }
        }
    };
    for (pts, &(limb, head)) in figures.iter().zip(radii) {
        for &(c, p) in &BONES {
            stamp(pts[c], pts[p], limb);
        }
        stamp(pts[3], pts[3], head);
    }
}

/// Everything generated for one sample before it is written.
pub struct SyntheticSample {
    pub meta: SampleMeta,
    pub sequence: SkeletonSequence,
    pub ir: IrSequence,
}

pub fn generate_sample(config: &SynthConfig, intrinsics: &Intrinsics, seed: u64, class: usize, index: usize) -> SyntheticSample {
    let cams = config.cameras;
    let meta = SampleMeta {
        setup_id: 1,
        camera_id: (index % cams + 1) as u32,
        performer_id: ((index / cams) % config.performers + 1) as u32,
        replication_id: (index / (cams * config.performers) + 1) as u32,
        action_class: (class + 1) as u32,
    };
    let mut rng = rng_for(derive_path(seed, &[stream::SYNTH, class as u64, index as u64]));
    let frames = rng.random_range(config.frames_min..=config.frames_max);
    let motion = class % MOTIONS.len();
    let reps = 1 + class / MOTIONS.len();
    let two = motion == 3;
    let mut people = vec![Performer::sample(&mut rng)];
    if two {
        let mut partner = Performer::sample(&mut rng);
        partner.position = people[0].position;
        partner.facing_deg = people[0].facing_deg;
        people.push(partner);
    }
    let gap: f64 = rng.random_range(1.4..1.8);
    let yaw = camera_yaw(meta.camera_id);
    let jitter = Normal::new(0.0, 0.01).unwrap();

    let mut tracks: Vec<SubjectTrack> =
        people.iter().map(|_| SubjectTrack { joints3d: Vec::new(), joints2d: Some(Vec::new()) }).collect();
    for t in 0..frames {
        let u = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
        for (s, who) in people.iter().enumerate() {
            let uw = u.powf(who.warp);
            let pose = animate(motion, reps, uw, who.amplitude);
            // Approach: the two performers start `gap` apart and close to ~0.5 m.
            let offset = if two {
                let half = 0.5 * (gap - (gap - 0.5) * uw);
                let side = if s == 0 { -half } else { half };
                [side, 0.0]
            } else {
                [0.0, 0.0]
            };
            let mut placed = *who;
            if two {
                placed.facing_deg += if s == 0 { -90.0 } else { 90.0 };
            }
            for p in pose.iter() {
                let mut q = place(*p, &placed, offset, yaw);
                for v in &mut q {
                    *v += jitter.sample(&mut rng);
                }
                tracks[s].joints3d.push(q);
                tracks[s].joints2d.as_mut().unwrap().push(intrinsics.project(q));
            }
        }
    }
    let sequence = SkeletonSequence::new(frames, JOINTS, tracks).expect("generated skeleton is well formed");

    let (w, h) = (config.width, config.height);
    let noise = Normal::new(0.0, config.noise_sigma.max(0.0)).unwrap();
    let mut pixels = vec![0.0f32; w * h * frames];
    for t in 0..frames {
        let figures: Vec<Vec<[f64; 2]>> = sequence
            .subjects
            .iter()
            .map(|s| s.joints2d.as_ref().unwrap()[t * JOINTS..(t + 1) * JOINTS].to_vec())
            .collect();
        let radii: Vec<(f64, f64)> = sequence
            .subjects
            .iter()
            .map(|s| {
                let depth = s.joints3d[t * JOINTS + 1][2].max(0.5);
                (0.035 * intrinsics.fx / depth, 0.09 * intrinsics.fx / depth)
            })
            .collect();
        let frame = &mut pixels[t * w * h..(t + 1) * w * h];
        render_frame(w, h, &figures, &radii, frame);
        if config.noise_sigma > 0.0 {
            for v in frame.iter_mut() {
                *v = (*v + noise.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
        }
    }
    // Quantize exactly as the 8-bit file will store it.
    for v in &mut pixels {
        *v = (*v * 255.0).round() / 255.0;
    }
    let ir = IrSequence::new(w, h, frames, pixels).expect("rendered frames");
    SyntheticSample { meta, sequence, ir }
}

/// Write the whole dataset under `out`: `skeletons/<id>.skeleton`,
/// `ir/<id>.ir` and `manifest.json`.
pub fn generate_dataset(config: &SynthConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let intrinsics = Intrinsics::for_frame(config.width, config.height);
    for dir in ["skeletons", "ir"] {
        std::fs::create_dir_all(out.join(dir)).at(&out.join(dir))?;
    }
    let mut samples = Vec::new();
    for class in 0..config.classes {
        for index in 0..config.per_class {
            let s = generate_sample(config, &intrinsics, seed, class, index);
            let id = s.meta.name();
            let skeleton = format!("skeletons/{id}.skeleton");
            let ir = format!("ir/{id}.ir");
            write_skeleton_file(&out.join(&skeleton), &from_sequence(&s.sequence, 1920.0 / config.width as f64))?;
            write_raw(&out.join(&ir), &s.ir, BitDepth::Eight)?;
            samples.push(SampleEntry { id, skeleton, ir, meta: s.meta });
        }
    }
    let manifest = DatasetManifest {
        class_count: config.classes,
        class_names: (0..config.classes).map(class_name).collect(),
        samples,
        synthetic: Some(SyntheticInfo {
            seed,
            config: config.clone(),
            intrinsics,
            camera_height_m: CAMERA_HEIGHT,
            camera_yaw_deg: (1..=config.cameras as u32).map(camera_yaw).collect(),
        }),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
