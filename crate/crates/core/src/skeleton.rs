//! Skeleton stream preprocessing: translation to the main subject's
//! spine-mid joint, dataset-wise min-max encoding into a skeleton map,
//! resizing and rotation augmentation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::resample::resize_bilinear;
use crate::tensor::Tensor;

/// Joints per subject in the Kinect v2 skeleton.
pub const JOINTS: usize = 25;
/// Zero-based index of the middle-of-the-spine joint (Kinect v2 joint 2).
pub const SPINE_MID: usize = 1;
/// Subjects stacked into one skeleton map.
pub const MAX_SUBJECTS: usize = 2;
pub const MAX_ROTATION_DEG: f64 = 20.0;

/// One tracked body. Arrays are frame-major: element `t * joints + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTrack {
    /// Camera-space joint positions in meters.
    pub joints3d: Vec<[f64; 3]>,
    /// Joint projections on the depth/IR image plane, in pixels.
    pub joints2d: Option<Vec<[f64; 2]>>,
}

/// A skeleton sequence `S[j, t, k]` for one or two subjects; `subjects[0]`
/// is the main subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    pub frames: usize,
    pub joint_count: usize,
    pub spine_mid_index: usize,
    pub subjects: Vec<SubjectTrack>,
}

impl SkeletonSequence {
    pub fn new(frames: usize, joint_count: usize, subjects: Vec<SubjectTrack>) -> Result<Self> {
        let seq = SkeletonSequence { frames, joint_count, spine_mid_index: SPINE_MID, subjects };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Empty("skeleton sequence has no frames"));
        }
        if self.subjects.is_empty() {
            return Err(Error::InvalidArgument("skeleton sequence has no main subject".into()));
        }
        if self.spine_mid_index >= self.joint_count {
            return Err(Error::InvalidArgument(format!(
                "spine-mid index {} outside {} joints",
                self.spine_mid_index, self.joint_count
            )));
        }
        let n = self.frames * self.joint_count;
        for (s, subject) in self.subjects.iter().enumerate() {
            if subject.joints3d.len() != n {
                return Err(Error::Shape {
                    op: "skeleton",
                    detail: format!("subject {s}: {} joints, expected {n}", subject.joints3d.len()),
                });
            }
            if subject.joints2d.as_ref().is_some_and(|p| p.len() != n) {
                return Err(Error::Shape { op: "skeleton", detail: format!("subject {s}: 2D extents differ from 3D") });
            }
            if subject.joints3d.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("skeleton coordinates"));
            }
        }
        Ok(())
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn joint(&self, subject: usize, frame: usize, joint: usize) -> [f64; 3] {
        self.subjects[subject].joints3d[frame * self.joint_count + joint]
    }

    /// Every 2D projection of every joint, frame and subject.
    pub fn projections(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.subjects.iter().filter_map(|s| s.joints2d.as_ref()).flat_map(|p| p.iter().copied())
    }
}

/// Translate every joint of every subject by the main subject's spine-mid
/// position at the first frame.
pub fn normalize_sequence(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    seq.validate()?;
    let origin = seq.joint(0, 0, seq.spine_mid_index);
    let mut out = seq.clone();
    for subject in &mut out.subjects {
        for p in &mut subject.joints3d {
            for k in 0..3 {
                p[k] -= origin[k];
            }
        }
    }
    Ok(out)
}

/// Global coordinate range used by the min-max map encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateExtrema {
    pub c_min: f64,
    pub c_max: f64,
}

impl CoordinateExtrema {
    pub fn new(c_min: f64, c_max: f64) -> Result<Self> {
        if !(c_min.is_finite() && c_max.is_finite()) {
            return Err(Error::NonFinite("coordinate extrema"));
        }
        if c_min >= c_max {
            return Err(Error::DegenerateExtrema { c_min, c_max });
        }
        Ok(CoordinateExtrema { c_min, c_max })
    }

    /// `(v − c_min)/(c_max − c_min)` clamped to `[0, 1]`.
    pub fn encode(&self, v: f64) -> f64 {
        ((v - self.c_min) / (self.c_max - self.c_min)).clamp(0.0, 1.0)
    }
}

/// Minimum and maximum over all coordinates of all (normalized) sequences.
pub fn compute_extrema<'a>(sequences: impl IntoIterator<Item = &'a SkeletonSequence>) -> Result<CoordinateExtrema> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut seen = false;
    for seq in sequences {
        for subject in seq.subjects.iter().take(MAX_SUBJECTS) {
            for &v in subject.joints3d.iter().flatten() {
                lo = lo.min(v);
                hi = hi.max(v);
                seen = true;
            }
        }
    }
    if !seen {
        return Err(Error::Empty("no sequences for coordinate extrema"));
    }
    CoordinateExtrema::new(lo, hi)
}

/// Three-channel image: channel `k`, row `j` (subject blocks stacked), column `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonMap {
    pub rows: usize,
    pub cols: usize,
    /// Planar `[3][rows][cols]`.
    pub pixels: Vec<f64>,
}

impl SkeletonMap {
    pub fn pixel(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.pixels[(channel * self.rows + row) * self.cols + col]
    }

    /// `[3, rows, cols]` tensor for the pose network.
    pub fn to_tensor<S: Real>(&self) -> Tensor<S> {
        Tensor::from_vec(&[3, self.rows, self.cols], self.pixels.iter().map(|&v| S::of(v)).collect())
            .expect("map extents")
    }
}

/// Encode a normalized sequence as a `2J × frames` map; the second subject
/// block is zero when only one subject is present.
pub fn encode_skeleton_map(seq: &SkeletonSequence, extrema: &CoordinateExtrema) -> Result<SkeletonMap> {
    if seq.frames == 0 {
        return Err(Error::Empty("skeleton sequence has no frames"));
    }
    let j = seq.joint_count;
    let rows = MAX_SUBJECTS * j;
    let cols = seq.frames;
    let mut pixels = vec![0.0; 3 * rows * cols];
    for (s, subject) in seq.subjects.iter().take(MAX_SUBJECTS).enumerate() {
        for t in 0..cols {
            for joint in 0..j {
                let p = subject.joints3d[t * j + joint];
                let row = s * j + joint;
                for k in 0..3 {
                    pixels[(k * rows + row) * cols + t] = extrema.encode(p[k]);
                }
            }
        }
    }
    Ok(SkeletonMap { rows, cols, pixels })
}

/// Bilinear resize to `height × width`.
pub fn resize_map(map: &SkeletonMap, height: usize, width: usize) -> SkeletonMap {
    SkeletonMap {
        rows: height,
        cols: width,
        pixels: resize_bilinear(&map.pixels, 3, map.rows, map.cols, height, width),
    }
}

/// A rotation `R = Rz · Ry · Rx` built from per-axis angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub angles_deg: [f64; 3],
    pub matrix: [[f64; 3]; 3],
}

impl Rotation {
    pub fn from_degrees(x: f64, y: f64, z: f64) -> Self {
        let (sx, cx) = libm::sincos(x.to_radians());
        let (sy, cy) = libm::sincos(y.to_radians());
        let (sz, cz) = libm::sincos(z.to_radians());
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        Rotation { angles_deg: [x, y, z], matrix: matmul3(&rz, &matmul3(&ry, &rx)) }
    }

    /// Independent uniform angles in `[−max_deg, +max_deg]` about each axis.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, max_deg: f64) -> Self {
        let mut angle = || rng.random_range(-max_deg..=max_deg);
        let (x, y, z) = (angle(), angle(), angle());
        Self::from_degrees(x, y, z)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotate every 3D joint about the local origin. 2D projections are left
/// untouched; they condition the infrared crop, not the skeleton map.
pub fn rotate_sequence(seq: &SkeletonSequence, rotation: &Rotation) -> SkeletonSequence {
    let mut out = seq.clone();
    for subject in &mut out.subjects {
        for p in &mut subject.joints3d {
            *p = rotation.apply(*p);
        }
    }
    out
}

/// One random rotation per sequence, ±20° about each axis.
pub fn augment_rotation<R: Rng + ?Sized>(seq: &SkeletonSequence, rng: &mut R) -> (SkeletonSequence, Rotation) {
    let rotation = Rotation::sample(rng, MAX_ROTATION_DEG);
    (rotate_sequence(seq, &rotation), rotation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn sequence(frames: usize, subjects: usize, f: impl Fn(usize, usize, usize) -> [f64; 3]) -> SkeletonSequence {
        let tracks = (0..subjects)
            .map(|s| SubjectTrack {
                joints3d: (0..frames * JOINTS).map(|i| f(s, i / JOINTS, i % JOINTS)).collect(),
                joints2d: None,
            })
            .collect();
        SkeletonSequence::new(frames, JOINTS, tracks).unwrap()
    }

    #[test]
    fn spine_mid_becomes_origin() {
        let seq = sequence(4, 1, |_, t, j| {
            if j == SPINE_MID && t == 0 {
                [1.0, 0.5, 3.0]
            } else {
                [j as f64 * 0.1, t as f64 * 0.2, 2.0 + j as f64 * 0.01]
            }
        });
        let n = normalize_sequence(&seq).unwrap();
        assert_eq!(n.joint(0, 0, SPINE_MID), [0.0, 0.0, 0.0]);
        assert_eq!(normalize_sequence(&n).unwrap(), n);
    }

    #[test]
    fn centered_sequence_unchanged() {
        let seq = sequence(3, 1, |_, t, j| if j == SPINE_MID && t == 0 { [0.0; 3] } else { [0.3, -0.2, t as f64] });
        assert_eq!(normalize_sequence(&seq).unwrap(), seq);
    }

    #[test]
    fn nan_and_missing_subject_rejected() {
        let mut seq = sequence(2, 1, |_, _, _| [0.0, 1.0, 2.0]);
        seq.subjects[0].joints3d[3][1] = f64::NAN;
        assert_eq!(normalize_sequence(&seq), Err(Error::NonFinite("skeleton coordinates")));
        seq.subjects.clear();
        assert!(normalize_sequence(&seq).is_err());
    }

    #[test]
    fn extrema_of_single_sequence() {
        let seq = sequence(2, 1, |_, t, j| [-1.0 + (j % 2) as f64 * 3.0, t as f64, 0.5]);
        let e = compute_extrema([&seq]).unwrap();
        assert_eq!((e.c_min, e.c_max), (-1.0, 2.0));
    }

    #[test]
    fn degenerate_extrema_rejected() {
        let seq = sequence(2, 1, |_, _, _| [0.5; 3]);
        assert!(matches!(compute_extrema([&seq]), Err(Error::DegenerateExtrema { .. })));
        assert!(matches!(compute_extrema(core::iter::empty()), Err(Error::Empty(_))));
    }

    #[test]
    fn extrema_endpoints_map_to_unit_interval() {
        let e = CoordinateExtrema::new(-1.0, 2.0).unwrap();
        assert_eq!(e.encode(-1.0), 0.0);
        assert_eq!(e.encode(2.0), 1.0);
        assert_eq!(e.encode(5.0), 1.0);
        assert_eq!(e.encode(-5.0), 0.0);
    }

    #[test]
    fn one_subject_map_has_zero_second_block() {
        let seq = sequence(5, 1, |_, t, j| [t as f64, j as f64, 1.0]);
        let e = CoordinateExtrema::new(-1.0, 30.0).unwrap();
        let map = encode_skeleton_map(&seq, &e).unwrap();
        assert_eq!((map.rows, map.cols), (50, 5));
        for k in 0..3 {
            for row in JOINTS..2 * JOINTS {
                for t in 0..5 {
                    assert_eq!(map.pixel(k, row, t), 0.0);
                }
            }
        }
        assert_eq!(map.pixel(1, 3, 2), e.encode(3.0));
    }

    #[test]
    fn twenty_degrees_about_z() {
        let r = Rotation::from_degrees(0.0, 0.0, 20.0);
        let p = r.apply([1.0, 0.0, 0.0]);
        assert!((p[0] - 0.939_692_620_785_908_4).abs() < 1e-12);
        assert!((p[1] - 0.342_020_143_325_668_7).abs() < 1e-12);
        assert!(p[2].abs() < 1e-15);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let seq = sequence(3, 2, |s, t, j| [s as f64 + 0.1 * j as f64, t as f64 * 0.3, -0.2 * j as f64]);
        assert_eq!(rotate_sequence(&seq, &Rotation::from_degrees(0.0, 0.0, 0.0)), seq);
    }

    #[test]
    fn sampled_angles_in_range() {
        let mut rng = rng_for(3);
        for _ in 0..1000 {
            let r = Rotation::sample(&mut rng, MAX_ROTATION_DEG);
            assert!(r.angles_deg.iter().all(|a| a.abs() <= 20.0));
        }
    }
}
